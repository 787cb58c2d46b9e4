"""Shadow-model and threshold attacks against an overfit target."""

# %%
import numpy as np

from fedmia.attack import (build_attack_dataset, calibrate_threshold, evaluate_mia,
                           train_attack, train_shadows)
from fedmia.data import generate_synthetic, membership_split_from
from fedmia.model import TrainConfig, init_params, train_local

data = generate_synthetic(1600, 20, 5, 3.0, seed=1)
members, nonmembers = np.arange(200), np.arange(200, 1200)
adversary_pool = data.subset(np.arange(1200, 1600))
cfg = TrainConfig(learning_rate=0.5, batch_size=32, local_epochs=300)

target = train_local(init_params([20, 64, 5], 0), data.features[members],
                     data.labels[members], cfg)

# %% the adversary mimics the target with shadows it controls
shadows = train_shadows(adversary_pool, 4, [20, 64, 5], cfg, seed=3)
attack_data = build_attack_dataset(shadows, adversary_pool)
print("attack training set:", attack_data.features.shape)

# %% black-box evaluation on balanced member / non-member samples
split = membership_split_from(members, nonmembers, 200, np.random.default_rng(0))
for name, attack in (("shadow", train_attack(attack_data, seed=0)),
                     ("threshold", calibrate_threshold(attack_data))):
    rep = evaluate_mia(attack, target, split, data)
    print(f"{name:9s} accuracy {rep.attack_accuracy:.3f}  "
          f"member conf {rep.member_mean_confidence:.3f}  "
          f"non-member conf {rep.nonmember_mean_confidence:.3f}")

# %% an untrained target leaks nothing
rep = evaluate_mia(train_attack(attack_data, 0), init_params([20, 64, 5], 9), split, data)
print("untrained target:", round(rep.attack_accuracy, 3))
