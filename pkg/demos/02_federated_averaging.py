"""Federated rounds with FedAvg versus the single-client selection rules."""

# %%
import numpy as np

from fedmia.data import generate_synthetic, partition
from fedmia.federation import AggregationStrategy, run_federation
from fedmia.model import TrainConfig, init_params

data = generate_synthetic(1500, 20, 5, 3.0, seed=1)
pool = data.subset(np.arange(600))
reference = (data.features[600:700], data.labels[600:700])
test = (data.features[700:], data.labels[700:])
plan = partition(len(pool), n_clients=5, seed=0)
print("shard sizes:", plan.sizes())

# %%
start = init_params([20, 64, 5], seed=0)
cfg = TrainConfig(learning_rate=0.1, batch_size=16, local_epochs=2, seed=0)
for strategy in AggregationStrategy:
    records, _ = run_federation(start, plan, pool, cfg, strategy, rounds=15,
                                reference=reference, test=test)
    picks = [r.selected_client for r in records]
    print(f"{strategy.value:18s} test acc {records[-1].test_accuracy:.3f}  picks {picks}")
