"""Train the numpy dense network on synthetic blobs and watch it overfit."""

# %%
import numpy as np

from fedmia.data import generate_synthetic
from fedmia.metrics import confidence_histograms, generalization_gap
from fedmia.model import TrainConfig, accuracy, init_params, train_local

data = generate_synthetic(n_samples=1200, n_features=20, n_classes=5,
                          class_separation=3.0, seed=0)
train, test = np.arange(200), np.arange(200, 1200)
print(data.features.shape, np.bincount(data.labels))

# %% one epoch at a time so the gap can be tracked
net = init_params([20, 64, 5], seed=0)
for epoch in range(1, 201):
    net = train_local(net, data.features[train], data.labels[train],
                      TrainConfig(learning_rate=0.5, batch_size=32, seed=epoch))
    if epoch % 40 == 0:
        tr = accuracy(net, data.features[train], data.labels[train])
        te = accuracy(net, data.features[test], data.labels[test])
        print(f"epoch {epoch:3d}  train {tr:.3f}  test {te:.3f}  gap {generalization_gap(tr, te):+.3f}")

# %% confident when right, hesitant when wrong
hist = confidence_histograms(net, (data.features[train], data.labels[train]),
                             (data.features[test], data.labels[test]))
for pop in hist.values:
    print(f"{pop:16s} n={hist.values[pop].size:4d}  mean max-confidence {hist.mean(pop):.3f}")
