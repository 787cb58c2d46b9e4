import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedmia.data import generate_synthetic, partition
from fedmia.federation import AggregationStrategy, run_federation
from fedmia.metrics import (CONFIDENCE_BINS, POPULATIONS, agreement_profile,
                            confidence_histograms, generalization_gap, rankdata,
                            spearman, write_bin_csv)
from fedmia.model import DenseNet, TrainConfig, init_params, train_local, zeros_like_dims


def _bias_net(n_features, bias):
    bias = np.asarray(bias, dtype=np.float64)
    return DenseNet(((np.zeros((len(bias), n_features)), bias),))


def _brute_spearman(xs, ys):
    def ranks(v):
        return [sum(1 for u in v if u < x) + (sum(1 for u in v if u == x) + 1) / 2 for x in v]

    rx, ry = ranks(xs), ranks(ys)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5
    return num / den


def test_agreement_identical_clients():
    ds = generate_synthetic(50, 4, 3, 3.0, 0)
    net = init_params([4, 6, 3], 1)
    prof = agreement_profile([net] * 4, net, ds.features, ds.labels)
    assert np.all(prof.fractions == 1.0)
    assert prof.counts.tolist()[-1] == prof.counts.sum()
    assert prof.counts.sum() == len(prof.fractions)
    np.testing.assert_array_equal(prof.levels, [0, 0.25, 0.5, 0.75, 1.0])


def test_agreement_single_client_half():
    # global always predicts class 0; the client predicts 0 only for x0 > 0
    x = np.array([[1.0], [2.0], [-1.0], [-2.0]])
    y = np.zeros(4, dtype=int)
    glob = _bias_net(1, [1.0, 0.0])
    client = DenseNet(((np.array([[1.0], [-1.0]]), np.zeros(2)),))
    prof = agreement_profile([client], glob, x, y)
    assert prof.counts.tolist() == [2, 2]
    assert prof.mean == 0.5


def test_agreement_global_slot_always_agrees():
    ds = generate_synthetic(80, 4, 3, 3.0, 0)
    glob = init_params([4, 6, 3], 0)
    others = [init_params([4, 6, 3], s) for s in (1, 2, 3)]
    with_global = agreement_profile(others + [glob], glob, ds.features, ds.labels)
    alone = agreement_profile(others, glob, ds.features, ds.labels)
    np.testing.assert_allclose(with_global.fractions * 4, alone.fractions * 3 + 1)


def test_agreement_only_counts_correct_samples():
    x = np.zeros((5, 2))
    glob = _bias_net(2, [1.0, 0.0])
    prof = agreement_profile([glob], glob, x, [0, 1, 1, 0, 1])
    assert prof.counts.sum() == 2


def test_agreement_errors():
    with pytest.raises(ValueError):
        agreement_profile([], init_params([2, 2], 0), np.zeros((1, 2)), [0])
    with pytest.raises(ValueError):
        agreement_profile([init_params([2, 3], 0)], init_params([2, 2], 0), np.zeros((1, 2)), [0])


def test_agreement_shift_after_federated_training():
    ds = generate_synthetic(900, 20, 5, 3.0, seed=2)
    train, test = np.arange(300), np.arange(300, 900)
    pool = ds.subset(train)
    last = []

    def hook(rec, net, clients):
        last[:] = clients
        return rec

    _, final = run_federation(init_params([20, 64, 5], 0), partition(300, 5, 0), pool,
                              TrainConfig(0.1, 16, 5, 0), AggregationStrategy.FEDAVG, 30,
                              on_round=hook)
    nets = [c.params for c in last]
    on_train = agreement_profile(nets, final, ds.features[train], ds.labels[train])
    on_test = agreement_profile(nets, final, ds.features[test], ds.labels[test])
    assert on_train.mean > on_test.mean


def test_confidence_uniform_net():
    net = zeros_like_dims([3, 10])
    x = np.random.default_rng(0).normal(size=(12, 3))
    hist = confidence_histograms(net, (x, np.zeros(12, int)), (x[:5], np.ones(5, int)))
    assert len(hist.edges) == CONFIDENCE_BINS + 1
    # 0.1 sits on an edge; numpy puts it in the bin starting there
    k = int(np.searchsorted(hist.edges, 0.1, side="right")) - 1
    assert hist.counts["train_correct"][k] == 12
    assert hist.counts["test_incorrect"][k] == 5
    assert hist.counts["train_correct"].sum() == 12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_confidence_conservation_and_order_invariance(seed):
    rng = np.random.default_rng(seed)
    net = init_params([4, 5, 3], seed % 1000)
    xtr, ytr = rng.normal(size=(30, 4)), rng.integers(0, 3, 30)
    xte, yte = rng.normal(size=(20, 4)), rng.integers(0, 3, 20)
    hist = confidence_histograms(net, (xtr, ytr), (xte, yte))
    assert hist.counts["train_correct"].sum() + hist.counts["train_incorrect"].sum() == 30
    assert hist.counts["test_correct"].sum() + hist.counts["test_incorrect"].sum() == 20
    p, q = rng.permutation(30), rng.permutation(20)
    again = confidence_histograms(net, (xtr[p], ytr[p]), (xte[q], yte[q]))
    for pop in POPULATIONS:
        np.testing.assert_array_equal(hist.counts[pop], again.counts[pop])


def test_confidence_overfit_net():
    ds = generate_synthetic(600, 20, 5, 3.0, seed=1)
    tr, te = np.arange(150), np.arange(150, 600)
    net = train_local(init_params([20, 64, 5], 0), ds.features[tr], ds.labels[tr],
                      TrainConfig(0.5, 32, 200, 0))
    hist = confidence_histograms(net, (ds.features[tr], ds.labels[tr]),
                                 (ds.features[te], ds.labels[te]))
    assert hist.mean("train_correct") > hist.mean("test_correct")
    assert hist.mean("test_correct") > hist.mean("test_incorrect")


def test_confidence_empty_split_rejected():
    net = zeros_like_dims([2, 2])
    with pytest.raises(ValueError):
        confidence_histograms(net, (np.zeros((0, 2)), []), (np.zeros((1, 2)), [0]))


def test_generalization_gap():
    assert generalization_gap(1.0, 0.6) == pytest.approx(0.4)
    assert generalization_gap(0.7, 0.7) == 0.0
    assert generalization_gap(0.5, 0.6) == pytest.approx(-0.1)
    with pytest.raises(ValueError):
        generalization_gap(1.2, 0.5)


def test_spearman_cases():
    assert spearman([1, 2, 3], [1, 2, 3]) == (1.0, False)
    assert spearman([1, 2, 3], [3, 2, 1]).rho == -1.0
    assert spearman([1, 1, 1], [1, 2, 3]) == (0.0, True)
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2])


def test_rankdata_ties():
    np.testing.assert_array_equal(rankdata([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


def test_spearman_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        xs = rng.integers(0, 6, 10).tolist()
        ys = rng.normal(size=10).tolist()
        if len(set(xs)) == 1:
            continue
        assert spearman(xs, ys).rho == pytest.approx(_brute_spearman(xs, ys), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=20, unique=True), st.data())
def test_spearman_monotone_invariance(xs, data):
    ys = data.draw(st.lists(st.floats(-100, 100), min_size=len(xs), max_size=len(xs)))
    assert spearman(xs, xs).rho == pytest.approx(1.0)
    base = spearman(xs, ys)
    warped = spearman([x ** 3 + 2 * x for x in xs], ys)
    assert warped.rho == pytest.approx(base.rho, abs=1e-12)
    assert -1.0 <= base.rho <= 1.0


def test_write_bin_csv(tmp_path):
    net = zeros_like_dims([2, 4])
    x = np.zeros((3, 2))
    hist = confidence_histograms(net, (x, [0, 0, 0]), (x, [1, 1, 1]))
    write_bin_csv(hist.rows(), tmp_path / "c.csv")
    with open(tmp_path / "c.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["bin_lo", "bin_hi", "population", "count"]
    assert len(rows) == 4 * CONFIDENCE_BINS
    assert sum(int(r["count"]) for r in rows) == 6
