import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedmia.data import (BadMagicError, CountMismatchError, Dataset,
                         TruncatedFileError, generate_synthetic, load_idx,
                         make_membership_split, partition, read_csv, write_csv,
                         write_idx)
from fedmia.model import TrainConfig, accuracy, init_params, train_local


def _write_pair(tmp_path, images, labels, img_magic=0x803, lbl_magic=0x801):
    n, r, c = images.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(struct.pack(">4I", img_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">2I", lbl_magic, len(labels)) + bytes(labels))
    return ip, lp


@pytest.fixture
def tiny_idx(tmp_path):
    images = np.arange(16, dtype=np.uint8).reshape(4, 2, 2) * 17
    return _write_pair(tmp_path, images, [0, 1, 2, 1]), images


def test_load_idx_tiny(tiny_idx):
    (ip, lp), images = tiny_idx
    ds = load_idx(ip, lp)
    assert ds.features.shape == (4, 4)
    assert ds.num_classes == 3
    np.testing.assert_array_equal(ds.labels, [0, 1, 2, 1])
    np.testing.assert_array_equal(ds.features, images.reshape(4, 4) / 255.0)
    assert ds.features.min() >= 0 and ds.features.max() <= 1


def test_load_idx_bad_magic(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1], img_magic=0x801)
    with pytest.raises(BadMagicError, match="bad magic"):
        load_idx(ip, lp)


def test_load_idx_truncated(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1, 1])
    ip.write_bytes(ip.read_bytes()[:-2])
    with pytest.raises(TruncatedFileError):
        load_idx(ip, lp)
    ip, lp = _write_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1, 1])
    lp.write_bytes(lp.read_bytes()[:6])
    with pytest.raises(TruncatedFileError, match="header"):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1])
    with pytest.raises(CountMismatchError):
        load_idx(ip, lp)


def test_load_idx_mnist_shaped_header(tmp_path):
    # same header fields as the official train-images/train-labels files
    n = 60000
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    labels = (np.arange(n) % 10).astype(np.uint8)
    ip, lp = _write_pair(tmp_path, images, labels.tobytes())
    ds = load_idx(ip, lp)
    assert ds.features.shape == (60000, 784)
    assert ds.num_classes == 10 and ds.image_shape == (28, 28)


@pytest.mark.skipif(not os.environ.get("FEDMIA_MNIST_DIR"),
                    reason="set FEDMIA_MNIST_DIR to the official MNIST files")
def test_load_official_mnist():
    root = Path(os.environ["FEDMIA_MNIST_DIR"])
    ds = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    assert ds.features.shape == (60000, 784) and ds.num_classes == 10


def test_idx_errors_are_distinct():
    assert len({BadMagicError, TruncatedFileError, CountMismatchError}) == 3
    assert not issubclass(BadMagicError, TruncatedFileError)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_idx_round_trip_bit_exact(tmp_path_factory, n, rows, cols, seed):
    tmp = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n).tolist()
    ip, lp = _write_pair(tmp, images, labels)
    ds = load_idx(ip, lp)
    write_idx(ds, tmp / "i2", tmp / "l2")
    assert (tmp / "i2").read_bytes() == ip.read_bytes()
    assert (tmp / "l2").read_bytes() == lp.read_bytes()
    assert load_idx(tmp / "i2", tmp / "l2", num_classes=ds.num_classes).equals(ds)


def test_synthetic_deterministic():
    a = generate_synthetic(100, 2, 2, 4.0, seed=7)
    b = generate_synthetic(100, 2, 2, 4.0, seed=7)
    assert a.equals(b)
    assert not a.equals(generate_synthetic(100, 2, 2, 4.0, seed=8))


def test_synthetic_balanced():
    ds = generate_synthetic(90, 5, 3, 3.0, seed=1)
    assert np.bincount(ds.labels).tolist() == [30, 30, 30]
    counts = np.bincount(generate_synthetic(101, 5, 4, 3.0, seed=1).labels)
    assert counts.max() - counts.min() <= 1


def test_synthetic_in_unit_box():
    ds = generate_synthetic(200, 3, 4, 2.0, seed=3)
    assert ds.features.min() == 0.0 and ds.features.max() == 1.0


def test_synthetic_separable_by_linear_model():
    # oracle: a linear softmax model (no hidden layer) trained on the blobs
    ds = generate_synthetic(100, 2, 2, 10.0, seed=7)
    net = train_local(init_params([2, 2], 0), ds.features, ds.labels,
                      TrainConfig(learning_rate=1.0, batch_size=10, local_epochs=200))
    assert accuracy(net, ds.features, ds.labels) >= 0.99


def test_synthetic_class_means_separation():
    # before scaling, the simplex means are exactly `separation` apart; after
    # min-max scaling the empirical class centroids stay clearly apart
    ds = generate_synthetic(3000, 4, 3, 6.0, seed=0)
    cents = np.array([ds.features[ds.labels == c].mean(0) for c in range(3)])
    d = np.linalg.norm(cents[:, None] - cents[None], axis=-1)
    off = d[np.triu_indices(3, 1)]
    assert off.min() > 0.3 and off.max() / off.min() < 1.2


def test_synthetic_low_dim_many_classes():
    ds = generate_synthetic(60, 2, 6, 3.0, seed=0)
    assert ds.num_classes == 6 and len(ds) == 60


def test_synthetic_preconditions():
    with pytest.raises(ValueError):
        generate_synthetic(100, 2, 1, 3.0, 0)
    with pytest.raises(ValueError):
        generate_synthetic(2, 2, 3, 3.0, 0)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(30, 3, 3, 2.0, seed=4)
    write_csv(ds, tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "f0,f1,f2,label"
    assert read_csv(tmp_path / "d.csv", num_classes=3).equals(ds)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)


def test_partition_identity():
    plan = partition(10, 1, seed=0)
    assert plan.assignments[0].tolist() == list(range(10))


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_partition_sizes_forced(seed):
    assert sorted(partition(10, 3, seed).sizes(), reverse=True) == [4, 3, 3]
    # remainder goes to the lowest client ids
    assert partition(10, 3, seed).sizes() == [4, 3, 3]


def test_partition_thousand():
    plan = partition(1000, 10, seed=5)
    sets = [set(a.tolist()) for a in plan.assignments]
    assert all(len(s) == 100 for s in sets)
    for i in range(10):
        for j in range(i + 1, 10):
            assert not sets[i] & sets[j]
    assert set().union(*sets) == set(range(1000))


def test_partition_rejects_too_many_clients():
    with pytest.raises(ValueError):
        partition(3, 4, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 300).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, 10**6))))
def test_partition_property(args):
    n_total, n_clients, seed = args
    plan = partition(n_total, n_clients, seed)
    flat = np.concatenate(plan.assignments)
    assert sorted(flat.tolist()) == list(range(n_total))
    sizes = plan.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert plan.n_clients == n_clients and plan.source_size == n_total


def test_membership_split():
    ds = generate_synthetic(100, 2, 2, 3.0, seed=0)
    a = make_membership_split(ds, 0.5, 50, seed=3)
    assert len(a.member_eval) == len(a.nonmember_eval) == 50
    assert not set(a.member_indices) & set(a.nonmember_indices)
    assert set(a.member_eval) <= set(a.member_indices)
    assert set(a.nonmember_eval) <= set(a.nonmember_indices)
    b = make_membership_split(ds, 0.5, 50, seed=3)
    np.testing.assert_array_equal(a.member_eval, b.member_eval)
    np.testing.assert_array_equal(a.nonmember_eval, b.nonmember_eval)
    with pytest.raises(ValueError):
        make_membership_split(ds, 0.5, 60, seed=3)


@settings(max_examples=50, deadline=None)
@given(st.integers(8, 200), st.floats(0.3, 0.7), st.integers(0, 10**6))
def test_membership_split_disjoint(n, frac, seed):
    ds = generate_synthetic(n, 2, 2, 3.0, seed=0)
    split = make_membership_split(ds, frac, 1, seed)
    assert np.intersect1d(split.member_indices, split.nonmember_indices).size == 0
    assert len(split.member_indices) + len(split.nonmember_indices) == n
