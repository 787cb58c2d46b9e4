"""Diagnostics explaining why membership inference works on federated models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import DenseNet, predict_confidence

CONFIDENCE_BINS = 20
POPULATIONS = ("train_correct", "train_incorrect", "test_correct", "test_incorrect")


@dataclass(frozen=True, eq=False)
class AgreementProfile:
    """Fraction of clients agreeing with each globally-correct prediction.

    ``counts[k]`` is the number of globally-correct samples on which exactly
    ``k`` of the ``n_clients`` clients agree, i.e. agreement fraction ``k/n``.
    """

    fractions: np.ndarray
    counts: np.ndarray
    n_clients: int

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_clients + 1) / self.n_clients

    @property
    def mean(self) -> float:
        return float(self.fractions.mean()) if self.fractions.size else float("nan")

    def rows(self, population: str):
        for level, count in zip(self.levels, self.counts):
            yield float(level), float(level), population, int(count)


@dataclass(frozen=True, eq=False)
class ConfidenceHistogram:
    edges: np.ndarray
    counts: dict
    # raw max-confidence values per population, kept for summary statistics
    values: dict

    def mean(self, population: str) -> float:
        v = self.values[population]
        return float(v.mean()) if v.size else float("nan")

    def rows(self):
        for pop in POPULATIONS:
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts[pop]):
                yield float(lo), float(hi), pop, int(c)


def agreement_profile(client_nets: Sequence[DenseNet], global_net: DenseNet,
                      features, labels) -> AgreementProfile:
    if not client_nets:
        raise ValueError("need at least one client net")
    dims = global_net.layer_dims
    if any(net.layer_dims != dims for net in client_nets):
        raise ValueError("client and global nets differ in shape")
    y = np.asarray(labels)
    global_pred = predict_confidence(global_net, features).argmax(axis=1)
    correct = global_pred == y
    x = np.asarray(features)[correct]
    target = global_pred[correct]
    agree = np.zeros(target.shape[0], dtype=np.int64)
    if len(x):
        for net in client_nets:
            agree += predict_confidence(net, x).argmax(axis=1) == target
    n = len(client_nets)
    counts = np.bincount(agree, minlength=n + 1)
    return AgreementProfile(agree / n, counts, n)


def confidence_histograms(net: DenseNet, train, test,
                          bins: int = CONFIDENCE_BINS) -> ConfidenceHistogram:
    """Max-confidence histograms split by data split and correctness.

    ``train`` and ``test`` are ``(features, labels)`` pairs.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, values = {}, {}
    for split, (x, y) in (("train", train), ("test", test)):
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError(f"empty {split} split")
        conf = predict_confidence(net, x)
        top = conf.max(axis=1)
        ok = conf.argmax(axis=1) == y
        for suffix, mask in (("correct", ok), ("incorrect", ~ok)):
            pop = f"{split}_{suffix}"
            values[pop] = top[mask]
            counts[pop] = np.histogram(top[mask], bins=edges)[0]
    return ConfidenceHistogram(edges, counts, values)


def generalization_gap(train_acc: float, test_acc: float) -> float:
    for v in (train_acc, test_acc):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    return train_acc - test_acc


class SpearmanResult(NamedTuple):
    rho: float
    # True when either input is constant; rho is then reported as 0
    degenerate: bool


def rankdata(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v))
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> SpearmanResult:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-D sequences of equal length")
    if len(x) < 3:
        raise ValueError("spearman needs at least 3 points")
    rx, ry = rankdata(x), rankdata(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt((dx ** 2).sum() * (dy ** 2).sum())
    if denom == 0.0:
        return SpearmanResult(0.0, True)
    rho = float(np.clip((dx * dy).sum() / denom, -1.0, 1.0))
    return SpearmanResult(rho, False)


def write_bin_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "population", "count"])
        for lo, hi, pop, count in rows:
            writer.writerow([repr(lo), repr(hi), pop, count])
