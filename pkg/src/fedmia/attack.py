"""Black-box membership inference with shadow models.

The adversary only ever calls a confidence oracle: a function mapping a
batch of inputs to softmax vectors. Target weights, gradients and client
identities are never passed into this module.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, replace
from typing import Callable, Union

import numpy as np

from .data import Dataset, MembershipSplit
from .model import DenseNet, TrainConfig, init_params, predict_confidence, train_local
from .seeding import derive_seed

ConfidenceOracle = Callable[[np.ndarray], np.ndarray]
Target = Union[DenseNet, ConfidenceOracle]


def as_oracle(target: Target) -> ConfidenceOracle:
    """Wrap a model so that only its prediction API is reachable."""
    if isinstance(target, DenseNet):
        net = target
        return lambda x: predict_confidence(net, x)
    if callable(target):
        return target
    raise TypeError(f"cannot query {type(target).__name__}")


@dataclass(frozen=True, eq=False)
class Shadow:
    net: DenseNet
    members: np.ndarray
    nonmembers: np.ndarray


class AttackKind(str, enum.Enum):
    SHADOW = "shadow"
    THRESHOLD = "threshold"


@dataclass(frozen=True, eq=False)
class AttackDataset:
    features: np.ndarray
    membership: np.ndarray
    # (shadow id, pool index) for every row; None for hand-built datasets
    origin: np.ndarray | None = None

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        m = np.asarray(self.membership, dtype=np.int64)
        if f.shape[0] != m.shape[0]:
            raise ValueError("features and membership differ in length")
        if np.setdiff1d(m, [0, 1]).size:
            raise ValueError("membership labels must be 0 or 1")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "membership", m)

    def __len__(self) -> int:
        return self.membership.shape[0]

    @property
    def balanced(self) -> bool:
        return 2 * int(self.membership.sum()) == len(self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"f{j}" for j in range(self.features.shape[1])] + ["member"])
            for row, m in zip(self.features, self.membership):
                writer.writerow([repr(float(v)) for v in row] + [int(m)])

    @classmethod
    def from_csv(cls, path) -> "AttackDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        if header[-1] != "member":
            raise ValueError(f"{path}: last column must be 'member'")
        return cls(np.array([[float(v) for v in r[:-1]] for r in rows]),
                   np.array([int(r[-1]) for r in rows]))


@dataclass(frozen=True, eq=False)
class AttackModel:
    kind: AttackKind
    weights: np.ndarray | None = None
    bias: float = 0.0
    # feature standardization applied before the logistic model
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.kind is AttackKind.THRESHOLD:
            if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
                raise ValueError("threshold must lie in [0, 1]")
        elif self.weights is None:
            raise ValueError("shadow attack needs weights")

    @property
    def n_features(self) -> int | None:
        return None if self.weights is None else self.weights.shape[0]

    def scores(self, features) -> np.ndarray:
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.kind is AttackKind.THRESHOLD:
            return f[:, 0]
        if f.shape[1] != self.n_features:
            raise ValueError(f"attack expects {self.n_features} features, got {f.shape[1]}")
        return _sigmoid(((f - self.offset) / self.scale) @ self.weights + self.bias)

    def predict(self, features) -> np.ndarray:
        s = self.scores(features)
        cut = self.threshold if self.kind is AttackKind.THRESHOLD else 0.5
        return (s >= cut).astype(np.int64)


@dataclass(frozen=True)
class MiaReport:
    attack_accuracy: float
    member_mean_confidence: float
    nonmember_mean_confidence: float
    n_eval: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MiaReport":
        return cls(**json.loads(text))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def extract_features(conf) -> np.ndarray:
    """Sort confidences in descending order, dropping class identity."""
    return -np.sort(-np.asarray(conf, dtype=np.float64), axis=-1)


def train_shadows(shadow_pool: Dataset, k_shadows: int, architecture,
                  cfg: TrainConfig, seed: int) -> list[Shadow]:
    """Train ``k_shadows`` replicas, each on a random half of the pool."""
    if k_shadows < 1:
        raise ValueError("k_shadows must be at least 1")
    n = len(shadow_pool)
    half = n // 2
    if half < 2:
        raise ValueError(f"shadow pool of {n} samples is too small")
    shadows = []
    for s in range(k_shadows):
        perm = np.random.default_rng(derive_seed(seed, "shadow-split", s)).permutation(n)
        members, nonmembers = np.sort(perm[:half]), np.sort(perm[half:])
        net = init_params(architecture, derive_seed(seed, "shadow-init", s))
        net = train_local(net, shadow_pool.features[members], shadow_pool.labels[members],
                          replace(cfg, seed=derive_seed(seed, "shadow-train", s)))
        shadows.append(Shadow(net, members, nonmembers))
    return shadows


def build_attack_dataset(shadows, shadow_pool: Dataset) -> AttackDataset:
    """Label every pool sample by each shadow's membership, balanced exactly.

    Per shadow, the larger of the member/non-member groups is truncated (in
    index order) to the size of the smaller one.
    """
    if not shadows:
        raise ValueError("no shadow models")
    feats, labels, origin = [], [], []
    for sid, shadow in enumerate(shadows):
        m = min(len(shadow.members), len(shadow.nonmembers))
        for flag, idx in ((1, shadow.members[:m]), (0, shadow.nonmembers[:m])):
            conf = predict_confidence(shadow.net, shadow_pool.features[idx])
            feats.append(extract_features(conf))
            labels.append(np.full(m, flag))
            origin.append(np.column_stack([np.full(m, sid), idx]))
    return AttackDataset(np.vstack(feats), np.concatenate(labels), np.vstack(origin))


def train_attack(data: AttackDataset, seed: int, epochs: int = 2000,
                 learning_rate: float = 0.5) -> AttackModel:
    """Logistic regression by full-batch gradient descent on standardized features."""
    if len(data) == 0:
        raise ValueError("empty attack dataset")
    if np.unique(data.membership).size < 2:
        raise ValueError("attack dataset contains a single membership class")
    x, y = data.features, data.membership.astype(np.float64)
    offset = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    z = (x - offset) / scale
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        err = _sigmoid(z @ w + b) - y
        w -= learning_rate * (z.T @ err) / n
        b -= learning_rate * err.mean()
    return AttackModel(AttackKind.SHADOW, weights=w, bias=float(b),
                       offset=offset, scale=scale)


def threshold_scan(scores, membership):
    """Every observed score as a cut, with the balanced accuracy it achieves.

    Returns ``(candidates, accuracies)`` with candidates ascending.
    """
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(membership, dtype=np.int64)
    n_pos, n_neg = int(m.sum()), int(len(m) - m.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both members and non-members")
    order = np.argsort(s, kind="stable")
    s_sorted, m_sorted = s[order], m[order]
    cands, first = np.unique(s_sorted, return_index=True)
    # samples strictly below each candidate are predicted non-member
    pos_below = np.concatenate([[0], np.cumsum(m_sorted)])[first]
    neg_below = first - pos_below
    tpr = (n_pos - pos_below) / n_pos
    tnr = neg_below / n_neg
    return cands, 0.5 * (tpr + tnr)


def calibrate_threshold(data: AttackDataset) -> AttackModel:
    """Best cut on max-confidence; ties resolve to the smallest threshold."""
    if len(data) == 0:
        raise ValueError("empty attack dataset")
    cands, acc = threshold_scan(data.features[:, 0], data.membership)
    best = int(np.argmax(acc))
    tau = float(np.clip(cands[best], 0.0, 1.0))
    return AttackModel(AttackKind.THRESHOLD, threshold=tau)


def evaluate_mia(attack: AttackModel, target: Target, split: MembershipSplit,
                 dataset: Dataset) -> MiaReport:
    """Attack accuracy over the split's balanced evaluation subsets."""
    if split.eval_size == 0:
        raise ValueError("membership split has no evaluation samples")
    query = as_oracle(target)
    conf_in = np.asarray(query(dataset.features[split.member_eval]))
    conf_out = np.asarray(query(dataset.features[split.nonmember_eval]))
    pred_in = attack.predict(extract_features(conf_in))
    pred_out = attack.predict(extract_features(conf_out))
    correct = int(pred_in.sum()) + int((1 - pred_out).sum())
    n_eval = len(pred_in) + len(pred_out)
    return MiaReport(
        attack_accuracy=correct / n_eval,
        member_mean_confidence=float(conf_in.max(axis=1).mean()),
        nonmember_mean_confidence=float(conf_out.max(axis=1).mean()),
        n_eval=n_eval)
