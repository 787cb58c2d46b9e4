"""Synchronous federated rounds: broadcast, local training, aggregation.

Aggregation is either FedAvg or one of four single-client selection
schemes, in which the server keeps exactly one client's model per round.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, PartitionPlan
from .model import DenseNet, TrainConfig, accuracy, predict_confidence, train_local
from .seeding import derive_seed


class AggregationStrategy(str, enum.Enum):
    FEDAVG = "fedavg"
    FIRST = "first"
    ROUND_ROBIN = "round_robin"
    MOST_CONFIDENT = "most_confident"
    CORRECT_CONFIDENT = "correct_confident"

    @property
    def selects(self) -> bool:
        return self is not AggregationStrategy.FEDAVG

    @classmethod
    def parse(cls, value) -> "AggregationStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"roundrobin": "round_robin", "mostconfident": "most_confident",
                   "confident": "most_confident",
                   "correctconfident": "correct_confident"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown aggregation strategy {value!r}") from None


@dataclass(frozen=True, eq=False)
class ClientState:
    client_id: int
    shard: np.ndarray
    params: DenseNet


@dataclass(frozen=True)
class RoundRecord:
    round: int
    strategy: AggregationStrategy
    selected_client: int | None
    train_accuracy: float
    test_accuracy: float = math.nan
    mia_accuracy: float = math.nan
    mean_member_confidence: float = math.nan
    mean_nonmember_confidence: float = math.nan

    def __post_init__(self):
        if (self.selected_client is None) == self.strategy.selects:
            raise ValueError("selected_client must be set iff the strategy selects")
        for name in ("train_accuracy", "test_accuracy", "mia_accuracy"):
            value = getattr(self, name)
            if not math.isnan(value) and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")


def client_seed(base_seed: int, round_: int, client_id: int) -> int:
    return derive_seed(base_seed, "client", round_, client_id)


# --- aggregation -------------------------------------------------------------

def fedavg_aggregate(client_params: Sequence[DenseNet],
                     client_sizes: Sequence[int]) -> DenseNet:
    """Sample-count-weighted mean of client parameters.

    Weights are normalized first and the sum runs in list order, so a single
    client is returned bitwise unchanged.
    """
    if not client_params:
        raise ValueError("no client parameters to aggregate")
    if len(client_params) != len(client_sizes):
        raise ValueError("client_params and client_sizes differ in length")
    dims = client_params[0].layer_dims
    if any(p.layer_dims != dims for p in client_params):
        raise ValueError("clients disagree on layer_dims")
    sizes = [int(s) for s in client_sizes]
    if any(s <= 0 for s in sizes):
        raise ValueError("client sizes must be positive")
    total = float(sum(sizes))
    weights = [s / total for s in sizes]
    layers = []
    for k in range(len(dims) - 1):
        w_acc = np.zeros_like(client_params[0].layers[k][0])
        b_acc = np.zeros_like(client_params[0].layers[k][1])
        for weight, net in zip(weights, client_params):
            w_acc += weight * net.layers[k][0]
            b_acc += weight * net.layers[k][1]
        layers.append((w_acc, b_acc))
    return DenseNet(tuple(layers))


# --- selection ---------------------------------------------------------------

def select_first(clients: Sequence[ClientState]) -> int:
    if not clients:
        raise ValueError("no clients")
    return 0


def select_round_robin(round_: int, n_clients: int) -> int:
    if n_clients < 1 or round_ < 0:
        raise ValueError("need n_clients >= 1 and round >= 0")
    return round_ % n_clients


def _argmax_lowest(scores) -> int:
    return int(np.argmax(np.asarray(scores)))


def confidence_scores(clients: Sequence[ClientState], features) -> np.ndarray:
    return np.array([predict_confidence(c.params, features).max(axis=1).mean()
                     for c in clients])


def select_most_confident(clients: Sequence[ClientState], features, labels=None) -> int:
    """Client with the highest mean max-softmax confidence on the reference set."""
    if not clients:
        raise ValueError("no clients")
    if len(features) == 0:
        raise ValueError("empty reference set")
    return clients[_argmax_lowest(confidence_scores(clients, features))].client_id


def correct_confidence_scores(clients: Sequence[ClientState], features, labels,
                              mode: str = "truth") -> np.ndarray:
    """Mean max-confidence restricted to reference samples a client gets right.

    ``mode="truth"`` compares against the true labels; ``mode="agreement"``
    compares against the clients' majority vote (ties to the lowest label).
    A client with no qualifying samples scores 0.
    """
    probs = [predict_confidence(c.params, features) for c in clients]
    preds = np.stack([p.argmax(axis=1) for p in probs])
    if mode == "truth":
        target = np.asarray(labels)
    elif mode == "agreement":
        n_classes = probs[0].shape[1]
        votes = np.zeros((preds.shape[1], n_classes), dtype=np.int64)
        for row in preds:
            votes[np.arange(preds.shape[1]), row] += 1
        target = votes.argmax(axis=1)
    else:
        raise ValueError(f"unknown correct-confident mode {mode!r}")
    scores = []
    for p, pred in zip(probs, preds):
        mask = pred == target
        scores.append(float(p.max(axis=1)[mask].mean()) if mask.any() else 0.0)
    return np.array(scores)


def select_correct_confident(clients: Sequence[ClientState], features, labels,
                             mode: str = "truth") -> int:
    if not clients:
        raise ValueError("no clients")
    if len(features) == 0:
        raise ValueError("empty reference set")
    scores = correct_confidence_scores(clients, features, labels, mode)
    return clients[_argmax_lowest(scores)].client_id


# --- rounds ------------------------------------------------------------------

def train_clients(global_net: DenseNet, plan: PartitionPlan, dataset: Dataset,
                  cfg: TrainConfig, round_: int, workers: int = 1) -> list[ClientState]:
    """Train every client from the same incoming parameters."""
    if plan.source_size != len(dataset):
        raise ValueError(
            f"plan covers {plan.source_size} samples, dataset has {len(dataset)}")

    def work(cid: int) -> ClientState:
        shard = plan.assignments[cid]
        local_cfg = replace(cfg, seed=client_seed(cfg.seed, round_, cid))
        params = train_local(global_net, dataset.features[shard],
                             dataset.labels[shard], local_cfg)
        return ClientState(cid, shard, params)

    ids = range(plan.n_clients)
    if workers > 1 and plan.n_clients > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = {c.client_id: c for c in pool.map(work, ids)}
        return [results[cid] for cid in ids]
    return [work(cid) for cid in ids]


def aggregate(clients: Sequence[ClientState], strategy: AggregationStrategy,
              round_: int, reference=None, correct_mode: str = "truth"):
    """Return ``(global_net, selected_client)`` for one round."""
    strategy = AggregationStrategy.parse(strategy)
    if strategy is AggregationStrategy.FEDAVG:
        return fedavg_aggregate([c.params for c in clients],
                                [len(c.shard) for c in clients]), None
    if strategy is AggregationStrategy.FIRST:
        chosen = select_first(clients)
    elif strategy is AggregationStrategy.ROUND_ROBIN:
        chosen = select_round_robin(round_, len(clients))
    else:
        if reference is None:
            raise ValueError(f"{strategy.value} selection needs a reference set")
        ref_x, ref_y = reference
        if strategy is AggregationStrategy.MOST_CONFIDENT:
            chosen = select_most_confident(clients, ref_x, ref_y)
        else:
            chosen = select_correct_confident(clients, ref_x, ref_y, correct_mode)
    return clients[chosen].params, chosen


def run_round(global_net: DenseNet, plan: PartitionPlan, dataset: Dataset,
              cfg: TrainConfig, strategy, round_: int, reference=None, *,
              test=None, correct_mode: str = "truth", workers: int = 1):
    """One broadcast/train/aggregate cycle.

    Returns ``(new_global, record, clients)``. The record carries train
    accuracy over ``dataset`` and, when ``test=(x, y)`` is given, test
    accuracy; attack fields are left for the caller.
    """
    strategy = AggregationStrategy.parse(strategy)
    clients = train_clients(global_net, plan, dataset, cfg, round_, workers)
    new_global, chosen = aggregate(clients, strategy, round_, reference, correct_mode)
    record = RoundRecord(
        round=round_, strategy=strategy, selected_client=chosen,
        train_accuracy=accuracy(new_global, dataset.features, dataset.labels),
        test_accuracy=(accuracy(new_global, *test) if test is not None else math.nan))
    return new_global, record, clients


RoundHook = Callable[[RoundRecord, DenseNet, list], RoundRecord]


def run_federation(initial: DenseNet, plan: PartitionPlan, dataset: Dataset,
                   cfg: TrainConfig, strategy, rounds: int, reference=None, *,
                   test=None, correct_mode: str = "truth", workers: int = 1,
                   on_round: RoundHook | None = None):
    """Run ``rounds`` sequential rounds and return ``(records, final_net)``.

    ``on_round(record, global_net, clients)`` may return an enriched record
    (the harness uses it to attach attack results).
    """
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    net, records = initial, []
    for r in range(rounds):
        net, record, clients = run_round(net, plan, dataset, cfg, strategy, r,
                                         reference, test=test,
                                         correct_mode=correct_mode, workers=workers)
        if on_round is not None:
            record = on_round(record, net, clients)
        records.append(record)
    return records, net
