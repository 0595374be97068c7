"""Dataset handling, the training loop, and inference."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .graph import CircuitGraph, PairSample, SizeStats, SymmetryGroups, build_graph, enumerate_valid_pairs
from .model import GraphBatch, ModelConfig, ModelParams, cosine, forward, logistic_loss, save_checkpoint
from .netlist import Netlist, ParseOptions, read_netlist
from .postprocess import RULES, Removal, apply_rules, device_positions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 0.002
    split_ratio: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie strictly between 0 and 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class TrainingError(RuntimeError):
    pass


@dataclass
class Circuit:
    name: str
    netlist: Netlist
    labels: SymmetryGroups | None


def load_manifest(path: str | Path, options: ParseOptions | None = None) -> list[Circuit]:
    """Read a dataset manifest; netlist/label paths are relative to it."""
    path = Path(path)
    obj = json.loads(path.read_text())
    base = path.parent
    out = []
    for entry in obj["circuits"]:
        nl = read_netlist(base / entry["netlist"], options)
        labels = SymmetryGroups.load(base / entry["labels"]) if entry.get("labels") else None
        out.append(Circuit(entry.get("name", nl.name), nl, labels))
    return out


def split_dataset(circuits: Sequence, ratio: float = 0.75, seed: int = 0) -> tuple[list, list]:
    """Circuit-level train/test partition, deterministic under ``seed``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    if len(circuits) < 2:
        raise ValueError("need at least two circuits to split")
    n_train = min(len(circuits) - 1, max(1, int(round(ratio * len(circuits)))))
    order = np.random.default_rng(seed).permutation(len(circuits))
    train = [circuits[i] for i in sorted(order[:n_train])]
    test = [circuits[i] for i in sorted(order[n_train:])]
    return train, test


def assert_disjoint(train: Sequence[Circuit], test: Sequence[Circuit]) -> None:
    leak = {c.name for c in train} & {c.name for c in test}
    if leak:
        raise AssertionError(f"circuits in both train and test: {sorted(leak)}")


@dataclass
class Prepared:
    circuit: Circuit
    graph: CircuitGraph
    pairs: list[PairSample]


def prepare(circuits: Sequence[Circuit], stats: SizeStats) -> list[Prepared]:
    out = []
    for c in circuits:
        g = build_graph(c.netlist, stats)
        out.append(Prepared(c, g, enumerate_valid_pairs(g, c.labels)))
    return out


@dataclass
class TrainResult:
    params: ModelParams
    stats: SizeStats
    loss_history: list[float]
    seconds: float = 0.0
    steps: int = 0


def _batch_loss(prepared: Sequence[Prepared], params: ModelParams, ci: np.ndarray,
                a: np.ndarray, b: np.ndarray, y: np.ndarray, cache: dict) -> tuple[ad.Tensor, ad.Tape]:
    key = tuple(np.unique(ci).tolist())
    batch = cache.get(key)
    if batch is None:
        batch = GraphBatch.from_graphs([prepared[k].graph for k in key])
        if len(cache) > 64:
            cache.clear()
        cache[key] = batch
    local = np.full(len(prepared), -1, dtype=np.int64)
    local[list(key)] = np.arange(len(key))
    off = batch.offsets[local[ci]]
    with ad.Tape() as tape:
        tr = forward(batch, params)
        sim = cosine(tr.nodes, off + a, off + b)
        loss = ad.mean(logistic_loss(sim, y))
    return loss, tape


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    """One epoch: a fresh permutation of range(n) cut into consecutive batches."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train(circuits: Sequence[Circuit], model_config: ModelConfig | None = None,
          train_config: TrainConfig | None = None, stats: SizeStats | None = None,
          checkpoint: str | Path | None = None, checkpoint_every: int = 0,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Minimise the mean logistic pair loss with Adam.

    Each epoch shuffles every valid pair of every training circuit and
    consumes them in batches; each batch runs one forward pass over the
    union of the circuits it touches.
    """
    mcfg = model_config or ModelConfig()
    tcfg = train_config or TrainConfig()
    t0 = time.perf_counter()
    stats = stats or SizeStats.fit([c.netlist for c in circuits])
    prepared = prepare(circuits, stats)
    ci, pa, pb, py = [], [], [], []
    for k, p in enumerate(prepared):
        if not p.pairs:
            raise ValueError(f"circuit {p.circuit.name} has no valid pairs")
        for s in p.pairs:
            ci.append(k)
            pa.append(s.a)
            pb.append(s.b)
            py.append(s.label)
    if not ci:
        raise ValueError("no training pairs")
    ci, pa, pb, py = (np.array(v, dtype=np.int64) for v in (ci, pa, pb, py))
    params = ModelParams.init(mcfg)
    plist = params.list()
    opt = ad.AdamState.for_params(plist, tcfg.learning_rate)
    rng = np.random.default_rng(tcfg.seed)
    cache: dict = {}
    history = []
    n = ci.size
    for epoch in range(tcfg.epochs):
        total = 0.0
        for idx in iter_batches(n, tcfg.batch_size, rng):
            loss, tape = _batch_loss(prepared, params, ci[idx], pa[idx], pb[idx], py[idx], cache)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {opt.step}: {value}")
            grads = ad.backward(loss, plist, tape)
            ad.adam_step(opt, plist, grads)
            total += value * idx.size
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        if checkpoint and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint, params, stats, {"epoch": epoch + 1, "loss_history": history})
    if checkpoint:
        save_checkpoint(checkpoint, params, stats, {"epoch": tcfg.epochs, "loss_history": history})
    return TrainResult(params, stats, history, time.perf_counter() - t0, opt.step)


# ---------------------------------------------------------------- inference

def infer(graph: CircuitGraph, params: ModelParams, threshold: float | None = None,
          pairs: list[PairSample] | None = None) -> list[PairSample]:
    """Fill similarity and the raw prediction (similarity > threshold)."""
    thr = params.config.similarity_threshold if threshold is None else threshold
    pairs = enumerate_valid_pairs(graph) if pairs is None else pairs
    if not pairs:
        return pairs
    tr = forward(graph, params)
    sim = cosine(tr.nodes, np.array([p.a for p in pairs]), np.array([p.b for p in pairs])).data
    for p, s in zip(pairs, sim):
        p.similarity = float(s)
        p.predicted = 1 if s > thr else -1
    return pairs


@dataclass
class Prediction:
    graph: CircuitGraph
    pairs: list[PairSample]
    removals: list[Removal] = field(default_factory=list)

    def to_json(self) -> dict:
        ids = self.graph.node_ids
        return {
            "circuit": self.graph.name,
            "pairs": [{"a": ids[p.a], "b": ids[p.b], "similarity": p.similarity,
                       "predicted": p.predicted, "label": p.label} for p in self.pairs],
            "removed": [json.loads(r.to_json()) for r in self.removals],
        }


def predict(netlist: Netlist, params: ModelParams, stats: SizeStats, labels: SymmetryGroups | None = None,
            threshold: float | None = None, rules: Sequence[str] | None = RULES,
            rel_tol: float | None = None) -> Prediction:
    """Score every valid pair, then drop predicted positives that break a rule.

    ``rules=None`` or an empty sequence disables post-processing.
    """
    g = build_graph(netlist, stats)
    pairs = infer(g, params, threshold, enumerate_valid_pairs(g, labels))
    removals: list[Removal] = []
    if rules:
        pos = device_positions(g)
        positives = [p for p in pairs if p.predicted == 1]
        kept, removals = apply_rules(positives, g, pos, rules, rel_tol)
        kept_ids = {id(p) for p in kept}
        for p in positives:
            if id(p) not in kept_ids:
                p.predicted = -1
    return Prediction(g, pairs, removals)
