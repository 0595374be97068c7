"""Edge-augmented graph attention network and pair scoring."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EDGE_DIM, NODE_DIM, CircuitGraph, SizeStats

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 3
    heads: int = 5
    d_n: int = 80
    d_e: int = 80
    mlp_hidden_multiplier: int = 2
    similarity_threshold: float = 0.6
    seed: int = 0
    gate_feature: bool = True
    edge_features: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1 or self.d_n % self.heads or self.d_e % self.heads:
            raise ValueError("d_n and d_e must be divisible by heads")
        if self.d_n != self.d_e:
            raise ValueError("d_n must equal d_e")
        if not -1.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must lie in (-1, 1)")
        if self.mlp_hidden_multiplier < 1:
            raise ValueError("mlp_hidden_multiplier must be >= 1")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.d_n, cfg.d_n * cfg.mlp_hidden_multiplier
    shapes = {"in_n.W": (NODE_DIM, d), "in_n.b": (d,), "in_e.W": (EDGE_DIM, d), "in_e.b": (d,)}
    for l in range(cfg.layers):
        p = f"l{l}."
        shapes.update({
            p + "ln_n.alpha": (d,), p + "ln_n.beta": (d,),
            p + "ln_e.alpha": (d,), p + "ln_e.beta": (d,),
            p + "W_i": (d, d), p + "W_j": (d, d), p + "W_e": (d, d), p + "b": (d,),
            p + "W_k": (d, d), p + "W_e_hat": (d, d), p + "W_tilde": (2 * d, d),
        })
        for m in ("mlp_n", "mlp_e"):
            shapes.update({p + m + ".W1": (d, h), p + m + ".b1": (h,),
                           p + m + ".W2": (h, d), p + m + ".b2": (d,)})
    return shapes


class ModelParams:
    """Named parameter tensors in a fixed order."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, t in tensors.items():
            if t.shape != expected[name]:
                raise ValueError(f"{name}: shape {t.shape} != {expected[name]}")
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(config.seed)
        dh = config.d_n // config.heads
        out = {}
        for name, shape in param_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "alpha":
                arr = np.ones(shape)
            elif leaf in ("beta", "b1", "b2") or (leaf == "b" and name.startswith("in_")):
                arr = np.zeros(shape)
            elif leaf == "b":
                arr = _glorot(rng, dh, 1, shape)
            else:
                arr = _glorot(rng, shape[0], shape[1], shape)
            out[name] = Tensor(arr, requires_grad=True, name=name)
        return cls(config, out)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def list(self) -> list[Tensor]:
        return list(self.tensors.values())

    def n_scalars(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), True, k) for k, v in self.tensors.items()})


# ---------------------------------------------------------------- batching

@dataclass
class GraphBatch:
    """Disjoint union of circuit graphs as flat arrays."""

    node_x: np.ndarray
    edge_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.node_x.shape[0]

    @classmethod
    def from_graphs(cls, graphs: Sequence[CircuitGraph]) -> "GraphBatch":
        offs = np.zeros(len(graphs) + 1, dtype=np.int64)
        for k, g in enumerate(graphs):
            offs[k + 1] = offs[k] + g.n_nodes
        return cls(
            node_x=np.concatenate([g.node_x for g in graphs]),
            edge_x=np.concatenate([g.edge_x for g in graphs]).reshape(-1, EDGE_DIM),
            src=np.concatenate([g.src + o for g, o in zip(graphs, offs)]).astype(np.int64),
            dst=np.concatenate([g.dst + o for g, o in zip(graphs, offs)]).astype(np.int64),
            offsets=offs,
        )


# ---------------------------------------------------------------- layers

def layer_norm(x: Tensor, alpha: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Standardize each row over the feature axis, then apply ``alpha*x + beta``."""
    if x.shape[-1] == 0:
        raise ValueError("layer_norm of a zero-length feature vector")
    mu = ad.mean(x, axis=-1, keepdims=True)
    var = ad.variance(x, axis=-1, keepdims=True)
    xhat = (x - mu) / ad.sqrt(var + eps)
    return xhat * alpha + beta


def _mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    hdn = ad.relu(x @ params[prefix + ".W1"] + params[prefix + ".b1"])
    return hdn @ params[prefix + ".W2"] + params[prefix + ".b2"]


@dataclass
class ForwardTrace:
    node_hat: list[Tensor] = field(default_factory=list)
    edge_hat: list[Tensor] = field(default_factory=list)
    a: list[Tensor] = field(default_factory=list)
    scores: list[Tensor] = field(default_factory=list)
    nodes: Tensor | None = None
    edges: Tensor | None = None


def attention_scores(params: ModelParams, layer: int, nh: Tensor, eh: Tensor,
                     src: np.ndarray, dst: np.ndarray, n_nodes: int) -> tuple[Tensor, Tensor]:
    """Per-edge intermediate features ``a`` (E, d) and scores ``s`` (E, H).

    Edge k runs src[k] -> dst[k]; the destination attends over its incoming
    edges, so scores sum to one per destination node and head.
    """
    cfg = params.config
    p = f"l{layer}."
    heads, dh = cfg.heads, cfg.d_n // cfg.heads
    qi = nh @ params[p + "W_i"]
    kj = nh @ params[p + "W_j"]
    a = ad.gather(qi, dst) * ad.gather(kj, src)
    if cfg.edge_features:
        a = a + eh @ params[p + "W_e"]
    logits = ad.sum_(ad.reshape(a * params[p + "b"], (-1, heads, dh)), axis=2)
    s = ad.segment_softmax(logits, dst, n_nodes)
    return a, s


def node_update(params: ModelParams, layer: int, n: Tensor, nh: Tensor, eh: Tensor, s: Tensor,
                src: np.ndarray, dst: np.ndarray) -> Tensor:
    cfg = params.config
    p = f"l{layer}."
    heads, dh = cfg.heads, cfg.d_n // cfg.heads
    n_edges = src.shape[0]
    w = ad.reshape(s, (n_edges, heads, 1))
    vn = ad.gather(nh @ params[p + "W_k"], src)
    vn = ad.reshape(ad.reshape(vn, (n_edges, heads, dh)) * w, (n_edges, cfg.d_n))
    ve = eh @ params[p + "W_e_hat"]
    if not cfg.edge_features:
        ve = ve * 0.0
    ve = ad.reshape(ad.reshape(ve, (n_edges, heads, dh)) * w, (n_edges, cfg.d_e))
    pooled = ad.segment_sum(ad.concat([vn, ve], axis=1), dst, n.shape[0])
    return _mlp(n + pooled @ params[p + "W_tilde"], params, p + "mlp_n")


def edge_update(params: ModelParams, layer: int, e: Tensor, a: Tensor) -> Tensor:
    return _mlp(e + a, params, f"l{layer}.mlp_e")


def forward(batch: GraphBatch | CircuitGraph, params: ModelParams) -> ForwardTrace:
    """Run every layer (LN -> attention -> node update -> edge update)."""
    if isinstance(batch, CircuitGraph):
        batch = GraphBatch.from_graphs([batch])
    if batch.n_nodes == 0:
        raise ValueError("empty graph")
    cfg = params.config
    node_x = batch.node_x
    if not cfg.gate_feature:
        node_x = node_x.copy()
        node_x[:, 11:15] = 0.0
    n = Tensor(node_x) @ params["in_n.W"] + params["in_n.b"]
    e = Tensor(batch.edge_x) @ params["in_e.W"] + params["in_e.b"]
    tr = ForwardTrace()
    for l in range(cfg.layers):
        p = f"l{l}."
        nh = layer_norm(n, params[p + "ln_n.alpha"], params[p + "ln_n.beta"])
        eh = layer_norm(e, params[p + "ln_e.alpha"], params[p + "ln_e.beta"])
        a, s = attention_scores(params, l, nh, eh, batch.src, batch.dst, batch.n_nodes)
        n_next = node_update(params, l, n, nh, eh, s, batch.src, batch.dst)
        e = edge_update(params, l, e, a)
        n = n_next
        tr.node_hat.append(nh)
        tr.edge_hat.append(eh)
        tr.a.append(a)
        tr.scores.append(s)
    tr.nodes, tr.edges = n, e
    return tr


# ---------------------------------------------------------------- pair scoring

def cosine(nodes: Tensor, ia: np.ndarray, ib: np.ndarray) -> Tensor:
    """Cosine similarity of node rows ``ia[k]`` and ``ib[k]``."""
    xa = ad.gather(nodes, ia)
    xb = ad.gather(nodes, ib)
    na = ad.sum_(xa * xa, axis=1)
    nb = ad.sum_(xb * xb, axis=1)
    if np.any(na.data == 0.0) or np.any(nb.data == 0.0):
        raise FloatingPointError("zero-norm embedding in pair similarity")
    return ad.sum_(xa * xb, axis=1) / ad.sqrt(na * nb)


def pair_similarity(trace: ForwardTrace, a: int, b: int) -> float:
    return float(cosine(trace.nodes, np.array([a]), np.array([b])).data[0])


def logistic_loss(similarity: Tensor, labels: np.ndarray) -> Tensor:
    """Elementwise ``log(1 + exp(-label * similarity))``."""
    gs = similarity * Tensor(np.asarray(labels, dtype=np.float64))
    return ad.log(ad.exp(-gs) + 1.0)


def pair_loss(similarity: float, label: int) -> float:
    if label not in (1, -1):
        raise ValueError("label must be +1 or -1")
    return float(np.log1p(np.exp(-label * similarity)))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, params: ModelParams, stats: SizeStats, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(params.config),
            "size_stats": stats.to_json(), "extra": extra or {}}
    arrays = {name: t.data for name, t in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> tuple[ModelParams, SizeStats, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = ModelConfig(**meta["config"])
        if expect is not None and expect != cfg:
            raise ValueError(f"checkpoint config {cfg} does not match expected {expect}")
        tensors = {name: Tensor(z[name], requires_grad=True, name=name) for name in param_shapes(cfg)}
    return ModelParams(cfg, tensors), SizeStats.from_json(meta["size_stats"]), meta["extra"]
