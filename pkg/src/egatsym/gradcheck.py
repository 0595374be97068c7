"""Finite-difference verification of the full model gradient."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import random_graph
from .model import ModelConfig, ModelParams, cosine, forward, logistic_loss

# small enough that every coordinate of a sampled subset is cheap to difference
GRADCHECK_CONFIG = ModelConfig(layers=2, heads=2, d_n=8, d_e=8)


@dataclass
class GradcheckResult:
    graphs: int
    max_error: float
    seconds: float
    per_graph: list[float]


def graph_loss(graph, params: ModelParams, labels: np.ndarray | None = None):
    """Returns a closure computing a scalar loss touching every parameter."""
    n = graph.n_nodes
    ia, ib = np.triu_indices(n, 1)

    def f():
        nodes = forward(graph, params).nodes
        if ia.size == 0:  # lone node: no pairs, fall back to a norm penalty
            return ad.mean(nodes * nodes)
        return ad.mean(logistic_loss(cosine(nodes, ia, ib), labels))

    return f


def run_gradcheck(seed: int = 0, graphs: int = 20, min_nodes: int = 4, max_nodes: int = 8,
                  config: ModelConfig = GRADCHECK_CONFIG, coords_per_param: int | None = 6,
                  h: float = 1e-4) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    errors = []
    for k in range(graphs):
        g = random_graph(rng, int(rng.integers(min_nodes, max_nodes + 1)), name=f"g{k}")
        params = ModelParams.init(ModelConfig(**{**config.__dict__, "seed": seed * 1000 + k}))
        m = g.n_nodes * (g.n_nodes - 1) // 2
        labels = rng.choice([-1, 1], size=m)
        errors.append(ad.grad_check(graph_loss(g, params, labels), params.list(), h=h,
                                    coords_per_param=coords_per_param, rng=rng))
    return GradcheckResult(graphs, max(errors), time.perf_counter() - t0, errors)
