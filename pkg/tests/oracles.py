"""Independent reference implementations used only by the tests.

Nothing here touches the tape or the segment kernels: the EGAT forward
is recomputed with dense per-node-pair loops in plain numpy.
"""
import heapq
import math

import numpy as np


def _ln(x, alpha, beta, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return alpha * (x - mu) / math.sqrt(var + eps) + beta


def _mlp(x, W1, b1, W2, b2):
    return np.maximum(x @ W1 + b1, 0.0) @ W2 + b2


def dense_egat(node_x, edge_x, src, dst, P, cfg):
    """Returns (node embeddings, dense scores[l] of shape (N, N, H))."""
    N = node_x.shape[0]
    H, d = cfg.heads, cfg.d_n
    dh = d // H
    x = node_x.copy()
    if not cfg.gate_feature:
        x[:, 11:15] = 0.0
    n = x @ P["in_n.W"] + P["in_n.b"]
    adj = np.zeros((N, N), dtype=bool)  # adj[i, j]: edge j -> i
    e = np.zeros((N, N, d))
    for k, (j, i) in enumerate(zip(src, dst)):
        adj[i, j] = True
        e[i, j] = edge_x[k] @ P["in_e.W"] + P["in_e.b"]
    all_scores = []
    for l in range(cfg.layers):
        p = f"l{l}."
        nh = np.array([_ln(n[i], P[p + "ln_n.alpha"], P[p + "ln_n.beta"]) for i in range(N)])
        eh = np.zeros_like(e)
        a = np.zeros_like(e)
        logits = np.full((N, N, H), -np.inf)
        for i in range(N):
            for j in range(N):
                if not adj[i, j]:
                    continue
                eh[i, j] = _ln(e[i, j], P[p + "ln_e.alpha"], P[p + "ln_e.beta"])
                aij = (nh[i] @ P[p + "W_i"]) * (nh[j] @ P[p + "W_j"])
                if cfg.edge_features:
                    aij = aij + eh[i, j] @ P[p + "W_e"]
                a[i, j] = aij
                for h in range(H):
                    sl = slice(h * dh, (h + 1) * dh)
                    logits[i, j, h] = float(P[p + "b"][sl] @ aij[sl])
        s = np.zeros((N, N, H))
        for i in range(N):
            for h in range(H):
                js = np.flatnonzero(adj[i])
                if js.size == 0:
                    continue
                z = np.exp(logits[i, js, h] - logits[i, js, h].max())
                s[i, js, h] = z / z.sum()
        all_scores.append(s)
        n_new = np.zeros_like(n)
        for i in range(N):
            pooled = np.zeros(2 * d)
            for j in np.flatnonzero(adj[i]):
                vn = nh[j] @ P[p + "W_k"]
                ve = eh[i, j] @ P[p + "W_e_hat"] if cfg.edge_features else np.zeros(d)
                for h in range(H):
                    sl = slice(h * dh, (h + 1) * dh)
                    pooled[sl] += s[i, j, h] * vn[sl]
                    pooled[d + h * dh:d + (h + 1) * dh] += s[i, j, h] * ve[sl]
            n_new[i] = _mlp(n[i] + pooled @ P[p + "W_tilde"], P[p + "mlp_n.W1"], P[p + "mlp_n.b1"],
                            P[p + "mlp_n.W2"], P[p + "mlp_n.b2"])
        e_new = np.zeros_like(e)
        for i in range(N):
            for j in np.flatnonzero(adj[i]):
                e_new[i, j] = _mlp(e[i, j] + a[i, j], P[p + "mlp_e.W1"], P[p + "mlp_e.b1"],
                                   P[p + "mlp_e.W2"], P[p + "mlp_e.b2"])
        n, e = n_new, e_new
    return n, all_scores


def textbook_dijkstra(n, weighted_edges, sources):
    """Plain single-source-per-call Dijkstra, min over the sources."""
    adj = [[] for _ in range(n)]
    for u, v, w in weighted_edges:
        adj[u].append((v, w))
    best = [math.inf] * n
    for s in sources:
        dist = [math.inf] * n
        dist[s] = 0.0
        pq = [(0.0, s)]
        while pq:
            d, u = heapq.heappop(pq)
            if d > dist[u]:
                continue
            for v, w in adj[u]:
                if d + w < dist[v]:
                    dist[v] = d + w
                    heapq.heappush(pq, (dist[v], v))
        best = [min(a, b) for a, b in zip(best, dist)]
    return best


def mann_whitney_auc(scores, labels):
    """P(random positive outscores random negative), ties counting 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == -1]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def brute_force_confusion(labels, predicted):
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for y, p in zip(labels, predicted):
        key = ("t" if (p > 0) == (y > 0) else "f") + ("p" if p > 0 else "n")
        counts[key] += 1
    return counts["tp"], counts["fp"], counts["tn"], counts["fn"]


def permute_graph(g, perm):
    """Relabel node i as perm[i]; edges are re-sorted into canonical order."""
    from egatsym.graph import CircuitGraph
    perm = np.asarray(perm)
    n = g.n_nodes
    inv = np.argsort(perm)
    src, dst = perm[g.src], perm[g.dst]
    order = np.lexsort((src, dst))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    return CircuitGraph(
        name=g.name, node_ids=[g.node_ids[i] for i in inv], kinds=g.kinds[inv], node_x=g.node_x[inv],
        src=src[order], dst=dst[order], edge_x=g.edge_x[order], indptr=np.cumsum(indptr),
        power_nodes=[int(perm[i]) for i in g.power_nodes], ground_nodes=[int(perm[i]) for i in g.ground_nodes],
        devices=[g.devices[i] for i in inv],
        conducting=None if g.conducting is None else g.conducting[order])


# a five-transistor OTA with mirror-image halves: (M1, M2) and (M3, M4) are
# swapped by the automorphism inp<->inn, outn<->outp
SYMMETRIC_OTA = """.SUBCKT ota inp inn outn outp
M1 outn inp tail gnd nch L=1u W=4u
M2 outp inn tail gnd nch L=1u W=4u
M3 outn outn vdd vdd pch L=1u W=8u
M4 outp outp vdd vdd pch L=1u W=8u
M5 tail bias gnd gnd nch L=2u W=8u
R1 bias vdd 10k
.ENDS
"""
