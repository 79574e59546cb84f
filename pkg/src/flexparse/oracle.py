"""Brute-force references for the dynamic-programming inference.

enumerate_compositions lists every connected subtree of the part tree;
count_compositions counts them with a product formula; brute_force_best
exhaustively maximizes the composition score over every (composition,
location assignment, type assignment) triple by materializing the joint
score tensor. The scoring here is written directly from the term
definitions and shares no code with the message-passing path.
"""

from __future__ import annotations

import itertools

import numpy as np

from .infer import Composition, PoseEstimate, composition_from_visible
from .model import ModelParams, PartGraph
from .scoremap import TermGrids

__all__ = ["enumerate_compositions", "count_compositions", "brute_force_best"]

GUARD_LIMIT = 10**8


def enumerate_compositions(graph: PartGraph) -> list:
    """Every non-empty connected part subset, each exactly once, sorted."""
    found = set()
    for anchor in range(1, graph.parts + 1):
        start = frozenset([anchor])
        seen = {start}
        queue = [start]
        while queue:
            cur = queue.pop()
            for v in cur:
                for w in graph.neighbors(v):
                    if w > anchor and w not in cur:
                        nxt = cur | {w}
                        if nxt not in seen:
                            seen.add(nxt)
                            queue.append(nxt)
        found.update(seen)
    ordered = sorted(found, key=lambda s: tuple(sorted(s)))
    return [composition_from_visible(graph, s) for s in ordered]


def count_compositions(graph: PartGraph) -> int:
    """Number of connected subtrees, by the rooted product formula.

    With the tree rooted at part 1, g(v) counts connected sets that contain
    v and only descendants of v; every connected set is counted at its
    unique vertex closest to the root.
    """
    order = [1]
    parent = {1: 0}
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for w in graph.neighbors(v):
            if w not in parent:
                parent[w] = v
                order.append(w)
    g = {}
    for v in reversed(order):
        total = 1
        for w in graph.neighbors(v):
            if parent.get(w) == v:
                total *= 1 + g[w]
        g[v] = total
    return int(sum(g.values()))


def _half_relation(graph, params, terms, a, b, t, X, Y):
    """(L, L) matrix of the a->b half of the pairwise term at type t.

    Entry [ca, cb] = <w, psi(l_b - l_a - r)> + w_ab * idpr_ab^t(l_a).
    """
    w = np.asarray(params.deformation_weights[(a, b)][t - 1], dtype=float)
    r = np.asarray(params.mean_offsets[(a, b)][t - 1], dtype=float)
    dx = X[None, :] - X[:, None] - r[0]
    dy = Y[None, :] - Y[:, None] - r[1]
    mat = w[0] * dx + w[1] * dx * dx + w[2] * dy + w[3] * dy * dy
    mat += params.idpr_weights[(a, b)] * terms.idpr[(a, b)][t - 1].ravel()[:, None]
    return mat


def brute_force_best(terms: TermGrids, params: ModelParams, graph: PartGraph):
    """Exhaustive maximum of the composition score; returns (score, estimate).

    Refuses instances whose enumeration budget
    |compositions| * L^K * T^(2(K-1)) exceeds 1e8.
    """
    H, W = terms.shape
    L = H * W
    comps = enumerate_compositions(graph)
    t_max = max(graph.type_counts.values()) if graph.edges else 1
    budget = len(comps) * (L ** graph.parts) * (t_max ** (2 * (graph.parts - 1)))
    if budget > GUARD_LIMIT:
        raise ValueError(f"instance too large for brute force (budget {budget:.3g} > {GUARD_LIMIT:.0e})")
    ys, xs = np.mgrid[0:H, 0:W]
    X = xs.ravel().astype(float)
    Y = ys.ravel().astype(float)
    app = {
        i: params.appearance_weights[i - 1] * terms.appearance[i - 1].ravel()
        for i in range(1, graph.parts + 1)
    }
    half = {}
    for a, b in graph.directed_edges():
        for t in range(1, graph.T(a, b) + 1):
            half[(a, b, t)] = _half_relation(graph, params, terms, a, b, t, X, Y)
    dec_term = {
        (i, j): params.idpr_weights[(i, j)] * terms.idod[(i, j)].ravel()
        for i, j in graph.directed_edges()
    }
    bias_total = {}
    for i, j in graph.directed_edges():
        sub = graph.subtree_parts(j, away_from=i)
        bias_total[(i, j)] = float(sum(params.part_biases[k - 1] for k in sub))

    best_score = -np.inf
    best = None
    for comp in comps:
        verts = sorted(comp.visible)
        axis = {v: k for k, v in enumerate(verts)}
        m = len(verts)
        base = np.zeros((L,) * m)
        for v in verts:
            shape = [1] * m
            shape[axis[v]] = L
            base += app[v].reshape(shape)
        dec_const = 0.0
        for i, j in comp.decoupled_edges:
            dec_const += bias_total[(i, j)]
            shape = [1] * m
            shape[axis[i]] = L
            base += dec_term[(i, j)].reshape(shape)
        base += dec_const
        edge_list = list(comp.edges)
        type_ranges = [
            list(itertools.product(range(1, graph.T(i, j) + 1), range(1, graph.T(j, i) + 1)))
            for i, j in edge_list
        ]
        for assignment in itertools.product(*type_ranges):
            tensor = base.copy()
            for (i, j), (t_ij, t_ji) in zip(edge_list, assignment):
                mat = half[(i, j, t_ij)] + half[(j, i, t_ji)].T
                # axis[i] < axis[j] because edges are stored (i, j) with i < j
                expand = mat.reshape(tuple(L if k in (axis[i], axis[j]) else 1 for k in range(m)))
                tensor += expand
            flat = int(np.argmax(tensor))
            score = float(tensor.ravel()[flat])
            if score > best_score:
                cells = np.unravel_index(flat, tensor.shape)
                locations = {v: (int(X[cells[axis[v]]]), int(Y[cells[axis[v]]])) for v in verts}
                types = {}
                for (i, j), (t_ij, t_ji) in zip(edge_list, assignment):
                    types[(i, j)] = t_ij
                    types[(j, i)] = t_ji
                best_score = score
                best = PoseEstimate(
                    composition=comp,
                    locations=locations,
                    types=types,
                    score=score,
                    root=min(verts),
                )
    return best_score, best
