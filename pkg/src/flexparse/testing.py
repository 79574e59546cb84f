"""Seeded random instances for self-checks and the test suite."""

from __future__ import annotations

import numpy as np

from .model import ModelParams, PartGraph
from .scoremap import TermGrids

__all__ = [
    "random_tree",
    "random_params",
    "random_terms",
    "random_instance",
    "ORACLE_SIZES",
    "oracle_self_check",
]


def random_tree(rng, K: int, t_low: int = 1, t_high: int = 2) -> PartGraph:
    """Random K-part tree with random per-direction type counts."""
    edges = []
    for v in range(2, K + 1):
        edges.append((int(rng.integers(1, v)), v))
    type_counts = {}
    for i, j in edges:
        type_counts[(i, j)] = int(rng.integers(t_low, t_high + 1))
        type_counts[(j, i)] = int(rng.integers(t_low, t_high + 1))
    return PartGraph(parts=K, edges=tuple(edges), type_counts=type_counts)


def random_params(rng, graph: PartGraph) -> ModelParams:
    deform = {}
    offsets = {}
    idpr = {}
    for d in graph.directed_edges():
        T = graph.T(*d)
        w = np.empty((T, 4))
        w[:, 0] = rng.uniform(-0.3, 0.3, T)
        w[:, 1] = -rng.uniform(0.05, 0.5, T)
        w[:, 2] = rng.uniform(-0.3, 0.3, T)
        w[:, 3] = -rng.uniform(0.05, 0.5, T)
        deform[d] = w
        offsets[d] = rng.uniform(-2.5, 2.5, (T, 2))
        idpr[d] = float(rng.uniform(0.3, 1.5))
    return ModelParams(
        appearance_weights=rng.uniform(0.3, 1.5, graph.parts),
        idpr_weights=idpr,
        deformation_weights=deform,
        mean_offsets=offsets,
        part_biases=rng.uniform(-1.5, -0.1, graph.parts),
        svm_bias=float(rng.uniform(-0.5, 0.5)),
    )


def random_terms(rng, graph: PartGraph, H: int, W: int) -> TermGrids:
    """Random finite log-domain term grids (not derived from a distribution)."""
    appearance = rng.uniform(-6.0, 0.0, (graph.parts, H, W))
    idpr = {}
    idod = {}
    for d in graph.directed_edges():
        idpr[d] = rng.uniform(-4.0, 0.0, (graph.T(*d), H, W))
        idod[d] = rng.uniform(-4.0, 0.0, (H, W))
    return TermGrids(graph=graph, appearance=appearance, idpr=idpr, idod=idod)


# (K, grid, T) combinations that stay inside the brute-force budget guard
ORACLE_SIZES = [
    (2, (7, 7), 2),
    (3, (5, 5), 2),
    (3, (6, 4), 2),
    (4, (4, 4), 2),
    (4, (5, 3), 2),
    (5, (3, 3), 1),
    (5, (3, 2), 2),
    (6, (3, 2), 1),
    (6, (2, 1), 2),
]


def random_instance(rng, sizes=ORACLE_SIZES):
    K, (H, W), T = sizes[int(rng.integers(len(sizes)))]
    graph = random_tree(rng, K, 1, T)
    params = random_params(rng, graph)
    terms = random_terms(rng, graph, H, W)
    return graph, params, terms


def oracle_self_check(seed, trials: int, tol: float = 1e-6):
    """Compare exhaustive search with message passing on random instances.

    Returns (matched, trials); a trial matches when the global best scores
    agree within tol and the backtracked estimate re-scores to the same
    value.
    """
    from .infer import backtrack, score_composition, two_pass_messages
    from .oracle import brute_force_best

    rng = np.random.default_rng(seed)
    matched = 0
    for _ in range(trials):
        graph, params, terms = random_instance(rng)
        table = two_pass_messages(terms, params, graph)
        best_dp = -np.inf
        best_at = None
        for i in sorted(table.s_all):
            grid = table.s_all[i]
            v = float(grid.max())
            if v > best_dp:
                best_dp = v
                y, x = np.unravel_index(int(grid.argmax()), grid.shape)
                best_at = (i, int(x), int(y))
        score_bf, _ = brute_force_best(terms, params, graph)
        est = backtrack(table, best_at[0], (best_at[1], best_at[2]))
        rescored = score_composition(est, terms, params, graph)
        if abs(best_dp - score_bf) < tol and abs(rescored - best_dp) < tol:
            matched += 1
    return matched, trials
