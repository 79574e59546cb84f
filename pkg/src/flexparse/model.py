"""Part-tree model: graph structure, learned parameters, and the label space.

Parts are numbered 1..K and index 0 is reserved for the background. The
graph must be a tree; every edge carries a (directional) count of spatial
relation types, so T_ij and T_ji may differ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "PartGraph",
    "ModelParams",
    "LabelSpace",
    "FeatureLayout",
    "build_label_space",
    "validate_model",
    "params_to_vector",
    "vector_to_params",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class PartGraph:
    """A K-node part tree with per-direction spatial-type counts.

    ``edges`` holds each undirected edge once as (i, j) with i < j;
    ``type_counts`` maps both (i, j) and (j, i) to a positive integer.
    """

    parts: int
    edges: tuple
    type_counts: Mapping
    _adj: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        K = self.parts
        if K < 1:
            raise ValueError("part count must be >= 1")
        edges = tuple(sorted((min(i, j), max(i, j)) for i, j in self.edges))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", edges)
        for i, j in edges:
            if not (1 <= i <= K and 1 <= j <= K) or i == j:
                raise ValueError(f"edge ({i},{j}) out of part range 1..{K}")
        if len(edges) != K - 1:
            raise ValueError(f"a {K}-part tree needs {K - 1} edges, got {len(edges)}")
        adj = {i: [] for i in range(1, K + 1)}
        for i, j in edges:
            adj[i].append(j)
            adj[j].append(i)
        # connectivity: BFS from part 1 must reach everything
        seen = {1}
        queue = [1]
        while queue:
            v = queue.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        if len(seen) != K:
            raise ValueError("graph is not connected")
        for i, j in edges:
            for d in ((i, j), (j, i)):
                t = self.type_counts.get(d)
                if not isinstance(t, (int, np.integer)) or t < 1:
                    raise ValueError(f"missing or invalid type count for direction {d}")
        object.__setattr__(self, "type_counts", dict(self.type_counts))
        object.__setattr__(self, "_adj", {v: tuple(sorted(ws)) for v, ws in adj.items()})

    def neighbors(self, i: int) -> tuple:
        return self._adj[i]

    def directed_edges(self) -> list:
        """Both directions of every edge, in canonical order."""
        out = []
        for i, j in self.edges:
            out.append((i, j))
            out.append((j, i))
        return out

    def T(self, i: int, j: int) -> int:
        return self.type_counts[(i, j)]

    def subtree_parts(self, j: int, away_from: int) -> frozenset:
        """Parts on j's side when the edge (away_from, j) is cut."""
        seen = {away_from, j}
        queue = [j]
        while queue:
            v = queue.pop()
            for w in self._adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        seen.discard(away_from)
        return frozenset(seen)

    def fingerprint(self) -> dict:
        """JSON-friendly structural identity, used by the score-map container."""
        return {
            "parts": self.parts,
            "edges": [[i, j] for i, j in self.edges],
            "type_counts": {f"{i}->{j}": self.type_counts[(i, j)] for i, j in self.directed_edges()},
        }


@dataclass
class ModelParams:
    """All learned scalars and vectors for a PartGraph.

    appearance_weights[i-1] scales the appearance term of part i.
    idpr_weights[(i, j)] is shared between the pairwise-relation term and
    the occlusion term of direction i->j. deformation_weights[(i, j)] is a
    (T_ij, 4) array of coefficients over [dx, dx^2, dy, dy^2]; the dx^2 and
    dy^2 entries must stay strictly negative so the distance transform
    applies. mean_offsets[(i, j)] is (T_ij, 2) in grid cells.
    """

    appearance_weights: np.ndarray
    idpr_weights: dict
    deformation_weights: dict
    mean_offsets: dict
    part_biases: np.ndarray
    svm_bias: float = 0.0

    def copy(self) -> "ModelParams":
        return ModelParams(
            appearance_weights=np.array(self.appearance_weights, dtype=float),
            idpr_weights=dict(self.idpr_weights),
            deformation_weights={d: np.array(w, dtype=float) for d, w in self.deformation_weights.items()},
            mean_offsets={d: np.array(r, dtype=float) for d, r in self.mean_offsets.items()},
            part_biases=np.array(self.part_biases, dtype=float),
            svm_bias=float(self.svm_bias),
        )


@dataclass(frozen=True)
class LabelSpace:
    """Enumeration of every (part, neighbor-assignment) combination plus background.

    Entry 0 is the background. Part g occupies a contiguous block whose
    entries enumerate the cartesian product over g's sorted neighbors j of
    {0, 1, .., T_gj} in lexicographic order (0 means "neighbor j absent",
    v >= 1 means relation type v). Flat indexing is a bijection.
    """

    graph: PartGraph
    size: int
    block_start: dict
    block_shape: dict

    def part_neighbors(self, g: int) -> tuple:
        return self.graph.neighbors(g)

    def encode(self, g: int, m: Sequence[int] = ()) -> int:
        if g == 0:
            if tuple(m) not in ((), (0,)):
                raise ValueError("background has no neighbor assignment")
            return 0
        shape = self.block_shape[g]
        m = tuple(m)
        if len(m) != len(shape):
            raise ValueError(f"part {g} expects {len(shape)} neighbor assignments")
        for v, n in zip(m, shape):
            if not 0 <= v < n:
                raise ValueError(f"assignment {m} out of range for part {g}")
        return self.block_start[g] + int(np.ravel_multi_index(m, shape)) if shape else self.block_start[g]

    def decode(self, u: int):
        if not 0 <= u < self.size:
            raise ValueError(f"flat index {u} out of range")
        if u == 0:
            return 0, ()
        for g in range(1, self.graph.parts + 1):
            start = self.block_start[g]
            size = int(np.prod(self.block_shape[g])) if self.block_shape[g] else 1
            if start <= u < start + size:
                if not self.block_shape[g]:
                    return g, ()
                return g, tuple(int(v) for v in np.unravel_index(u - start, self.block_shape[g]))
        raise AssertionError("unreachable")

    def part_slice(self, g: int) -> slice:
        start = self.block_start[g]
        size = int(np.prod(self.block_shape[g])) if self.block_shape[g] else 1
        return slice(start, start + size)


def build_label_space(graph: PartGraph) -> LabelSpace:
    """Enumerate the full label space: background first, then parts in index order."""
    start = 1  # background occupies entry 0
    block_start = {}
    block_shape = {}
    for g in range(1, graph.parts + 1):
        nbrs = graph.neighbors(g)
        shape = tuple(graph.T(g, j) + 1 for j in nbrs)
        block_start[g] = start
        block_shape[g] = shape
        start += int(np.prod(shape)) if shape else 1
    return LabelSpace(graph=graph, size=start, block_start=block_start, block_shape=block_shape)


def validate_model(graph: PartGraph, params: ModelParams) -> list:
    """Check a parameter set against its graph; returns one diagnostic per violation."""
    diags = []
    K = graph.parts
    if np.asarray(params.appearance_weights).shape != (K,):
        diags.append(f"appearance_weights must have length {K}")
    if np.asarray(params.part_biases).shape != (K,):
        diags.append(f"part_biases must have length {K}")
    for d in graph.directed_edges():
        i, j = d
        T = graph.T(i, j)
        if d not in params.idpr_weights:
            diags.append(f"missing idpr weight for edge ({i},{j})")
        w = params.deformation_weights.get(d)
        if w is None:
            diags.append(f"missing deformation weights for edge ({i},{j})")
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != (T, 4):
                diags.append(f"deformation weights for edge ({i},{j}) must be ({T}, 4), got {w.shape}")
            else:
                for t in range(1, T + 1):
                    if not (w[t - 1, 1] < 0 and w[t - 1, 3] < 0):
                        diags.append(f"non-concave deformation on edge ({i},{j}) type {t}")
        r = params.mean_offsets.get(d)
        if r is None:
            diags.append(f"missing mean offsets for edge ({i},{j})")
        else:
            r = np.asarray(r, dtype=float)
            if r.ndim == 2 and r.shape[1] == 2 and r.shape[0] < T:
                for t in range(r.shape[0] + 1, T + 1):
                    diags.append(f"missing mean offset for type {t} of edge ({i},{j})")
            elif r.shape != (T, 2):
                diags.append(f"mean offsets for edge ({i},{j}) must be ({T}, 2), got {r.shape}")
    extra = set(params.idpr_weights) - set(graph.directed_edges())
    for d in sorted(extra):
        diags.append(f"idpr weight for unknown edge {d}")
    return diags


class FeatureLayout:
    """Fixed packing order of the learnable parameters as one flat vector.

    Order: appearance weights (one per part), then one shared relation /
    occlusion weight per directed edge, then 4 deformation coefficients per
    directed edge and type, then one bias per part. Directed edges run in
    sorted undirected order, (i, j) before (j, i). The SVM bias is not part
    of the vector.
    """

    def __init__(self, graph: PartGraph):
        self.graph = graph
        K = graph.parts
        self._app = {i: i - 1 for i in range(1, K + 1)}
        pos = K
        self._idpr = {}
        for d in graph.directed_edges():
            self._idpr[d] = pos
            pos += 1
        self._def = {}
        for d in graph.directed_edges():
            self._def[d] = pos
            pos += 4 * graph.T(*d)
        self._bias = {}
        for k in range(1, K + 1):
            self._bias[k] = pos
            pos += 1
        self.size = pos

    def app_slot(self, i: int) -> int:
        return self._app[i]

    def idpr_slot(self, i: int, j: int) -> int:
        return self._idpr[(i, j)]

    def def_slots(self, i: int, j: int, t: int) -> slice:
        base = self._def[(i, j)] + 4 * (t - 1)
        return slice(base, base + 4)

    def bias_slot(self, k: int) -> int:
        return self._bias[k]


def params_to_vector(params: ModelParams, graph: PartGraph) -> np.ndarray:
    """Pack the SVM-learnable parameters into the canonical flat vector."""
    lay = FeatureLayout(graph)
    v = np.zeros(lay.size)
    for i in range(1, graph.parts + 1):
        v[lay.app_slot(i)] = params.appearance_weights[i - 1]
    for d in graph.directed_edges():
        v[lay.idpr_slot(*d)] = params.idpr_weights[d]
        w = np.asarray(params.deformation_weights[d], dtype=float)
        for t in range(1, graph.T(*d) + 1):
            v[lay.def_slots(*d, t)] = w[t - 1]
    for k in range(1, graph.parts + 1):
        v[lay.bias_slot(k)] = params.part_biases[k - 1]
    return v


def vector_to_params(vec: np.ndarray, graph: PartGraph, mean_offsets: dict, svm_bias: float = 0.0) -> ModelParams:
    """Inverse of params_to_vector; mean offsets are supplied separately."""
    lay = FeatureLayout(graph)
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (lay.size,):
        raise ValueError(f"expected vector of length {lay.size}, got {vec.shape}")
    app = np.array([vec[lay.app_slot(i)] for i in range(1, graph.parts + 1)])
    idpr = {d: float(vec[lay.idpr_slot(*d)]) for d in graph.directed_edges()}
    deform = {}
    for d in graph.directed_edges():
        T = graph.T(*d)
        deform[d] = np.stack([vec[lay.def_slots(*d, t)] for t in range(1, T + 1)])
    biases = np.array([vec[lay.bias_slot(k)] for k in range(1, graph.parts + 1)])
    return ModelParams(
        appearance_weights=app,
        idpr_weights=idpr,
        deformation_weights=deform,
        mean_offsets={d: np.array(r, dtype=float) for d, r in mean_offsets.items()},
        part_biases=biases,
        svm_bias=float(svm_bias),
    )


def _edge_key(i: int, j: int) -> str:
    return f"{i}->{j}"


def save_model(path, graph: PartGraph, params: ModelParams) -> None:
    """Write the model as a single JSON document with stable key order."""
    doc = {
        "parts": graph.parts,
        "edges": [
            {"i": i, "j": j, "t_ij": graph.T(i, j), "t_ji": graph.T(j, i)}
            for i, j in graph.edges
        ],
        "mean_offsets": {
            _edge_key(*d): [[float(x), float(y)] for x, y in np.asarray(params.mean_offsets[d], dtype=float)]
            for d in graph.directed_edges()
        },
        "deformation_weights": {
            _edge_key(*d): [[float(c) for c in row] for row in np.asarray(params.deformation_weights[d], dtype=float)]
            for d in graph.directed_edges()
        },
        "appearance_weights": [float(w) for w in params.appearance_weights],
        "idpr_weights": {_edge_key(*d): float(params.idpr_weights[d]) for d in graph.directed_edges()},
        "part_biases": [float(b) for b in params.part_biases],
        "svm_bias": float(params.svm_bias),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path):
    """Read a model JSON document; returns (PartGraph, ModelParams)."""
    doc = json.loads(Path(path).read_text())
    type_counts = {}
    edges = []
    for e in doc["edges"]:
        i, j = int(e["i"]), int(e["j"])
        edges.append((i, j))
        type_counts[(i, j)] = int(e["t_ij"])
        type_counts[(j, i)] = int(e["t_ji"])
    graph = PartGraph(parts=int(doc["parts"]), edges=tuple(edges), type_counts=type_counts)
    params = ModelParams(
        appearance_weights=np.array(doc["appearance_weights"], dtype=float),
        idpr_weights={d: float(doc["idpr_weights"][_edge_key(*d)]) for d in graph.directed_edges()},
        deformation_weights={
            d: np.array(doc["deformation_weights"][_edge_key(*d)], dtype=float) for d in graph.directed_edges()
        },
        mean_offsets={d: np.array(doc["mean_offsets"][_edge_key(*d)], dtype=float) for d in graph.directed_edges()},
        part_biases=np.array(doc["part_biases"], dtype=float),
        svm_bias=float(doc["svm_bias"]),
    )
    return graph, params
