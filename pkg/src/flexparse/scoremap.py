"""Per-location label distributions and the log-terms derived from them.

A ScoreMapSet stores, for every grid cell, a probability distribution over
the label space (background, or a part together with the occlusion /
relation-type assignment of each of its neighbors). compute_terms
marginalizes those distributions into the three grids the scorer needs:

  appearance[i]   log p(part i at cell)
  idpr[(i,j)][t]  log p(neighbor j present with relation type t | part i)
  idod[(i,j)]     log p(neighbor j absent | part i)

Distributions live on disk as float32; all term math runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import PartGraph, build_label_space

__all__ = [
    "ScoreMapSet",
    "TermGrids",
    "LOG_FLOOR",
    "ScoreMapFormatError",
    "ScoreMapDimensionError",
    "ScoreMapNormalizationError",
    "save_scoremaps",
    "load_scoremaps",
    "compute_terms",
]

LOG_FLOOR = -20.0          # natural-log clamp for every term grid
_NORM_TOL = 1e-4           # per-cell distribution mass tolerance
_COND_EPS = 1e-6           # below this part mass, conditionals fall back to uniform


class ScoreMapFormatError(ValueError):
    """The container is structurally malformed."""


class ScoreMapDimensionError(ValueError):
    """The container does not match the declared graph."""


class ScoreMapNormalizationError(ValueError):
    """Some cell's distribution does not sum to one."""


@dataclass
class ScoreMapSet:
    """Dense per-cell distributions over the label space of ``graph``."""

    graph: PartGraph
    width: int
    height: int
    probs: np.ndarray  # (height, width, |U|) float32, each cell sums to 1

    def validate(self) -> None:
        space = build_label_space(self.graph)
        if self.probs.shape != (self.height, self.width, space.size):
            raise ScoreMapDimensionError(
                f"probs shape {self.probs.shape} does not match "
                f"(height, width, labels) = ({self.height}, {self.width}, {space.size})"
            )
        if np.any(self.probs < 0):
            raise ScoreMapNormalizationError("negative probability encountered")
        sums = self.probs.sum(axis=2, dtype=np.float64)
        bad = np.abs(sums - 1.0) > _NORM_TOL
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ScoreMapNormalizationError(
                f"distribution at cell (x={x}, y={y}) sums to {sums[y, x]:.6f}"
            )


@dataclass
class TermGrids:
    """Log-domain term grids shared by scoring and message passing.

    appearance is (K, H, W); idpr[(i, j)] is (T_ij, H, W) with type t at
    index t-1; idod[(i, j)] is (H, W). All values are clamped below at
    LOG_FLOOR.
    """

    graph: PartGraph
    appearance: np.ndarray
    idpr: dict
    idod: dict

    @property
    def shape(self) -> tuple:
        return self.appearance.shape[1:]

    def without_idod(self) -> "TermGrids":
        """Ablation copy with every occlusion-evidence grid zeroed."""
        return TermGrids(
            graph=self.graph,
            appearance=self.appearance,
            idpr=self.idpr,
            idod={d: np.zeros_like(g) for d, g in self.idod.items()},
        )


def save_scoremaps(path, maps: ScoreMapSet) -> None:
    """Write the two-file container: meta.json plus raw float32 probabilities."""
    space = build_label_space(maps.graph)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": maps.width,
        "height": maps.height,
        "label_space_size": space.size,
        "graph": maps.graph.fingerprint(),
        "storage": "f32le",
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    probs = np.ascontiguousarray(maps.probs, dtype="<f4")
    (root / "probs.bin").write_bytes(probs.tobytes())


def load_scoremaps(path) -> ScoreMapSet:
    """Read and validate a score-map container."""
    root = Path(path)
    meta_path = root / "meta.json"
    bin_path = root / "probs.bin"
    if not meta_path.is_file() or not bin_path.is_file():
        raise ScoreMapFormatError(f"{root} is not a score-map container (meta.json/probs.bin missing)")
    try:
        meta = json.loads(meta_path.read_text())
        width, height = int(meta["width"]), int(meta["height"])
        declared = int(meta["label_space_size"])
        fp = meta["graph"]
        edges = [(int(i), int(j)) for i, j in fp["edges"]]
        type_counts = {}
        for key, t in fp["type_counts"].items():
            a, b = key.split("->")
            type_counts[(int(a), int(b))] = int(t)
        graph = PartGraph(parts=int(fp["parts"]), edges=tuple(edges), type_counts=type_counts)
    except (KeyError, ValueError, TypeError) as exc:
        raise ScoreMapFormatError(f"malformed meta.json in {root}: {exc}") from exc
    space = build_label_space(graph)
    if declared != space.size:
        raise ScoreMapDimensionError(
            f"meta declares {declared} labels but the graph implies {space.size}"
        )
    raw = bin_path.read_bytes()
    expected = width * height * space.size * 4
    if len(raw) != expected:
        raise ScoreMapFormatError(
            f"probs.bin holds {len(raw)} bytes, expected {expected}"
        )
    probs = np.frombuffer(raw, dtype="<f4").reshape(height, width, space.size)
    maps = ScoreMapSet(graph=graph, width=width, height=height, probs=probs)
    maps.validate()
    return maps


def _clamped_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOG_FLOOR)


def compute_terms(maps: ScoreMapSet, graph: PartGraph = None) -> TermGrids:
    """Marginalize the cell distributions into appearance / idpr / idod grids.

    For part i the conditional over each neighbor's assignment is the joint
    summed over the other neighbors, divided by p(part i). Where p(part i)
    falls below 1e-6 the conditional is undefined and is replaced by the
    uniform distribution over the T_ij + 1 outcomes.
    """
    if graph is None:
        graph = maps.graph
    if graph.fingerprint() != maps.graph.fingerprint():
        raise ScoreMapDimensionError("score maps were built for a different graph")
    space = build_label_space(graph)
    probs = maps.probs.astype(np.float64)
    H, W = maps.height, maps.width
    K = graph.parts
    appearance = np.empty((K, H, W))
    idpr = {}
    idod = {}
    for g in range(1, K + 1):
        nbrs = graph.neighbors(g)
        block = probs[:, :, space.part_slice(g)].reshape(H, W, *space.block_shape[g])
        p_part = block.reshape(H, W, -1).sum(axis=2)
        appearance[g - 1] = _clamped_log(p_part)
        safe = np.maximum(p_part, _COND_EPS)
        degenerate = p_part < _COND_EPS
        for axis, j in enumerate(nbrs):
            other_axes = tuple(2 + a for a in range(len(nbrs)) if a != axis)
            joint = block.sum(axis=other_axes) if other_axes else block
            cond = joint / safe[:, :, None]
            T = graph.T(g, j)
            uniform = np.log(1.0 / (T + 1))
            logs = _clamped_log(cond)
            logs[degenerate, :] = uniform
            idod[(g, j)] = np.ascontiguousarray(logs[:, :, 0])
            idpr[(g, j)] = np.ascontiguousarray(np.moveaxis(logs[:, :, 1:], 2, 0))
    return TermGrids(graph=graph, appearance=appearance, idpr=idpr, idod=idod)
