"""Exact max-product inference over every connected-subtree composition.

A person may be any connected subtree of the part tree (an occlusion
pattern); the score of a composition adds appearance terms for its parts,
pairwise relation terms for its edges, and an occlusion charge (bias sum
plus local occlusion evidence) for every edge it cuts. two_pass_messages
computes, for every part i and cell, the best score over all compositions
that contain part i there, using one upward and one downward sweep so each
directed edge message is built exactly once. Backtracking recovers the
composition, locations and relation types; detect thresholds the per-cell
scores and prunes duplicates with part-based non-maximum suppression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gdt import QuadPenalty, dt2d_max
from .model import ModelParams, PartGraph
from .scoremap import TermGrids

__all__ = [
    "Composition",
    "PoseEstimate",
    "MessageTable",
    "composition_from_visible",
    "score_composition",
    "two_pass_messages",
    "single_pass_messages",
    "backtrack",
    "detect",
    "save_detections",
    "load_detections",
]


@dataclass(frozen=True)
class Composition:
    """A connected subtree of the part tree plus the edges it cut away."""

    visible: frozenset
    edges: tuple            # tree edges inside the visible set, (i, j) with i < j
    decoupled_edges: tuple  # directed (i, j): i visible, j not


def composition_from_visible(graph: PartGraph, visible) -> Composition:
    """Build a Composition for a visible part set, checking connectivity."""
    vis = frozenset(int(v) for v in visible)
    if not vis:
        raise ValueError("a composition needs at least one visible part")
    for v in vis:
        if not 1 <= v <= graph.parts:
            raise ValueError(f"part {v} out of range")
    anchor = min(vis)
    seen = {anchor}
    queue = [anchor]
    while queue:
        v = queue.pop()
        for w in graph.neighbors(v):
            if w in vis and w not in seen:
                seen.add(w)
                queue.append(w)
    if seen != vis:
        raise ValueError(f"visible set {sorted(vis)} is not connected")
    edges = tuple((i, j) for i, j in graph.edges if i in vis and j in vis)
    decoupled = tuple(
        d for d in graph.directed_edges() if d[0] in vis and d[1] not in vis
    )
    return Composition(visible=vis, edges=edges, decoupled_edges=decoupled)


@dataclass
class PoseEstimate:
    """One detected person: which parts are visible, where, and how related."""

    composition: Composition
    locations: dict          # part -> (x, y)
    types: dict              # directed (i, j) on composition edges -> type index
    score: float
    root: int

    def visible_parts(self) -> frozenset:
        return self.composition.visible


@dataclass
class _Message:
    """Directed message k -> i, tabulated over receiver cells.

    decouple marks cells where cutting k's subtree beats keeping it;
    src[y, x] = (y_k, x_k) and t_ik / t_ki are the maximizing assignment
    when it is kept.
    """

    score: np.ndarray
    decouple: np.ndarray
    src: np.ndarray
    t_ik: np.ndarray
    t_ki: np.ndarray


@dataclass
class MessageTable:
    """All directed messages plus per-part combined score grids."""

    graph: PartGraph
    params: ModelParams
    terms: TermGrids
    messages: dict       # directed (k, i) -> _Message
    s_all: dict          # part i -> (H, W) best score over compositions containing i
    bias_sums: dict      # directed (i, j) -> sum of biases over j's cut subtree
    message_count: int = 0


def _quad_feature(delta, offset):
    dx = delta[0] - offset[0]
    dy = delta[1] - offset[1]
    return np.array([dx, dx * dx, dy, dy * dy])


def bias_sums(graph: PartGraph, params: ModelParams) -> dict:
    """For every directed edge (i, j): total bias of the parts cut with j."""
    out = {}
    for i, j in graph.directed_edges():
        sub = graph.subtree_parts(j, away_from=i)
        out[(i, j)] = float(sum(params.part_biases[k - 1] for k in sub))
    return out


def score_composition(est: PoseEstimate, terms: TermGrids, params: ModelParams, graph: PartGraph) -> float:
    """Total score of an estimate: appearance + pairwise relations + occlusion charges."""
    H, W = terms.shape
    comp = est.composition
    total = 0.0
    for i in comp.visible:
        x, y = est.locations[i]
        if not (0 <= x < W and 0 <= y < H):
            raise ValueError(f"part {i} location ({x},{y}) outside the {W}x{H} grid")
        total += params.appearance_weights[i - 1] * terms.appearance[i - 1, y, x]
    for i, j in comp.edges:
        xi, yi = est.locations[i]
        xj, yj = est.locations[j]
        for (a, b), (xa, ya), (xb, yb) in (((i, j), (xi, yi), (xj, yj)), ((j, i), (xj, yj), (xi, yi))):
            t = est.types[(a, b)]
            if not 1 <= t <= graph.T(a, b):
                raise ValueError(f"type {t} out of range for edge ({a},{b})")
            w_def = params.deformation_weights[(a, b)][t - 1]
            r = params.mean_offsets[(a, b)][t - 1]
            psi = _quad_feature((xb - xa, yb - ya), r)
            total += float(np.dot(w_def, psi))
            total += params.idpr_weights[(a, b)] * terms.idpr[(a, b)][t - 1, ya, xa]
    bsums = bias_sums(graph, params)
    for i, j in comp.decoupled_edges:
        x, y = est.locations[i]
        total += bsums[(i, j)] + params.idpr_weights[(i, j)] * terms.idod[(i, j)][y, x]
    return float(total)


def _pair_penalty(w_fwd, r_fwd, w_rev, r_rev):
    """Fold both directed deformation quadratics of an edge into one penalty.

    With d = l_child - l_parent, the pairwise deformation score is
    <w_fwd, psi(d - r_fwd)> + <w_rev, psi(-d - r_rev)>. Both are concave
    quadratics in d, so their sum is one QuadPenalty plus a constant.
    """
    pieces = []
    const = 0.0
    for k in (0, 2):  # x block then y block of [lin, quad] pairs
        c1, c2 = float(w_fwd[k]), float(w_fwd[k + 1])
        d1, d2 = float(w_rev[k]), float(w_rev[k + 1])
        r1, r2 = float(r_fwd[k // 2]), float(r_rev[k // 2])
        alpha = c2 + d2
        beta = c1 - 2.0 * c2 * r1 - d1 + 2.0 * d2 * r2
        kappa = -c1 * r1 + c2 * r1 * r1 - d1 * r2 + d2 * r2 * r2
        b = beta + 2.0 * alpha * r1
        const += kappa + alpha * r1 * r1 + beta * r1
        pieces.append((alpha, b, r1))
    (ax, bx, rx), (ay, by, ry) = pieces
    return QuadPenalty(ax=ax, bx=bx, ay=ay, by=by, offset=(rx, ry)), const


def _compute_message(k, i, s_partial, terms, params, graph, bsums, occlusion, table):
    """Build the directed message k -> i from k's partial subtree score."""
    w_ik = params.idpr_weights[(i, k)]
    w_ki = params.idpr_weights[(k, i)]
    best = None
    best_src = None
    best_t_ik = None
    best_t_ki = None
    for t in range(1, graph.T(i, k) + 1):
        recv = w_ik * terms.idpr[(i, k)][t - 1]
        for t2 in range(1, graph.T(k, i) + 1):
            f = s_partial + w_ki * terms.idpr[(k, i)][t2 - 1]
            pen, const = _pair_penalty(
                params.deformation_weights[(i, k)][t - 1],
                params.mean_offsets[(i, k)][t - 1],
                params.deformation_weights[(k, i)][t2 - 1],
                params.mean_offsets[(k, i)][t2 - 1],
            )
            out, arg = dt2d_max(f, pen)
            cand = out + const + recv
            if best is None:
                best = cand
                best_src = arg
                best_t_ik = np.full(cand.shape, t, dtype=np.int16)
                best_t_ki = np.full(cand.shape, t2, dtype=np.int16)
            else:
                better = cand > best  # strict: earlier (smaller) type pair wins ties
                np.copyto(best, cand, where=better)
                best_src[better] = arg[better]
                best_t_ik[better] = t
                best_t_ki[better] = t2
    if occlusion:
        m_d = w_ik * terms.idod[(i, k)] + bsums[(i, k)]
        decouple = m_d > best  # strict: keep the subtree on exact ties
        score = np.where(decouple, m_d, best)
    else:
        decouple = np.zeros(best.shape, dtype=bool)
        score = best
    table.message_count += 1
    return _Message(score=score, decouple=decouple, src=best_src, t_ik=best_t_ik, t_ki=best_t_ki)


def _bfs_order(graph: PartGraph, root: int = 1):
    order = [root]
    parent = {root: 0}
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for w in graph.neighbors(v):
            if w not in parent:
                parent[w] = v
                order.append(w)
    return order, parent


def two_pass_messages(terms: TermGrids, params: ModelParams, graph: PartGraph) -> MessageTable:
    """Compute every directed message once and combine them at every part.

    Upward sweep (leaves toward part 1) builds child-to-parent messages;
    downward sweep builds the reverse direction by subtracting each child's
    own message from the parent's full incoming sum. s_all[i] then holds,
    per cell, the best score over every composition containing part i.
    """
    bsums = bias_sums(graph, params)
    table = MessageTable(
        graph=graph, params=params, terms=terms, messages={}, s_all={}, bias_sums=bsums
    )
    app = {i: params.appearance_weights[i - 1] * terms.appearance[i - 1] for i in range(1, graph.parts + 1)}
    order, parent = _bfs_order(graph, root=1)
    children = {i: [w for w in graph.neighbors(i) if parent[w] == i] for i in order}
    for k in reversed(order[1:]):
        i = parent[k]
        s = app[k].copy()
        for c in children[k]:
            s += table.messages[(c, k)].score
        table.messages[(k, i)] = _compute_message(
            k, i, s, terms, params, graph, bsums, True, table
        )
    for i in order:
        incoming = app[i].copy()
        for n in graph.neighbors(i):
            incoming += table.messages[(n, i)].score
        table.s_all[i] = incoming
        for k in children[i]:
            s_partial = incoming - table.messages[(k, i)].score
            table.messages[(i, k)] = _compute_message(
                i, k, s_partial, terms, params, graph, bsums, True, table
            )
    return table


def single_pass_messages(terms: TermGrids, params: ModelParams, graph: PartGraph) -> MessageTable:
    """Full-graph baseline: one upward sweep, no occlusion decoupling.

    s_all has part 1 only; every estimate backtracked from it contains all
    K parts.
    """
    bsums = bias_sums(graph, params)
    table = MessageTable(
        graph=graph, params=params, terms=terms, messages={}, s_all={}, bias_sums=bsums
    )
    app = {i: params.appearance_weights[i - 1] * terms.appearance[i - 1] for i in range(1, graph.parts + 1)}
    order, parent = _bfs_order(graph, root=1)
    children = {i: [w for w in graph.neighbors(i) if parent[w] == i] for i in order}
    for k in reversed(order[1:]):
        i = parent[k]
        s = app[k].copy()
        for c in children[k]:
            s += table.messages[(c, k)].score
        table.messages[(k, i)] = _compute_message(
            k, i, s, terms, params, graph, bsums, False, table
        )
    root_score = app[1].copy()
    for c in children[1]:
        root_score += table.messages[(c, 1)].score
    table.s_all[1] = root_score
    return table


def backtrack(table: MessageTable, root: int, location) -> PoseEstimate:
    """Recover the best estimate rooted at a part and cell.

    Follows the argmax metadata outward from the root; whenever a message
    chose to decouple, that neighbor's whole subtree is left occluded.
    """
    graph = table.graph
    x0, y0 = int(location[0]), int(location[1])
    visible = {root}
    locations = {root: (x0, y0)}
    types = {}
    stack = [(root, 0, (x0, y0))]
    while stack:
        i, came_from, (xi, yi) = stack.pop()
        for k in graph.neighbors(i):
            if k == came_from:
                continue
            msg = table.messages[(k, i)]
            if msg.decouple[yi, xi]:
                continue
            sy, sx = msg.src[yi, xi]
            types[(i, k)] = int(msg.t_ik[yi, xi])
            types[(k, i)] = int(msg.t_ki[yi, xi])
            visible.add(k)
            locations[k] = (int(sx), int(sy))
            stack.append((k, i, (int(sx), int(sy))))
    comp = composition_from_visible(graph, visible)
    score = float(table.s_all[root][y0, x0])
    return PoseEstimate(composition=comp, locations=locations, types=types, score=score, root=root)


def _part_box(loc, side):
    x, y = loc
    h = side / 2.0
    return (x - h, y - h, x + h, y + h)


def _iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _mean_part_iou(est_a: PoseEstimate, est_b: PoseEstimate, side: float) -> float:
    """Average box IoU over parts visible in both estimates; 0 if none shared."""
    shared = est_a.visible_parts() & est_b.visible_parts()
    if not shared:
        return 0.0
    total = 0.0
    for p in shared:
        total += _iou(_part_box(est_a.locations[p], side), _part_box(est_b.locations[p], side))
    return total / len(shared)


def detect(
    terms: TermGrids,
    params: ModelParams,
    graph: PartGraph,
    threshold: float,
    min_parts: int = 1,
    nms_iou: float = 0.6,
    part_box: float = None,
    add_svm_bias: bool = True,
    single_composition: bool = False,
    table: MessageTable = None,
    max_detections: int = None,
) -> list:
    """Threshold the per-part score grids into a deduplicated list of estimates.

    Every (part, cell) whose combined score (plus the SVM bias unless
    disabled) exceeds the threshold is backtracked; estimates with fewer
    than min_parts visible parts are dropped, and greedy part-based NMS
    suppresses any estimate whose shared visible parts overlap a kept one
    with mean IoU above nms_iou. Estimates sharing no visible part never
    suppress each other. Candidates are processed in descending score
    order, so an optional max_detections cap returns exactly the first
    survivors of the full suppression pass.
    """
    if not 0 < nms_iou <= 1:
        raise ValueError("nms_iou must lie in (0, 1]")
    if min_parts < 1:
        raise ValueError("min_parts must be >= 1")
    H, W = terms.shape
    if part_box is None:
        part_box = max(1.0, max(H, W) / 10.0)
    if table is None:
        if single_composition:
            table = single_pass_messages(terms, params, graph)
        else:
            table = two_pass_messages(terms, params, graph)
    bias = params.svm_bias if add_svm_bias else 0.0
    candidates = []
    for i in sorted(table.s_all):
        grid = table.s_all[i]
        ys, xs = np.nonzero(grid + bias > threshold)
        for y, x in zip(ys.tolist(), xs.tolist()):
            candidates.append((-float(grid[y, x]), i, y, x))
    candidates.sort()
    kept = []
    for neg_score, i, y, x in candidates:
        if max_detections is not None and len(kept) >= max_detections:
            break
        est = backtrack(table, i, (x, y))
        if len(est.visible_parts()) < min_parts:
            continue
        if any(_mean_part_iou(est, other, part_box) > nms_iou for other in kept):
            continue
        kept.append(est)
    return kept


def estimate_to_dict(est: PoseEstimate, n_parts: int, image_id: str = None) -> dict:
    parts = []
    for p in range(1, n_parts + 1):
        if p in est.composition.visible:
            x, y = est.locations[p]
            parts.append({"id": p, "visible": True, "x": int(x), "y": int(y)})
        else:
            parts.append({"id": p, "visible": False})
    types = [{"i": i, "j": j, "t": int(t)} for (i, j), t in sorted(est.types.items())]
    doc = {"score": float(est.score), "root": int(est.root), "parts": parts, "types": types}
    if image_id is not None:
        doc["image_id"] = image_id
    return doc


def save_detections(path, estimates, n_parts: int, image_ids=None) -> None:
    """Write detections as a JSON array; image_ids (optional) tags each entry."""
    docs = []
    for idx, est in enumerate(estimates):
        image_id = image_ids[idx] if image_ids is not None else None
        docs.append(estimate_to_dict(est, n_parts, image_id))
    Path(path).write_text(json.dumps(docs, indent=2, sort_keys=True) + "\n")


def load_detections(path) -> list:
    return json.loads(Path(path).read_text())
