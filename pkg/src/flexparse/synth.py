"""Synthetic models, occluded crowds, and score-map rendering.

Everything is a pure function of its seed. gen_model draws a random part
tree with ring-arranged mean offsets and concave deformations; gen_scene
drops several partially occluded people on a grid and renders the
per-cell label distributions the rest of the pipeline consumes, so the
whole train / infer / evaluate loop runs without any image front-end.

Each person's visible set is grown from part 1 by walking the tree and
independently cutting every edge with the requested occlusion rate, so
visible parts always form a connected subtree.
"""

from __future__ import annotations

import numpy as np

from .learn import Annotation, assign_type
from .model import ModelParams, PartGraph, build_label_space
from .scoremap import ScoreMapSet

__all__ = ["gen_model", "gen_scene", "gen_scenes"]


def _prufer_tree(rng, K: int):
    """Random labeled tree on 0..K-1 via a Prüfer sequence."""
    if K == 1:
        return []
    if K == 2:
        return [(0, 1)]
    seq = rng.integers(0, K, size=K - 2)
    degree = np.ones(K, dtype=int)
    for v in seq:
        degree[v] += 1
    import heapq

    leaves = [v for v in range(K) if degree[v] == 1]
    heapq.heapify(leaves)
    edges = []
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, int(v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    u = heapq.heappop(leaves)
    w = heapq.heappop(leaves)
    edges.append((u, w))
    return edges


def _bfs_relabel(edges0, K: int):
    """Relabel so part 1 is a hub and discovery order numbers the rest.

    The highest-degree vertex becomes part 1, which keeps generated people
    anchored at a torso-like part instead of an extremity.
    """
    adj = {v: [] for v in range(K)}
    for u, v in edges0:
        adj[u].append(v)
        adj[v].append(u)
    root = max(range(K), key=lambda v: (len(adj[v]), -v))
    label = {root: 1}
    order = [root]
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for w in sorted(adj[v]):
            if w not in label:
                label[w] = len(label) + 1
                order.append(w)
    return [(label[u], label[v]) for u, v in edges0]


def gen_model(seed, K: int, T: int, offset_radius=(3.5, 5.5), quad_range=(0.08, 0.2), bias_range=(0.8, 1.2)):
    """Seeded random model; returns (PartGraph, ModelParams).

    Mean offsets sit on a per-edge ring of T directions with the reverse
    direction mirrored, deformations are concave with zero linear part,
    appearance and relation weights are 1, and part biases are small and
    negative so cutting a subtree always costs something.
    """
    if K < 1 or T < 1:
        raise ValueError("K and T must be >= 1")
    rng = np.random.default_rng(seed)
    edges = _bfs_relabel(_prufer_tree(rng, K), K)
    type_counts = {}
    for i, j in edges:
        type_counts[(i, j)] = T
        type_counts[(j, i)] = T
    graph = PartGraph(parts=K, edges=tuple(edges), type_counts=type_counts)
    mean_offsets = {}
    deformation = {}
    idpr_weights = {}
    for i, j in graph.edges:
        radius = rng.uniform(*offset_radius)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles = phase + 2.0 * np.pi * np.arange(T) / T
        fwd = np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])
        mean_offsets[(i, j)] = fwd
        mean_offsets[(j, i)] = -fwd
        for d in ((i, j), (j, i)):
            q = rng.uniform(*quad_range, size=T)
            w = np.zeros((T, 4))
            w[:, 1] = -q
            w[:, 3] = -q
            deformation[d] = w
            idpr_weights[d] = 1.0
    params = ModelParams(
        appearance_weights=np.ones(K),
        idpr_weights=idpr_weights,
        deformation_weights=deformation,
        mean_offsets=mean_offsets,
        part_biases=-rng.uniform(*bias_range, size=K),
        svm_bias=0.0,
    )
    return graph, params


def _sample_visible_set(rng, graph, occlusion_rate):
    """Connected visible subtree grown from part 1 by per-edge cutting."""
    visible = [1]
    parent = {1: 0}
    head = 0
    while head < len(visible):
        v = visible[head]
        head += 1
        for w in graph.neighbors(v):
            if w in parent:
                continue
            parent[w] = v
            if rng.random() < occlusion_rate:
                continue  # cut this edge: w and everything behind it stays occluded
            visible.append(w)
    return visible  # BFS order, parents before children


def _place_person(rng, graph, params, visible, W, H, jitter):
    """Place a fixed visible set on the grid, or None if any part lands off it.

    The visible set is decided before placement, so retrying a failed
    placement does not bias the occlusion statistics.
    """
    locs = {1: (int(rng.integers(0, W)), int(rng.integers(0, H)))}
    for w in visible[1:]:
        v = next(v for v in graph.neighbors(w) if v in locs)
        t = int(rng.integers(1, graph.T(v, w) + 1))
        r = params.mean_offsets[(v, w)][t - 1]
        dx, dy = rng.normal(0.0, jitter, size=2)
        x = int(round(locs[v][0] + r[0] + dx))
        y = int(round(locs[v][1] + r[1] + dy))
        if not (0 <= x < W and 0 <= y < H):
            return None
        locs[w] = (x, y)
    return locs


def gen_scene(
    seed,
    graph: PartGraph,
    params: ModelParams,
    n_people: int,
    occlusion_rate: float,
    grid=(64, 48),
    p_hit: float = 0.7,
    kernel_sigma: float = 1.0,
    noise_conc: float = 0.01,
    noise_frac: float = 0.1,
    uniform_frac: float = 0.02,
    jitter: float = 0.7,
    image_id: str = "scene_000",
):
    """Render one crowd scene; returns (annotations, ScoreMapSet).

    Each visible part puts probability p_hit on its true label at its cell
    and a Gaussian-attenuated share on nearby cells; a sparse Dirichlet
    component injects confusable clutter, a small uniform share keeps every
    label strictly positive (softmax outputs never hit exact zero), and the
    rest of the mass goes to the background label. People that fall off
    the grid are resampled up to 100 times before giving up.
    """
    if not 0.0 <= occlusion_rate <= 1.0:
        raise ValueError("occlusion_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    W, H = grid
    space = build_label_space(graph)
    annotations = []
    placed = []
    for _ in range(n_people):
        visible = _sample_visible_set(rng, graph, occlusion_rate)
        for _attempt in range(100):
            locs = _place_person(rng, graph, params, visible, W, H, jitter)
            if locs is not None:
                break
        else:
            raise RuntimeError("could not place a person on the grid after 100 tries")
        annotations.append(Annotation(image_id=image_id, visible=frozenset(visible), locations=dict(locs)))
        placed.append((frozenset(visible), locs))
    part_mass = np.zeros((H, W, space.size))
    reach = max(1, int(np.ceil(3.0 * kernel_sigma)))
    for visible, locs in placed:
        for i in visible:
            m = []
            for j in graph.neighbors(i):
                if j not in visible:
                    m.append(0)
                else:
                    d = np.subtract(locs[j], locs[i]).astype(float)
                    m.append(assign_type(params.mean_offsets[(i, j)], d))
            u = space.encode(i, tuple(m))
            x, y = locs[i]
            for wy in range(max(0, y - reach), min(H, y + reach + 1)):
                for wx in range(max(0, x - reach), min(W, x + reach + 1)):
                    d2 = (wx - x) ** 2 + (wy - y) ** 2
                    part_mass[wy, wx, u] += p_hit * np.exp(-d2 / (2.0 * kernel_sigma**2))
    noise = rng.gamma(noise_conc, 1.0, size=(H, W, space.size))
    noise_sum = np.maximum(noise.sum(axis=2, keepdims=True), 1e-300)
    raw = part_mass + noise_frac * (noise / noise_sum) + uniform_frac / space.size
    raw[:, :, 0] += np.maximum(1.0 - part_mass.sum(axis=2) - noise_frac - uniform_frac, 0.01)
    raw /= raw.sum(axis=2, keepdims=True)
    maps = ScoreMapSet(graph=graph, width=W, height=H, probs=raw.astype(np.float32))
    return annotations, maps


def gen_scenes(seed, graph, params, n_scenes: int, n_people: int, occlusion_rate: float, **kwargs):
    """Several scenes with per-scene seeds derived from one master seed.

    Returns a list of (image_id, annotations, ScoreMapSet).
    """
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    out = []
    for idx, child in enumerate(children):
        image_id = f"scene_{idx:03d}"
        anns, maps = gen_scene(
            child, graph, params, n_people, occlusion_rate, image_id=image_id, **kwargs
        )
        out.append((image_id, anns, maps))
    return out
