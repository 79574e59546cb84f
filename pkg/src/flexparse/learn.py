"""Supervised learning: label derivation, offset clustering, SVM weights.

Annotations give per-part visibility and the locations of visible parts.
From them we derive, per person, the connected composition to train on,
the per-edge decoupling labels, and the relation-type labels (nearest
offset cluster). Relative-offset clusters come from seeded K-means; the
scalar weights and biases come from a primal sub-gradient SVM over sparse
feature vectors whose dot product with the packed parameter vector
reproduces the composition score exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .infer import Composition, PoseEstimate, composition_from_visible, detect
from .model import FeatureLayout, ModelParams, PartGraph, params_to_vector, vector_to_params
from .scoremap import TermGrids

__all__ = [
    "Annotation",
    "TrainingExample",
    "SvmResult",
    "load_annotations",
    "save_annotations",
    "derive_labels",
    "kmeans",
    "kmeans_types",
    "assign_type",
    "build_feature_vector",
    "example_to_estimate",
    "train_svm",
    "project_concavity",
    "mine_negatives",
    "train_model",
]

MIN_QUAD = -1e-3  # concavity projection ceiling for squared-term coefficients


@dataclass
class Annotation:
    """One labeled person: visibility per part, locations for visible parts."""

    image_id: str
    visible: frozenset
    locations: dict

    def __post_init__(self):
        if set(self.locations) != set(self.visible):
            raise ValueError("locations must be given exactly for the visible parts")

    def to_dict(self, n_parts: int) -> dict:
        joints = []
        for p in range(1, n_parts + 1):
            if p in self.visible:
                x, y = self.locations[p]
                joints.append({"id": p, "visible": True, "x": int(x), "y": int(y)})
            else:
                joints.append({"id": p, "visible": False})
        return {"image_id": self.image_id, "joints": joints}


def save_annotations(path, annotations, n_parts: int) -> None:
    docs = [a.to_dict(n_parts) for a in annotations]
    Path(path).write_text(json.dumps(docs, indent=2, sort_keys=True) + "\n")


def load_annotations(path) -> list:
    docs = json.loads(Path(path).read_text())
    out = []
    for doc in docs:
        visible = set()
        locations = {}
        for j in doc["joints"]:
            if j.get("visible"):
                visible.add(int(j["id"]))
                locations[int(j["id"])] = (int(j["x"]), int(j["y"]))
        out.append(Annotation(image_id=str(doc.get("image_id", "")), visible=frozenset(visible), locations=locations))
    return out


@dataclass
class TrainingExample:
    """A labeled composition ready for feature extraction."""

    composition: Composition
    locations: dict
    types: dict     # directed (i, j) over composition edges -> type
    gammas: dict    # directed (i, j), i visible in the annotation -> 0/1
    polarity: str   # "pos" or "neg"
    image_id: str = ""


def assign_type(centers: np.ndarray, d) -> int:
    """Index (1-based) of the nearest cluster center; ties to the smallest."""
    diff = np.asarray(centers, dtype=float) - np.asarray(d, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff))) + 1


def derive_labels(ann: Annotation, graph: PartGraph, type_clusters: dict) -> TrainingExample:
    """Derive the training composition, decoupling labels and type labels.

    The composition is the largest connected visible component (ties go to
    the component holding the smallest part index); an edge direction gets
    gamma = 1 exactly when its source is visible and its target is not.
    """
    if not ann.visible:
        raise ValueError("annotation has no visible parts")
    remaining = set(ann.visible)
    components = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        queue = [seed]
        while queue:
            v = queue.pop()
            for w in graph.neighbors(v):
                if w in remaining and w not in comp:
                    comp.add(w)
                    queue.append(w)
        components.append(comp)
        remaining -= comp
    components.sort(key=lambda c: (-len(c), min(c)))
    chosen = components[0]
    composition = composition_from_visible(graph, chosen)
    gammas = {}
    for i, j in graph.directed_edges():
        if i in ann.visible:
            gammas[(i, j)] = 0 if j in ann.visible else 1
    types = {}
    for i, j in composition.edges:
        d = np.subtract(ann.locations[j], ann.locations[i])
        types[(i, j)] = assign_type(type_clusters[(i, j)], d)
        types[(j, i)] = assign_type(type_clusters[(j, i)], -d)
    locations = {p: tuple(ann.locations[p]) for p in chosen}
    return TrainingExample(
        composition=composition,
        locations=locations,
        types=types,
        gammas=gammas,
        polarity="pos",
        image_id=ann.image_id,
    )


def kmeans(points, k: int, seed) -> tuple:
    """Seeded k-means++ with Lloyd updates; returns (centers, labels, history).

    Stops after 100 iterations or when no center moves more than 1e-6.
    Centers come back sorted by (x, y) so the type numbering is canonical.
    history holds the sum of squared distances after every assignment step.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < k:
        raise ValueError(f"need at least {k} samples, got {pts.shape[0] if pts.ndim == 2 else 0}")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(pts.shape[0])]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = pts[rng.integers(pts.shape[0])]
        else:
            centers[c] = pts[rng.choice(pts.shape[0], p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[c]) ** 2, axis=1))
    history = []
    labels = None
    for _ in range(100):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        history.append(float(dist[np.arange(pts.shape[0]), labels].sum()))
        moved = 0.0
        for c in range(k):
            members = pts[labels == c]
            if len(members):
                new = members.mean(axis=0)
                moved = max(moved, float(np.abs(new - centers[c]).max()))
                centers[c] = new
        if moved <= 1e-6:
            break
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    centers = centers[order]
    dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dist, axis=1)
    return centers, labels, history


def kmeans_types(offsets: dict, T: int, seed) -> tuple:
    """Cluster per-direction relative offsets into T mean positions.

    offsets maps each directed edge to its (n, 2) sample array; returns
    (centers, histories), both keyed by directed edge. Deterministic for a
    fixed seed; edges are processed in sorted order.
    """
    centers = {}
    histories = {}
    base = np.random.default_rng(seed)
    for d in sorted(offsets):
        sub_seed = int(base.integers(0, 2**63 - 1))
        pts = np.asarray(offsets[d], dtype=float)
        if pts.shape[0] < T:
            raise ValueError(f"edge {d} has {pts.shape[0]} offset samples, needs at least {T}")
        c, _, hist = kmeans(pts, T, sub_seed)
        centers[d] = c
        histories[d] = hist
    return centers, histories


def build_feature_vector(ex: TrainingExample, terms: TermGrids, graph: PartGraph, type_clusters: dict) -> np.ndarray:
    """Sparse feature vector whose dot with the packed weights is the score.

    Slots follow FeatureLayout: appearance values for visible parts,
    deformation features in the active type's slots, the pairwise-relation
    value (or, on cut edges, the occlusion value, sharing the same slot),
    and a constant 1 in the bias slot of every absent part.
    """
    lay = FeatureLayout(graph)
    phi = np.zeros(lay.size)
    comp = ex.composition
    for i in comp.visible:
        x, y = ex.locations[i]
        phi[lay.app_slot(i)] = terms.appearance[i - 1, y, x]
    for i, j in comp.edges:
        for a, b in ((i, j), (j, i)):
            t = ex.types[(a, b)]
            xa, ya = ex.locations[a]
            xb, yb = ex.locations[b]
            r = type_clusters[(a, b)][t - 1]
            dx = xb - xa - r[0]
            dy = yb - ya - r[1]
            phi[lay.def_slots(a, b, t)] = (dx, dx * dx, dy, dy * dy)
            phi[lay.idpr_slot(a, b)] = terms.idpr[(a, b)][t - 1, ya, xa]
    for i, j in comp.decoupled_edges:
        x, y = ex.locations[i]
        phi[lay.idpr_slot(i, j)] = terms.idod[(i, j)][y, x]
    for k in range(1, graph.parts + 1):
        if k not in comp.visible:
            phi[lay.bias_slot(k)] = 1.0
    return phi


def example_to_estimate(ex: TrainingExample) -> PoseEstimate:
    return PoseEstimate(
        composition=ex.composition,
        locations=dict(ex.locations),
        types=dict(ex.types),
        score=0.0,
        root=min(ex.composition.visible),
    )


@dataclass
class SvmResult:
    weights: np.ndarray
    bias: float
    objective_history: list


def svm_objective(X: np.ndarray, y: np.ndarray, C: float, beta: np.ndarray, b0: float) -> float:
    margins = y * (X @ beta + b0)
    hinge = np.maximum(0.0, 1.0 - margins)
    return 0.5 * float(beta @ beta) + C * float(hinge.sum())


def train_svm(X, y, C: float, epochs: int = 50, seed=0) -> SvmResult:
    """Primal sub-gradient minimization of 0.5|beta|^2 + C * sum hinge.

    Deterministic: a seeded permutation per epoch, single-example steps of
    size 1/(lambda t) with lambda = 1/(C n), and a projection onto the
    ball of radius sqrt(C n). The returned weights are the tail average of
    the iterates (the first epoch is warm-up and excluded);
    objective_history records the objective of that average at the end of
    every averaged epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n == 0 or len(set(np.sign(y).tolist())) < 2:
        raise ValueError("training needs examples of both polarities")
    if C <= 0:
        raise ValueError("C must be positive")
    rng = np.random.default_rng(seed)
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    beta = np.zeros(X.shape[1])
    b0 = 0.0
    t = 0
    k = 0
    burn = 1 if epochs > 1 else 0
    history = []
    avg_beta = np.zeros_like(beta)
    avg_b0 = 0.0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for idx in perm:
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[idx] * (X[idx] @ beta + b0) < 1.0
            beta *= 1.0 - 1.0 / t
            if violated:
                beta += eta * y[idx] * X[idx]
                b0 += y[idx] / t
            norm = float(np.linalg.norm(beta))
            if norm > radius:
                beta *= radius / norm
            if epoch >= burn:
                k += 1
                avg_beta += (beta - avg_beta) / k
                avg_b0 += (b0 - avg_b0) / k
        if epoch >= burn:
            history.append(svm_objective(X, y, C, avg_beta, avg_b0))
    return SvmResult(weights=avg_beta.copy(), bias=float(avg_b0), objective_history=history)


def project_concavity(params: ModelParams) -> ModelParams:
    """Clamp every squared-term deformation coefficient to at most -1e-3."""
    out = params.copy()
    for d, w in out.deformation_weights.items():
        w[:, 1] = np.minimum(w[:, 1], MIN_QUAD)
        w[:, 3] = np.minimum(w[:, 3], MIN_QUAD)
    return out


def mine_negatives(
    params: ModelParams,
    graph: PartGraph,
    type_clusters: dict,
    negative_terms: list,
    pos_features: np.ndarray,
    rounds: int,
    per_round_cap: int,
    C: float,
    epochs: int = 50,
    seed=0,
    margin_threshold: float = -1.0,
):
    """Alternate hard-negative mining and SVM retraining.

    Each round runs detection on every person-free term set, keeps the
    top-scoring estimates above the negative margin (score plus SVM bias
    greater than -1), turns them into negative examples, and retrains on
    all positives plus every negative mined so far. Returns
    (negative_examples, negative_features, params) after the final round;
    rounds = 0 returns immediately with no negatives.
    """
    negatives = []
    neg_rows = []
    params = params.copy()
    for rnd in range(rounds):
        scored = []
        for map_idx, terms in enumerate(negative_terms):
            ests = detect(
                terms, params, graph,
                threshold=margin_threshold, min_parts=1, nms_iou=0.6, add_svm_bias=True,
                max_detections=per_round_cap,
            )
            for est in ests:
                scored.append((-(est.score + params.svm_bias), map_idx, est))
        scored.sort(key=lambda s: (s[0], s[1], s[2].root, s[2].locations[s[2].root][1], s[2].locations[s[2].root][0]))
        for neg_rank, (_, map_idx, est) in enumerate(scored[:per_round_cap]):
            ex = TrainingExample(
                composition=est.composition,
                locations=dict(est.locations),
                types=dict(est.types),
                gammas={},
                polarity="neg",
                image_id=f"neg_{map_idx}",
            )
            negatives.append(ex)
            neg_rows.append(build_feature_vector(ex, negative_terms[map_idx], graph, type_clusters))
        if not neg_rows:
            break  # nothing violates the margin: the model already separates
        X = np.vstack([pos_features, np.array(neg_rows)])
        y = np.concatenate([np.ones(len(pos_features)), -np.ones(len(neg_rows))])
        result = train_svm(X, y, C, epochs=epochs, seed=seed + rnd + 1)
        params = project_concavity(
            vector_to_params(result.weights, graph, type_clusters, svm_bias=result.bias)
        )
    neg_features = np.array(neg_rows) if neg_rows else np.zeros((0, pos_features.shape[1]))
    return negatives, neg_features, params


def _random_negative_examples(rng, graph, type_clusters, terms, count):
    """Seeded random negatives used to bootstrap the first SVM round."""
    H, W = terms.shape
    out = []
    for n in range(count):
        if n % 2 == 0:
            part = int(rng.integers(1, graph.parts + 1))
            loc = (int(rng.integers(0, W)), int(rng.integers(0, H)))
            comp = composition_from_visible(graph, {part})
            out.append(TrainingExample(
                composition=comp, locations={part: loc}, types={}, gammas={},
                polarity="neg",
            ))
        else:
            locs = {1: (int(rng.integers(0, W)), int(rng.integers(0, H)))}
            types = {}
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
                        t = int(rng.integers(1, graph.T(v, w) + 1))
                        types[(v, w)] = t
                        types[(w, v)] = assign_type(type_clusters[(w, v)], -type_clusters[(v, w)][t - 1])
                        r = type_clusters[(v, w)][t - 1]
                        x = min(max(int(round(locs[v][0] + r[0])), 0), W - 1)
                        y = min(max(int(round(locs[v][1] + r[1])), 0), H - 1)
                        locs[w] = (x, y)
            comp = composition_from_visible(graph, set(range(1, graph.parts + 1)))
            out.append(TrainingExample(
                composition=comp, locations=locs, types=types, gammas={}, polarity="neg",
            ))
    return out


def train_model(
    annotations: list,
    term_sets: dict,
    negative_terms: list,
    graph: PartGraph,
    C: float = 0.05,
    seed=0,
    rounds: int = 2,
    per_round_cap: int = 60,
    epochs: int = 40,
    init_negatives_per_map: int = 10,
):
    """Full training pipeline; returns (ModelParams, diagnostics dict).

    term_sets maps image ids to TermGrids for the annotated scenes;
    negative_terms is a list of person-free TermGrids used for bootstrap
    negatives and hard-negative mining.
    """
    T = max(graph.type_counts.values())
    samples = {d: [] for d in graph.directed_edges()}
    for ann in annotations:
        for i, j in graph.edges:
            if i in ann.visible and j in ann.visible:
                d = np.subtract(ann.locations[j], ann.locations[i]).astype(float)
                samples[(i, j)].append(d)
                samples[(j, i)].append(-d)
    offsets = {d: np.array(v) for d, v in samples.items()}
    clusters, _ = kmeans_types(offsets, T, seed)
    positives = []
    pos_rows = []
    for ann in annotations:
        try:
            ex = derive_labels(ann, graph, clusters)
        except ValueError:
            continue
        positives.append(ex)
        pos_rows.append(build_feature_vector(ex, term_sets[ann.image_id], graph, clusters))
    if not pos_rows:
        raise ValueError("no usable positive examples")
    pos_features = np.array(pos_rows)
    rng = np.random.default_rng(seed)
    boot_rows = []
    for terms in negative_terms:
        for ex in _random_negative_examples(rng, graph, clusters, terms, init_negatives_per_map):
            boot_rows.append(build_feature_vector(ex, terms, graph, clusters))
    if not boot_rows:
        raise ValueError("training needs at least one negative score map")
    X = np.vstack([pos_features, np.array(boot_rows)])
    y = np.concatenate([np.ones(len(pos_features)), -np.ones(len(boot_rows))])
    result = train_svm(X, y, C, epochs=epochs, seed=seed)
    params = project_concavity(vector_to_params(result.weights, graph, clusters, svm_bias=result.bias))
    negatives, _, params = mine_negatives(
        params, graph, clusters, negative_terms, pos_features,
        rounds=rounds, per_round_cap=per_round_cap, C=C, epochs=epochs, seed=seed,
    )
    info = {
        "positives": len(positives),
        "bootstrap_negatives": len(boot_rows),
        "mined_negatives": len(negatives),
        "objective_history": result.objective_history,
    }
    return params, info
