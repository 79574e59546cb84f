"""Occlusion-aware PCP and AOP over stick figures.

Evaluated parts are sticks: named joint pairs from a stick map. A stick is
visible when both of its joints are; a visible ground-truth stick is
correct when the estimate shows it and the average endpoint error is under
half the ground-truth stick length, and an occluded one is correct only
when the estimate also hides it.

Detections are matched to ground-truth people greedily by descending
score. The anchor for matching is the midpoint of the located endpoints
of the first stick in the map (the head stick); the default radius is
half the person's head length, falling back to half the median head
length when a head endpoint is hidden. This matcher is a documented
stand-in for the benchmark's unpublished tooling.

Unmatched ground-truth people score every stick incorrect for PCP; for
AOP they are treated as an all-occluded prediction, so an empty detection
list scores exactly the occluded fraction of ground-truth sticks.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

__all__ = ["pcp_stick", "evaluate", "save_report", "default_stick_map"]


def pcp_stick(gt_endpoints, gt_occluded: bool, est) -> bool:
    """Occlusion-aware correctness of one stick.

    est is None for an estimate that marks the stick occluded, otherwise a
    pair of endpoints. Visible ground truth needs a visible estimate with
    mean endpoint distance strictly under half the stick length.
    """
    if gt_occluded:
        return est is None
    (ax, ay), (bx, by) = gt_endpoints
    length = math.hypot(bx - ax, by - ay)
    if length <= 0:
        raise ValueError("zero-length ground-truth stick has no threshold")
    if est is None:
        return False
    (ex1, ey1), (ex2, ey2) = est
    avg = 0.5 * (math.hypot(ex1 - ax, ey1 - ay) + math.hypot(ex2 - bx, ey2 - by))
    return avg < 0.5 * length


def default_stick_map(graph) -> dict:
    """One stick per tree edge, named 'i-j'; the first edge acts as the head."""
    return {f"{i}-{j}": (i, j) for i, j in graph.edges}


def _person_joints(doc):
    vis = {}
    loc = {}
    for j in doc["joints"]:
        p = int(j["id"])
        if j.get("visible"):
            vis[p] = True
            loc[p] = (float(j["x"]), float(j["y"]))
        else:
            vis[p] = False
    return vis, loc


def _det_joints(doc):
    vis = {}
    loc = {}
    for j in doc["parts"]:
        p = int(j["id"])
        if j.get("visible"):
            vis[p] = True
            loc[p] = (float(j["x"]), float(j["y"]))
        else:
            vis[p] = False
    return vis, loc


def _anchor(vis, loc, head_stick):
    pts = [loc[p] for p in head_stick if vis.get(p)]
    if not pts:
        return None
    return (
        sum(p[0] for p in pts) / len(pts),
        sum(p[1] for p in pts) / len(pts),
    )


def _head_length(vis, loc, head_stick):
    a, b = head_stick
    if vis.get(a) and vis.get(b):
        return math.hypot(loc[b][0] - loc[a][0], loc[b][1] - loc[a][1])
    return None


def evaluate(gt, detections, stick_map: dict, match_radius: float = None) -> dict:
    """Score detections against annotations; returns per-part PCP, mPCP, AOP.

    gt entries follow the annotations JSON shape ({image_id, joints});
    detections follow the detections JSON shape, optionally carrying an
    image_id for multi-scene evaluation. Results do not depend on the
    order of the detection list.
    """
    if not stick_map:
        raise ValueError("stick_map must name at least one joint pair")
    for name, pair in stick_map.items():
        if len(pair) != 2 or pair[0] == pair[1]:
            raise ValueError(f"stick {name!r} must join two distinct joints")
    head_stick = next(iter(stick_map.values()))
    gt_parsed = []
    for idx, doc in enumerate(gt):
        vis, loc = _person_joints(doc)
        gt_parsed.append({
            "image_id": doc.get("image_id", ""),
            "vis": vis,
            "loc": loc,
            "anchor": _anchor(vis, loc, head_stick),
            "head_len": _head_length(vis, loc, head_stick),
        })
    head_lens = sorted(p["head_len"] for p in gt_parsed if p["head_len"])
    fallback = head_lens[len(head_lens) // 2] if head_lens else None

    def radius_for(person):
        if match_radius is not None:
            return match_radius
        if person["head_len"]:
            return 0.5 * person["head_len"]
        if fallback is None:
            raise ValueError("no measurable head stick; pass match_radius explicitly")
        return 0.5 * fallback

    det_parsed = []
    for doc in detections:
        vis, loc = _det_joints(doc)
        det_parsed.append({
            "image_id": doc.get("image_id", ""),
            "score": float(doc.get("score", 0.0)),
            "root": int(doc.get("root", 0)),
            "vis": vis,
            "loc": loc,
            "anchor": _anchor(vis, loc, head_stick),
        })
    det_parsed.sort(key=lambda d: (
        -d["score"], d["root"],
        d["loc"].get(d["root"], (0, 0))[1], d["loc"].get(d["root"], (0, 0))[0],
    ))
    matched = {}
    taken = set()
    for d_idx, det in enumerate(det_parsed):
        if det["anchor"] is None:
            continue
        best = None
        for g_idx, person in enumerate(gt_parsed):
            if g_idx in taken or person["image_id"] != det["image_id"] or person["anchor"] is None:
                continue
            dist = math.hypot(det["anchor"][0] - person["anchor"][0], det["anchor"][1] - person["anchor"][1])
            if dist <= radius_for(person) and (best is None or dist < best[0]):
                best = (dist, g_idx)
        if best is not None:
            taken.add(best[1])
            matched[best[1]] = det

    def stick_state(vis, loc, pair):
        a, b = pair
        if vis.get(a) and vis.get(b):
            return (loc[a], loc[b])
        return None

    pcp_hits = {name: 0 for name in stick_map}
    aop_hits = 0
    aop_total = 0
    for g_idx, person in enumerate(gt_parsed):
        det = matched.get(g_idx)
        for name, pair in stick_map.items():
            gt_state = stick_state(person["vis"], person["loc"], pair)
            aop_total += 1
            if det is None:
                # PCP: a missed person gets no credit at all; AOP: scored as
                # if every part had been declared occluded
                if gt_state is None:
                    aop_hits += 1
                continue
            est_state = stick_state(det["vis"], det["loc"], pair)
            if (gt_state is None) == (est_state is None):
                aop_hits += 1
            if gt_state is None:
                correct = est_state is None
            else:
                correct = pcp_stick(gt_state, False, est_state)
            if correct:
                pcp_hits[name] += 1
    n_people = len(gt_parsed)
    per_part = {
        name: (100.0 * pcp_hits[name] / n_people if n_people else 0.0) for name in stick_map
    }
    mpcp = sum(per_part.values()) / len(per_part) if per_part else 0.0
    aop = 100.0 * aop_hits / aop_total if aop_total else 0.0
    return {"per_part": per_part, "mPCP": mpcp, "AOP": aop}


def save_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
