import numpy as np
import pytest

from flexparse.infer import (
    backtrack,
    composition_from_visible,
    detect,
    estimate_to_dict,
    score_composition,
    single_pass_messages,
    two_pass_messages,
)
from flexparse.model import PartGraph
from flexparse.oracle import brute_force_best, enumerate_compositions
from flexparse.scoremap import TermGrids
from helpers import random_instance, random_params, random_terms, random_tree


def best_over_all(table):
    best = -np.inf
    at = None
    for i in sorted(table.s_all):
        grid = table.s_all[i]
        v = float(grid.max())
        if v > best:
            best = v
            y, x = np.unravel_index(int(grid.argmax()), grid.shape)
            at = (i, int(x), int(y))
    return best, at


class TestComposition:
    def test_rejects_disconnected_visible_set(self):
        rng = np.random.default_rng(0)
        g = random_tree(rng, 4)
        chain = PartGraph(parts=3, edges=((1, 2), (2, 3)),
                          type_counts={(1, 2): 1, (2, 1): 1, (2, 3): 1, (3, 2): 1})
        with pytest.raises(ValueError):
            composition_from_visible(chain, {1, 3})

    def test_decoupled_edges_follow_definition(self):
        chain = PartGraph(parts=3, edges=((1, 2), (2, 3)),
                          type_counts={(1, 2): 1, (2, 1): 1, (2, 3): 1, (3, 2): 1})
        comp = composition_from_visible(chain, {1, 2})
        assert comp.edges == ((1, 2),)
        assert comp.decoupled_edges == ((2, 3),)


class TestScoreComposition:
    def test_single_part_collects_all_cut_edges(self):
        rng = np.random.default_rng(1)
        g = random_tree(rng, 4, 1, 2)
        params = random_params(rng, g)
        terms = random_terms(rng, g, 4, 4)
        i = 2
        comp = composition_from_visible(g, {i})
        est_loc = (1, 2)
        from flexparse.infer import PoseEstimate

        est = PoseEstimate(composition=comp, locations={i: est_loc}, types={}, score=0.0, root=i)
        got = score_composition(est, terms, params, g)
        expected = params.appearance_weights[i - 1] * terms.appearance[i - 1, 2, 1]
        for j in g.neighbors(i):
            cut = g.subtree_parts(j, away_from=i)
            expected += sum(params.part_biases[k - 1] for k in cut)
            expected += params.idpr_weights[(i, j)] * terms.idod[(i, j)][2, 1]
        assert got == pytest.approx(expected, abs=1e-9)

    def test_full_graph_has_no_cut_terms(self):
        rng = np.random.default_rng(2)
        g = random_tree(rng, 3, 1, 1)
        comp = composition_from_visible(g, {1, 2, 3})
        assert comp.decoupled_edges == ()

    def test_matches_independent_summation(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = random_tree(rng, 4, 1, 2)
            params = random_params(rng, g)
            terms = random_terms(rng, g, 5, 5)
            visible = {1}
            for v in range(2, 5):
                if rng.random() < 0.7:
                    visible.add(v)
            # keep the largest connected piece containing part 1
            keep = {1}
            changed = True
            while changed:
                changed = False
                for a, b in g.edges:
                    if a in keep and b in visible and b not in keep:
                        keep.add(b)
                        changed = True
                    if b in keep and a in visible and a not in keep:
                        keep.add(a)
                        changed = True
            comp = composition_from_visible(g, keep)
            from flexparse.infer import PoseEstimate

            locs = {v: (int(rng.integers(0, 5)), int(rng.integers(0, 5))) for v in comp.visible}
            types = {}
            for i, j in comp.edges:
                types[(i, j)] = int(rng.integers(1, g.T(i, j) + 1))
                types[(j, i)] = int(rng.integers(1, g.T(j, i) + 1))
            est = PoseEstimate(composition=comp, locations=locs, types=types, score=0.0, root=min(keep))
            got = score_composition(est, terms, params, g)

            # independent term-by-term accumulation
            expected = 0.0
            for v in comp.visible:
                x, y = locs[v]
                expected += params.appearance_weights[v - 1] * terms.appearance[v - 1, y, x]
            for i, j in comp.edges:
                for a, b in ((i, j), (j, i)):
                    t = types[(a, b)]
                    xa, ya = locs[a]
                    xb, yb = locs[b]
                    r = params.mean_offsets[(a, b)][t - 1]
                    dx, dy = xb - xa - r[0], yb - ya - r[1]
                    w = params.deformation_weights[(a, b)][t - 1]
                    expected += w[0] * dx + w[1] * dx * dx + w[2] * dy + w[3] * dy * dy
                    expected += params.idpr_weights[(a, b)] * terms.idpr[(a, b)][t - 1, ya, xa]
            for i, j in comp.decoupled_edges:
                x, y = locs[i]
                expected += sum(params.part_biases[k - 1] for k in g.subtree_parts(j, away_from=i))
                expected += params.idpr_weights[(i, j)] * terms.idod[(i, j)][y, x]
            assert got == pytest.approx(expected, abs=1e-9)

    def test_location_outside_grid_rejected(self):
        rng = np.random.default_rng(4)
        g = random_tree(rng, 2, 1, 1)
        params = random_params(rng, g)
        terms = random_terms(rng, g, 3, 3)
        from flexparse.infer import PoseEstimate

        comp = composition_from_visible(g, {1})
        est = PoseEstimate(composition=comp, locations={1: (5, 0)}, types={}, score=0.0, root=1)
        with pytest.raises(ValueError):
            score_composition(est, terms, params, g)


class TestTwoPass:
    def test_message_economy(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            g = random_tree(rng, int(rng.integers(2, 8)), 1, 2)
            params = random_params(rng, g)
            terms = random_terms(rng, g, 3, 3)
            table = two_pass_messages(terms, params, g)
            assert table.message_count == 2 * (g.parts - 1)
            base = single_pass_messages(terms, params, g)
            assert base.message_count == g.parts - 1

    def test_two_part_grid_matches_enumeration(self):
        # every root cell: best over {1} and {1,2} at all placements
        rng = np.random.default_rng(6)
        g = PartGraph(parts=2, edges=((1, 2),), type_counts={(1, 2): 1, (2, 1): 1})
        params = random_params(rng, g)
        terms = random_terms(rng, g, 3, 3)
        table = two_pass_messages(terms, params, g)
        w1 = params.appearance_weights[0]
        w2 = params.appearance_weights[1]
        for y in range(3):
            for x in range(3):
                alone = (
                    w1 * terms.appearance[0, y, x]
                    + params.part_biases[1]
                    + params.idpr_weights[(1, 2)] * terms.idod[(1, 2)][y, x]
                )
                paired = -np.inf
                for y2 in range(3):
                    for x2 in range(3):
                        r12 = params.mean_offsets[(1, 2)][0]
                        r21 = params.mean_offsets[(2, 1)][0]
                        wd12 = params.deformation_weights[(1, 2)][0]
                        wd21 = params.deformation_weights[(2, 1)][0]
                        dx, dy = x2 - x - r12[0], y2 - y - r12[1]
                        ex, ey = x - x2 - r21[0], y - y2 - r21[1]
                        v = (
                            w1 * terms.appearance[0, y, x]
                            + w2 * terms.appearance[1, y2, x2]
                            + wd12[0] * dx + wd12[1] * dx * dx + wd12[2] * dy + wd12[3] * dy * dy
                            + wd21[0] * ex + wd21[1] * ex * ex + wd21[2] * ey + wd21[3] * ey * ey
                            + params.idpr_weights[(1, 2)] * terms.idpr[(1, 2)][0, y, x]
                            + params.idpr_weights[(2, 1)] * terms.idpr[(2, 1)][0, y2, x2]
                        )
                        paired = max(paired, v)
                assert table.s_all[1][y, x] == pytest.approx(max(alone, paired), abs=1e-9)

    def test_chain4_all_ten_compositions_reachable(self):
        # drive the optimum onto each composition of a 4-chain in turn
        tc = {}
        for i, j in ((1, 2), (2, 3), (3, 4)):
            tc[(i, j)] = 1
            tc[(j, i)] = 1
        g = PartGraph(parts=4, edges=((1, 2), (2, 3), (3, 4)), type_counts=tc)
        comps = enumerate_compositions(g)
        assert len(comps) == 10
        rng = np.random.default_rng(7)
        params = random_params(rng, g)
        H = W = 5
        for comp in comps:
            appearance = np.full((4, H, W), -500.0)
            for rank, v in enumerate(sorted(comp.visible)):
                appearance[v - 1, 2, rank + 1] = 10.0
            idpr = {d: np.zeros((1, H, W)) for d in g.directed_edges()}
            idod = {d: np.zeros((H, W)) for d in g.directed_edges()}
            terms = TermGrids(graph=g, appearance=appearance, idpr=idpr, idod=idod)
            table = two_pass_messages(terms, params, g)
            _, (root, x, y) = best_over_all(table)
            est = backtrack(table, root, (x, y))
            assert est.composition.visible == comp.visible

    def test_backtrack_rescores_exactly(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            g, params, terms = random_instance(rng)
            table = two_pass_messages(terms, params, g)
            best, (root, x, y) = best_over_all(table)
            est = backtrack(table, root, (x, y))
            assert est.score == pytest.approx(best, abs=1e-9)
            assert score_composition(est, terms, params, g) == pytest.approx(best, abs=1e-6)

    def test_all_decouple_and_no_decouple_extremes(self):
        rng = np.random.default_rng(9)
        g = random_tree(rng, 4, 1, 1)
        params = random_params(rng, g)
        H = W = 3
        # occlusion evidence hugely favorable: only the root survives
        terms = TermGrids(
            graph=g,
            appearance=np.zeros((4, H, W)),
            idpr={d: np.full((1, H, W), -100.0) for d in g.directed_edges()},
            idod={d: np.full((H, W), 100.0) for d in g.directed_edges()},
        )
        table = two_pass_messages(terms, params, g)
        est = backtrack(table, 1, (1, 1))
        assert est.composition.visible == frozenset({1})
        # occlusion evidence hopeless: the full graph survives
        terms = TermGrids(
            graph=g,
            appearance=np.zeros((4, H, W)),
            idpr={d: np.zeros((1, H, W)) for d in g.directed_edges()},
            idod={d: np.full((H, W), -100.0) for d in g.directed_edges()},
        )
        table = two_pass_messages(terms, params, g)
        est = backtrack(table, 1, (1, 1))
        assert est.composition.visible == frozenset({1, 2, 3, 4})

    def test_single_pass_always_full_graph(self):
        rng = np.random.default_rng(10)
        g, params, terms = random_instance(rng)
        table = single_pass_messages(terms, params, g)
        assert sorted(table.s_all) == [1]
        y, x = np.unravel_index(int(table.s_all[1].argmax()), table.s_all[1].shape)
        est = backtrack(table, 1, (int(x), int(y)))
        assert est.composition.visible == frozenset(range(1, g.parts + 1))
        assert score_composition(est, terms, params, g) == pytest.approx(est.score, abs=1e-6)


class TestOracleEquivalence:
    def test_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            g, params, terms = random_instance(rng)
            table = two_pass_messages(terms, params, g)
            best_dp, (root, x, y) = best_over_all(table)
            best_bf, est_bf = brute_force_best(terms, params, g)
            assert best_dp == pytest.approx(best_bf, abs=1e-6)
            est = backtrack(table, root, (x, y))
            assert score_composition(est, terms, params, g) == pytest.approx(best_bf, abs=1e-6)
            assert score_composition(est_bf, terms, params, g) == pytest.approx(best_bf, abs=1e-6)


class TestDetect:
    def test_uniform_background_has_no_detections(self):
        g = PartGraph(parts=2, edges=((1, 2),), type_counts={(1, 2): 1, (2, 1): 1})
        rng = np.random.default_rng(12)
        params = random_params(rng, g)
        # flat, low-evidence terms everywhere
        H = W = 6
        terms = TermGrids(
            graph=g,
            appearance=np.full((2, H, W), -18.0),
            idpr={d: np.full((1, H, W), -1.1) for d in g.directed_edges()},
            idod={d: np.full((H, W), -1.1) for d in g.directed_edges()},
        )
        assert detect(terms, params, g, threshold=0.0) == []

    def test_identical_candidates_collapse_to_one(self):
        # the same two-part pose is a candidate at both of its roots; the
        # backtracked estimates coincide part-for-part, so NMS keeps one
        g = PartGraph(parts=2, edges=((1, 2),), type_counts={(1, 2): 1, (2, 1): 1})
        rng = np.random.default_rng(13)
        params = random_params(rng, g)
        params.mean_offsets[(1, 2)] = np.array([[1.0, 0.0]])
        params.mean_offsets[(2, 1)] = np.array([[-1.0, 0.0]])
        H = W = 4
        appearance = np.full((2, H, W), -50.0)
        appearance[0, 1, 1] = 20.0
        appearance[1, 1, 2] = 20.0
        terms = TermGrids(
            graph=g,
            appearance=appearance,
            idpr={d: np.zeros((1, H, W)) for d in g.directed_edges()},
            idod={d: np.full((H, W), -5.0) for d in g.directed_edges()},
        )
        table = two_pass_messages(terms, params, g)
        best, _ = best_over_all(table)
        ests = detect(terms, params, g, threshold=best - 1.0 - params.svm_bias, table=table)
        assert len(ests) == 1
        assert ests[0].composition.visible == frozenset({1, 2})

    def test_default_nms_is_point_six(self):
        import inspect

        sig = inspect.signature(detect)
        assert sig.parameters["nms_iou"].default == 0.6

    def test_nms_candidate_order_independent(self):
        rng = np.random.default_rng(14)
        g, params, terms = random_instance(rng)
        ests = detect(terms, params, g, threshold=-40.0, max_detections=10)
        again = detect(terms, params, g, threshold=-40.0, max_detections=10)
        assert [e.locations for e in ests] == [e.locations for e in again]
        assert all(a.score >= b.score for a, b in zip(ests, ests[1:]))

    def test_min_parts_filters(self):
        rng = np.random.default_rng(15)
        g, params, terms = random_instance(rng)
        ests = detect(terms, params, g, threshold=-60.0, min_parts=2, max_detections=20)
        assert all(len(e.visible_parts()) >= 2 for e in ests)

    def test_invalid_args_rejected(self):
        rng = np.random.default_rng(16)
        g, params, terms = random_instance(rng)
        with pytest.raises(ValueError):
            detect(terms, params, g, threshold=0.0, nms_iou=0.0)
        with pytest.raises(ValueError):
            detect(terms, params, g, threshold=0.0, min_parts=0)


class TestDetectionsFile:
    def test_roundtrip(self, tmp_path):
        from flexparse.infer import load_detections, save_detections

        rng = np.random.default_rng(17)
        g, params, terms = random_instance(rng)
        ests = detect(terms, params, g, threshold=-40.0, max_detections=5)
        save_detections(tmp_path / "det.json", ests, g.parts, image_ids=["s0"] * len(ests))
        docs = load_detections(tmp_path / "det.json")
        assert len(docs) == len(ests)
        for doc, est in zip(docs, ests):
            assert doc["score"] == pytest.approx(est.score)
            assert doc["image_id"] == "s0"
            vis = {p["id"] for p in doc["parts"] if p.get("visible")}
            assert vis == set(est.visible_parts())
            assert all(("x" in p) == p.get("visible", False) for p in doc["parts"])
