import numpy as np
import pytest

from flexparse.model import PartGraph
from flexparse.oracle import brute_force_best, count_compositions, enumerate_compositions
from helpers import random_params, random_terms, random_tree


def chain(N):
    edges = tuple((i, i + 1) for i in range(1, N))
    tc = {}
    for i, j in edges:
        tc[(i, j)] = 1
        tc[(j, i)] = 1
    return PartGraph(parts=N, edges=edges, type_counts=tc)


def star(leaves):
    edges = tuple((1, k) for k in range(2, leaves + 2))
    tc = {}
    for i, j in edges:
        tc[(i, j)] = 1
        tc[(j, i)] = 1
    return PartGraph(parts=leaves + 1, edges=edges, type_counts=tc)


class TestEnumeration:
    def test_chain3_has_six(self):
        assert len(enumerate_compositions(chain(3))) == 6

    def test_single_node(self):
        g = PartGraph(parts=1, edges=(), type_counts={})
        comps = enumerate_compositions(g)
        assert len(comps) == 1
        assert comps[0].visible == frozenset({1})
        assert comps[0].decoupled_edges == ()

    def test_star_plus_three_leaves_has_eleven(self):
        assert len(enumerate_compositions(star(3))) == 11

    def test_entries_unique_and_connected(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            g = random_tree(rng, int(rng.integers(1, 10)))
            comps = enumerate_compositions(g)
            seen = {c.visible for c in comps}
            assert len(seen) == len(comps)
            for c in comps:
                # independent connectivity check by BFS over the induced set
                start = min(c.visible)
                reach = {start}
                frontier = [start]
                while frontier:
                    v = frontier.pop()
                    for w in g.neighbors(v):
                        if w in c.visible and w not in reach:
                            reach.add(w)
                            frontier.append(w)
                assert reach == set(c.visible)
                for i, j in c.decoupled_edges:
                    assert i in c.visible and j not in c.visible


class TestCounting:
    def test_chain_formula(self):
        for N in range(1, 13):
            assert count_compositions(chain(N)) == N * (N + 1) // 2

    def test_star(self):
        assert count_compositions(star(3)) == 11

    def test_matches_enumeration_on_random_trees(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            g = random_tree(rng, int(rng.integers(1, 13)))
            assert count_compositions(g) == len(enumerate_compositions(g))


class TestBruteForce:
    def test_single_part_is_best_appearance_cell(self):
        g = PartGraph(parts=1, edges=(), type_counts={})
        rng = np.random.default_rng(2)
        params = random_params(rng, g)
        terms = random_terms(rng, g, 4, 5)
        score, est = brute_force_best(terms, params, g)
        grid = params.appearance_weights[0] * terms.appearance[0]
        assert score == pytest.approx(float(grid.max()), abs=1e-12)
        x, y = est.locations[1]
        assert grid[y, x] == pytest.approx(score, abs=1e-12)

    def test_two_part_hand_enumeration(self):
        g = PartGraph(parts=2, edges=((1, 2),), type_counts={(1, 2): 1, (2, 1): 1})
        rng = np.random.default_rng(3)
        params = random_params(rng, g)
        terms = random_terms(rng, g, 2, 2)
        score, est = brute_force_best(terms, params, g)

        best = -np.inf
        cells = [(x, y) for y in range(2) for x in range(2)]
        w1, w2 = params.appearance_weights
        for x, y in cells:
            alone1 = (w1 * terms.appearance[0, y, x] + params.part_biases[1]
                      + params.idpr_weights[(1, 2)] * terms.idod[(1, 2)][y, x])
            alone2 = (w2 * terms.appearance[1, y, x] + params.part_biases[0]
                      + params.idpr_weights[(2, 1)] * terms.idod[(2, 1)][y, x])
            best = max(best, alone1, alone2)
        for x1, y1 in cells:
            for x2, y2 in cells:
                r12 = params.mean_offsets[(1, 2)][0]
                r21 = params.mean_offsets[(2, 1)][0]
                w12 = params.deformation_weights[(1, 2)][0]
                w21 = params.deformation_weights[(2, 1)][0]
                dx, dy = x2 - x1 - r12[0], y2 - y1 - r12[1]
                ex, ey = x1 - x2 - r21[0], y1 - y2 - r21[1]
                v = (w1 * terms.appearance[0, y1, x1] + w2 * terms.appearance[1, y2, x2]
                     + w12[0] * dx + w12[1] * dx * dx + w12[2] * dy + w12[3] * dy * dy
                     + w21[0] * ex + w21[1] * ex * ex + w21[2] * ey + w21[3] * ey * ey
                     + params.idpr_weights[(1, 2)] * terms.idpr[(1, 2)][0, y1, x1]
                     + params.idpr_weights[(2, 1)] * terms.idpr[(2, 1)][0, y2, x2])
                best = max(best, v)
        assert score == pytest.approx(best, abs=1e-9)

    def test_budget_guard(self):
        g = chain(6)
        tc = {d: 2 for d in g.type_counts}
        g6 = PartGraph(parts=6, edges=g.edges, type_counts=tc)
        rng = np.random.default_rng(4)
        params = random_params(rng, g6)
        terms = random_terms(rng, g6, 7, 7)
        with pytest.raises(ValueError, match="too large"):
            brute_force_best(terms, params, g6)
