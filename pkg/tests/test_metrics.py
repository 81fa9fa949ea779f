from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgmlc.metrics import average_precision, evaluate


def naive_pr_area(hits, n_pos):
    """Area under the step precision-recall curve, exact arithmetic."""
    if n_pos == 0:
        return Fraction(0)
    area, prev_recall, tp = Fraction(0), Fraction(0), 0
    for r, hit in enumerate(hits, start=1):
        tp += hit
        recall = Fraction(tp, n_pos)
        area += Fraction(tp, r) * (recall - prev_recall)
        prev_recall = recall
    return area


def naive_ranking(p, k):
    return sorted(range(len(p)), key=lambda i: (-p[i], i))[:k]


def naive_evaluate(P, truths, k):
    k = min(k, P.shape[1])
    aps, hits, pooled, positives = [], 0, [], 0
    for v, (p, truth) in enumerate(zip(P, truths)):
        ranked = naive_ranking(list(p), k)
        aps.append(naive_pr_area([lab in truth for lab in ranked], min(len(truth), k)))
        hits += ranked[0] in truth
        positives += min(len(truth), k)
        pooled += [(-p[lab], v, lab, lab in truth) for lab in ranked]
    pooled.sort()
    gap = naive_pr_area([h for *_, h in pooled], positives)
    return float(sum(aps) / len(aps)), hits / len(aps), float(gap)


class TestAveragePrecision:
    def test_hand_example(self):
        assert average_precision(["a", "x", "b"], {"a", "b"}, 20) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)

    def test_perfect(self):
        assert average_precision([3, 1, 7, 0], {1, 3, 7}) == 1.0

    def test_miss(self):
        assert average_precision([0, 1, 2], {5}) == 0.0

    def test_empty_truth(self):
        assert average_precision([0, 1], set()) == 0.0

    def test_cutoff(self):
        assert average_precision([0, 1, 2], {2}, k=2) == 0.0

    def test_duplicates(self):
        with pytest.raises(ValueError):
            average_precision([1, 1], {1})


class TestEvaluate:
    def test_single_video(self):
        r = evaluate(np.array([[0.9, 0.1, 0.3]]), [{0}])
        assert (r.map, r.hit, r.gap) == (1.0, 1.0, 1.0)

    def test_two_video_example(self):
        # labels a, b, c = 0, 1, 2
        P = np.array([[0.9, 0.0, 0.0], [0.0, 0.7, 0.8]])
        r = evaluate(P, [{0}, {1}])
        assert r.hit == 0.5
        assert r.map == pytest.approx(0.75, abs=1e-15)
        assert r.gap == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((2, 3)), [{0}])

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((0, 3)), [])

    def test_top_one_single_truth(self):
        rng = np.random.default_rng(0)
        P = rng.uniform(size=(30, 6))
        truths = [{int(rng.integers(6))} for _ in range(30)]
        r = evaluate(P, truths, k=1)
        assert r.map == r.hit

    def test_random_predictions_near_positive_rate(self):
        rng = np.random.default_rng(1)
        L, N = 200, 500
        truths = [set(rng.choice(L, size=2, replace=False).tolist()) for _ in range(N)]
        r = evaluate(rng.uniform(size=(N, L)), truths)
        rate = 2 / L
        assert r.hit < 5 * rate
        assert r.map < 0.05 and r.gap < 0.05

    def test_per_video(self):
        r = evaluate(np.array([[0.2, 0.8]]), [{1}], ids=["clip"])
        (v,) = r.per_video
        assert v.id == "clip" and v.ranked == ((1, 0.8), (0, 0.2)) and v.ap == 1.0

    def test_report_formats(self):
        r = evaluate(np.array([[0.2, 0.8]]), [{1}])
        assert "map=1.000000" in r.key_values() and "hit=" in r.key_values() and "gap=" in r.key_values()
        assert "MAP" in r.table()

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n, L = int(rng.integers(1, 6)), int(rng.integers(1, 11))
            # coarse grid forces ties
            P = rng.integers(0, 5, size=(n, L)) / 4
            truths = [set(np.flatnonzero(rng.uniform(size=L) < 0.3).tolist()) for _ in range(n)]
            k = int(rng.integers(1, 25))
            r = evaluate(P, truths, k)
            m, h, g = naive_evaluate(P, truths, k)
            assert r.hit == h
            assert abs(r.map - m) <= 1e-12 and abs(r.gap - g) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.uniform(size=(6, 8))
        truths = [set(np.flatnonzero(rng.uniform(size=8) < 0.3).tolist()) for _ in range(6)]
        perm = rng.permutation(6)
        a = evaluate(P, truths)
        b = evaluate(P[perm], [truths[i] for i in perm])
        assert a.map == pytest.approx(b.map, abs=1e-15)
        assert a.hit == b.hit
        assert a.gap == pytest.approx(b.gap, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_promoting_a_hit_never_hurts(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.uniform(size=(4, 10))
        truths = [set(rng.choice(10, size=3, replace=False).tolist()) for _ in range(4)]
        v = int(rng.integers(4))
        truth = truths[v]
        hit = int(rng.choice(sorted(truth)))
        misses = [i for i in range(10) if i not in truth and P[v, i] > P[v, hit]]
        if not misses:
            return
        miss = misses[0]
        Q = P.copy()
        Q[v, hit], Q[v, miss] = P[v, miss], P[v, hit]
        before, after = evaluate(P, truths), evaluate(Q, truths)
        assert after.map >= before.map - 1e-15
        assert after.gap >= before.gap - 1e-15
