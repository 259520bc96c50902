import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellshift.celleval import (
    auprc,
    auroc,
    average_ranks,
    bh_adjust,
    pearson,
    ranksum_p,
    spearman,
    wilcoxon_pvals,
)
from cellshift.errors import ArgumentError


# ---------------------------------------------------------------------------
# oracles (kept independent of the library code paths they check)


def ranksum_p_enumeration(a, b):
    """Two-sided exact p by enumerating every group assignment of the
    pooled ranks. Tie-free inputs only."""
    pooled = np.concatenate([a, b])
    n1 = len(a)
    ranks = {v: r + 1 for r, v in enumerate(sorted(pooled))}
    w_obs = sum(ranks[v] for v in a)
    all_ranks = list(range(1, len(pooled) + 1))
    total = le = ge = 0
    for combo in itertools.combinations(all_ranks, n1):
        s = sum(combo)
        total += 1
        le += s <= w_obs
        ge += s >= w_obs
    return min(1.0, 2.0 * min(le / total, ge / total))


def ranksum_p_poly(n1, n2, w_obs):
    """Exact two-sided p via generating-function coefficients (independent
    formulation: polynomial products over q^rank, subset size tracked)."""
    # poly[k] maps sum -> count of k-subsets
    poly = [{0: 1}] + [dict() for _ in range(n1)]
    for rank in range(1, n1 + n2 + 1):
        for k in range(min(rank, n1), 0, -1):
            for s, c in list(poly[k - 1].items()):
                poly[k][s + rank] = poly[k].get(s + rank, 0) + c
    counts = poly[n1]
    total = sum(counts.values())
    le = sum(c for s, c in counts.items() if s <= w_obs)
    ge = sum(c for s, c in counts.items() if s >= w_obs)
    return min(1.0, 2.0 * min(le / total, ge / total))


def bh_oracle(p):
    """Hand step-up rule: q_(i) = min_{j>=i} min(1, p_(j) m / j)."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    q = [0.0] * m
    best = 1.0
    for pos in range(m - 1, -1, -1):
        i = order[pos]
        best = min(best, p[i] * m / (pos + 1))
        q[i] = best
    return q


def spearman_oracle(x, y):
    """Counting ranks O(n^2), then textbook Pearson."""

    def ranks(v):
        out = []
        for i, vi in enumerate(v):
            less = sum(1 for vj in v if vj < vi)
            equal = sum(1 for vj in v if vj == vi)
            out.append(less + (equal + 1) / 2.0)
        return out

    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return 0.0 if den == 0 else num / den


def auroc_pairwise_oracle(labels, scores):
    """Pairwise win + half-tie fraction over all (positive, negative) pairs."""
    wins = ties = total = 0
    for sp, lp in zip(scores, labels):
        if not lp:
            continue
        for sn, ln in zip(scores, labels):
            if ln:
                continue
            total += 1
            wins += sp > sn
            ties += sp == sn
    return (wins + 0.5 * ties) / total


def auprc_threshold_oracle(labels, scores):
    """Step sum over explicit thresholds (descending distinct scores)."""
    pos = sum(labels)
    area = 0.0
    recall_prev = 0.0
    for thr in sorted(set(scores), reverse=True):
        predicted = [s >= thr for s in scores]
        tp = sum(1 for p, l in zip(predicted, labels) if p and l)
        fp = sum(1 for p, l in zip(predicted, labels) if p and not l)
        recall = tp / pos
        precision = tp / (tp + fp)
        area += (recall - recall_prev) * precision
        recall_prev = recall
    return area


# ---------------------------------------------------------------------------


class TestRanksum:
    def test_all_tied_gives_one(self):
        assert ranksum_p(np.ones(5), np.ones(7)) == 1.0

    def test_separated_small_sample_closed_form(self):
        # fully separated 3 vs 3: p = 2 / C(6,3) = 0.1
        p = ranksum_p(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert abs(p - 0.1) < 1e-15

    def test_exact_path_equals_enumeration_grid(self):
        """Every tie-free n1+n2 <= 10 shape matches the enumeration oracle
        exactly."""
        rng = np.random.default_rng(0)
        for n1 in range(1, 10):
            for n2 in range(1, 11 - n1):
                for _ in range(3):
                    pooled = rng.permutation(np.arange(1.0, n1 + n2 + 1.0) * 1.7 + 0.3)
                    a, b = pooled[:n1], pooled[n1:]
                    assert ranksum_p(a, b) == ranksum_p_enumeration(a, b)

    def test_symmetry_between_samples(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=4), rng.normal(size=5)
        assert abs(ranksum_p(a, b) - ranksum_p(b, a)) < 1e-15

    def test_normal_approx_close_to_exact_at_n40(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.normal(size=20)
            b = rng.normal(loc=rng.uniform(-1, 1), size=20)
            approx = ranksum_p(a, b)  # n = 40 > exact limit
            pooled = np.concatenate([a, b])
            ranks = {v: r + 1 for r, v in enumerate(sorted(pooled))}
            w_obs = sum(ranks[v] for v in a)
            exact = ranksum_p_poly(20, 20, w_obs)
            assert abs(approx - exact) < 0.01

    def test_empty_sample_rejected(self):
        with pytest.raises(ArgumentError):
            ranksum_p(np.zeros(0), np.ones(3))

    def test_wilcoxon_pvals_columns(self):
        rng = np.random.default_rng(3)
        pert = rng.normal(size=(6, 4))
        ctrl = rng.normal(size=(5, 4))
        pv = wilcoxon_pvals(pert, ctrl)
        assert pv.shape == (4,)
        for g in range(4):
            assert pv[g] == ranksum_p(pert[:, g], ctrl[:, g])


class TestBH:
    def test_single_p_unchanged(self):
        assert bh_adjust(np.array([0.37]))[0] == 0.37

    def test_all_equal_stay_equal(self):
        out = bh_adjust(np.full(6, 0.2))
        assert np.all(out == 0.2)

    def test_hand_case(self):
        out = bh_adjust(np.array([0.01, 0.04, 0.03]))
        assert np.allclose(out, [0.03, 0.04, 0.04], atol=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ArgumentError):
            bh_adjust(np.array([0.5, 1.2]))

    def test_fuzz_against_hand_rule(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            m = int(rng.integers(1, 40))
            p = rng.uniform(size=m)
            if rng.random() < 0.3:  # inject ties
                p = np.round(p, 1)
            got = bh_adjust(p)
            expect = bh_oracle(list(p))
            assert np.max(np.abs(got - np.array(expect))) < 1e-12
            assert np.all(got >= p - 1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_permutation_equivariance_and_monotone(self, p, rand):
        p = np.array(p)
        perm = list(range(len(p)))
        rand.shuffle(perm)
        perm = np.array(perm)
        direct = bh_adjust(p[perm])
        permuted = bh_adjust(p)[perm]
        assert np.max(np.abs(direct - permuted)) < 1e-15
        adj = bh_adjust(p)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)


class TestCorrelations:
    def test_pearson_perfect_and_zero_variance(self):
        x = np.array([1.0, 2.0, 3.0])
        assert abs(pearson(x, 2 * x + 1) - 1.0) < 1e-12
        assert abs(pearson(x, -x) + 1.0) < 1e-12
        assert pearson(x, np.ones(3)) == 0.0

    def test_spearman_matches_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            x = rng.integers(0, 6, size=n).astype(float)  # plenty of ties
            y = rng.integers(0, 6, size=n).astype(float)
            assert abs(spearman(x, y) - spearman_oracle(list(x), list(y))) < 1e-9

    def test_average_ranks_ties(self):
        assert np.allclose(average_ranks(np.array([3.0, 1.0, 3.0])), [2.5, 1.0, 2.5])


class TestRankingCurves:
    def test_perfect_separation(self):
        labels = np.array([0, 0, 1, 1], dtype=bool)
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        assert auroc(labels, scores) == 1.0
        assert auprc(labels, scores) == 1.0

    def test_all_tied_scores(self):
        labels = np.array([0, 1, 0, 1], dtype=bool)
        scores = np.zeros(4)
        assert auroc(labels, scores) == 0.5
        assert abs(auprc(labels, scores) - 0.5) < 1e-12

    def test_six_item_hand_case(self):
        labels = np.array([1, 0, 1, 1, 0, 0], dtype=bool)
        scores = np.array([0.9, 0.8, 0.8, 0.4, 0.3, 0.1])
        assert auroc(labels, scores) == auroc_pairwise_oracle(list(labels), list(scores))

    def test_auroc_matches_pairwise_oracle_up_to_12(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n = int(rng.integers(2, 13))
            labels = rng.integers(0, 2, size=n).astype(bool)
            if labels.all() or not labels.any():
                continue
            scores = rng.integers(0, 5, size=n).astype(float)
            assert auroc(labels, scores) == auroc_pairwise_oracle(list(labels), list(scores))

    def test_auprc_matches_threshold_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(2, 13))
            labels = rng.integers(0, 2, size=n).astype(bool)
            if labels.all() or not labels.any():
                continue
            scores = rng.normal(size=n).round(1)
            got = auprc(labels, scores)
            expect = auprc_threshold_oracle(list(labels), list(scores))
            assert abs(got - expect) < 1e-9

    def test_single_class_rejected(self):
        with pytest.raises(ArgumentError):
            auroc(np.array([True, True]), np.array([0.1, 0.2]))
        with pytest.raises(ArgumentError):
            auprc(np.array([False, False]), np.array([0.1, 0.2]))
