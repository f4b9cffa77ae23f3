import json
import math

import numpy as np
import pytest
from scipy import stats

from trialadapt.errors import AdaptationExhausted, InsufficientDataError
from trialadapt.inference import CollapsedStat, Predictive, rho_star
from trialadapt.numerics import QuadratureSpec, integrate_1d
from trialadapt.sensitivity import (
    SideSensitivity,
    _rank_key,
    dlog_predictive_dn,
    dlog_predictive_dn_quadrature,
    is_candidate,
    log_predictive_n,
    rank_candidates,
    sensitivity_of_predictive,
    side_sensitivity,
)
from trialadapt.trial import Arm, BeliefTier, MatchedPair

from conftest import random_pair
from oracles import loo_sensitivity


def rho_at_n(pair, side, n):
    """rho* with ``side``'s size set to a continuous ``n``, mean and v held fixed."""
    stats_ = {a: CollapsedStat.from_values(pair.side(a).outcomes) for a in Arm}
    s = stats_[side]
    v = s.ss / s.n
    moved = CollapsedStat(n, s.mean * n, n * (v + s.mean ** 2))
    stats_[side] = moved
    pt = Predictive.from_stat(stats_[Arm.Treatment])
    pc = Predictive.from_stat(stats_[Arm.Control])
    return integrate_1d(lambda x: pt.pdf(x) * pc.cdf(x), QuadratureSpec(abs_tol=1e-12, rel_tol=1e-12)).value


class TestLogDerivative:
    @pytest.mark.parametrize("n", [3, 4, 7, 25])
    def test_closed_form_matches_finite_difference(self, rng, n):
        s = CollapsedStat.from_values(rng.normal(size=n))
        x = np.linspace(s.mean - 3, s.mean + 3, 9)
        h = 1e-5
        v = s.ss / n
        fd = (log_predictive_n(x, s.mean, v, n + h) - log_predictive_n(x, s.mean, v, n - h)) / (2 * h)
        np.testing.assert_allclose(dlog_predictive_dn(x, s), fd, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("n", [3, 6, 30])
    def test_quadrature_matches_closed_form(self, rng, n):
        s = CollapsedStat.from_values(rng.normal(2, 3, n))
        x = np.linspace(s.mean - 10, s.mean + 10, 13)
        np.testing.assert_allclose(dlog_predictive_dn_quadrature(x, s), dlog_predictive_dn(x, s), rtol=1e-6,
                                   atol=1e-8)

    def test_predictive_derivative_integrates_to_zero(self, rng):
        s = CollapsedStat.from_values(rng.normal(size=6))
        total = integrate_1d(lambda x: sensitivity_of_predictive(x, s), QuadratureSpec()).value
        assert total == pytest.approx(0.0, abs=1e-7)

    def test_methods_agree(self, rng):
        s = CollapsedStat.from_values(rng.normal(size=8))
        x = np.array([-1.0, 0.0, 0.5, 2.0])
        np.testing.assert_allclose(sensitivity_of_predictive(x, s, method="quadrature"),
                                   sensitivity_of_predictive(x, s), rtol=1e-5, atol=1e-9)


class TestSideSensitivity:
    @pytest.mark.parametrize("side", list(Arm))
    def test_matches_continuous_n_derivative(self, rng, side):
        pair = random_pair(rng, nc=9, nt=14, shift=0.7)
        n = pair.side(side).n
        h = 1e-3
        fd = (rho_at_n(pair, side, n + h) - rho_at_n(pair, side, n - h)) / (2 * h)
        got = side_sensitivity(pair, side)
        assert got.value == pytest.approx(fd, rel=1e-4, abs=1e-9)
        assert got.n_current == n and got.converged

    def test_rank_agreement_with_leave_one_out(self, rng):
        ours, oracle = [], []
        for _ in range(8):
            pair = random_pair(rng)
            for side in Arm:
                ours.append(abs(side_sensitivity(pair, side).value))
                oracle.append(abs(loo_sensitivity(pair, side)))
        assert stats.spearmanr(ours, oracle).statistic >= 0.8

    def test_identical_sides_mirror(self, rng):
        y = rng.normal(size=10)
        pair = MatchedPair.from_outcomes(y, y)
        c, t = side_sensitivity(pair, Arm.Control), side_sensitivity(pair, Arm.Treatment)
        assert abs(c.value) == pytest.approx(abs(t.value), rel=1e-6, abs=1e-12)

    def test_large_side_is_less_sensitive(self, rng):
        pair = MatchedPair.from_outcomes(rng.normal(0, 1, 5), rng.normal(0.5, 1, 100))
        assert abs(side_sensitivity(pair, Arm.Treatment).value) < abs(side_sensitivity(pair, Arm.Control).value)

    def test_diminishing_with_size(self):
        gen = np.random.default_rng(11)
        base_c, base_t = gen.normal(0, 1, 400), gen.normal(0.4, 1, 400)
        mags = []
        for n in (5, 20, 80, 320):
            pair = MatchedPair.from_outcomes(base_c[:40], base_t[:n])
            mags.append(abs(side_sensitivity(pair, Arm.Treatment).value))
        assert all(a > b for a, b in zip(mags, mags[1:]))

    def test_deterministic(self, rng):
        pair = random_pair(rng)
        assert side_sensitivity(pair, Arm.Control) == side_sensitivity(pair, Arm.Control)

    def test_mirrored_pair(self, rng):
        # reflecting every outcome and swapping arms maps rho* to itself
        pair = random_pair(rng)
        mirror = MatchedPair.from_outcomes(-pair.treatment.outcomes, -pair.control.outcomes)
        assert rho_star(mirror).rho == pytest.approx(rho_star(pair).rho, abs=1e-7)
        assert side_sensitivity(mirror, Arm.Control).value == pytest.approx(
            side_sensitivity(pair, Arm.Treatment).value, rel=1e-6, abs=1e-12)

    def test_needs_both_sides(self, rng):
        pair = MatchedPair.from_outcomes(rng.normal(size=2), rng.normal(size=9))
        with pytest.raises(InsufficientDataError):
            side_sensitivity(pair, Arm.Treatment)

    def test_flags_minimum_size(self, rng):
        pair = MatchedPair.from_outcomes(rng.normal(size=3), rng.normal(size=9))
        assert side_sensitivity(pair, Arm.Control).minimum_size
        assert not side_sensitivity(pair, Arm.Treatment).minimum_size


def pairs_from(rng, sizes):
    return [MatchedPair.from_outcomes(rng.normal(0, 1, nc), rng.normal(0.3, 1, nt), BeliefTier(i))
            for i, (nc, nt) in enumerate(sizes)]


class TestRanking:
    def test_ascending_and_complete(self, rng):
        report = rank_candidates(pairs_from(rng, [(6, 7), (30, 25), (9, 3)]))
        mags = [abs(e.value) for e in report.ranking]
        assert mags == sorted(mags)
        # (tier 2, treatment) has 3 members and would drop below the floor
        assert {(e.tier, e.arm) for e in report.entries} == {
            (t, a) for t in BeliefTier for a in Arm} - {(BeliefTier.BelievesTreatment, Arm.Treatment)}

    def test_candidates(self, rng):
        assert not is_candidate(MatchedPair.from_outcomes(rng.normal(size=2), rng.normal(size=10)), Arm.Treatment)
        assert not is_candidate(MatchedPair.from_outcomes(rng.normal(size=3), rng.normal(size=10)), Arm.Control)
        assert is_candidate(MatchedPair.from_outcomes(rng.normal(size=3), rng.normal(size=10)), Arm.Treatment)

    def test_tie_break(self):
        y = np.linspace(-1, 1, 8)
        pairs = [MatchedPair.from_outcomes(y, y, BeliefTier.BelievesControl),
                 MatchedPair.from_outcomes(y, y, BeliefTier.BelievesTreatment)]
        order = [(e.arm, e.tier) for e in rank_candidates(pairs).ranking]
        assert order == [(Arm.Control, BeliefTier.BelievesControl), (Arm.Control, BeliefTier.BelievesTreatment),
                         (Arm.Treatment, BeliefTier.BelievesControl),
                         (Arm.Treatment, BeliefTier.BelievesTreatment)]

    def test_tie_prefers_larger_group(self):
        entries = [SideSensitivity(BeliefTier.BelievesControl, Arm.Control, -1e-3, 0, 10),
                   SideSensitivity(BeliefTier.Uncertain, Arm.Treatment, 1e-3, 0, 40)]
        assert sorted(entries, key=_rank_key)[0].n_current == 40

    def test_exhausted(self, rng):
        with pytest.raises(AdaptationExhausted):
            rank_candidates(pairs_from(rng, [(3, 3), (2, 10), (0, 0)]))

    def test_json(self, rng):
        report = rank_candidates(pairs_from(rng, [(6, 7), (12, 10), (5, 5)]))
        data = json.loads(report.to_json())
        assert data["head"] == data["ranking"][0]
        assert {"arm", "tier", "value", "err", "n", "minimum_size"} <= set(data["head"])
        assert len(data["entries"]) == len(report.entries)
        assert all(math.isfinite(e["value"]) for e in data["entries"])
