"""Expected sensitivity of rho* to shrinking one sub-group.

The data enter the collapsed predictive only through ``n``, the sample mean
and the per-member mean square ``v = SS / n``.  Holding the mean and ``v`` at
their observed (empirically expected) values makes the predictive a smooth
function of ``n``:

    I(x; n) = ∫∫ sigma**-(n+1) exp(-[(x - m)**2 + n q(m)] / 2 sigma**2) dm dsigma,
    q(m) = (m - mean)**2 + v.

Differentiating under the integral gives two terms, ``-ln sigma`` from
``sigma**-n`` and ``-q(m) / 2 sigma**2`` from the data exponent.  After the
Gaussian m-integral (coefficient ``a = sqrt(n + 1)``) both reduce to 1-D
sigma integrals, which here are written in the Gamma variable
``t = c / 2 sigma**2``:

    S[I] / I = -[ln(c/2)/2 - E[ln t]/2 + 1/(2(n+1)) + B E[t] / (c n)],
    B = SS + n (x - mean)**2 / (n + 1)**2,   t ~ Gamma((n - 1) / 2).

``E[ln t]`` and ``E[t]`` are the digamma function and ``(n - 1)/2``; the
quadrature route evaluates them numerically instead and serves as a check.

The normalised predictive p(x) = I / ∫I then has ``dp/dn = p (r - E_p[r])``
with ``r = S[I] / I``, and the treatment-side sensitivity of
``rho* = ∫ p_t F_c`` is ``Cov_{p_t}(r_t, F_c)``.  The control side is the
mirror image with a sign flip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import AdaptationExhausted, InsufficientDataError
from .inference import (
    MIN_INFERENCE_SIZE,
    CollapsedStat,
    IntegrationDomain,
    OutcomeTransform,
    Predictive,
    collapse,
)
from .numerics import QuadratureSpec, integrate_1d
from .trial import Arm, BeliefTier, MatchedPair, TrialSnapshot

#: A side is a removal candidate only while it keeps this many members afterwards.
REMOVAL_FLOOR = MIN_INFERENCE_SIZE


def log_predictive_n(x, mean, v, n):
    """log I(x; n) including every n-dependent constant (continuous n)."""
    x = np.asarray(x, dtype=float)
    alpha = 0.5 * (n - 1)
    c = n * v + n / (n + 1.0) * (x - mean) ** 2
    return (0.5 * math.log(2 * math.pi) - 0.5 * math.log(n + 1.0) - math.log(2.0)
            + special.gammaln(alpha) - alpha * np.log(0.5 * c))


def dlog_predictive_dn(x, stat: CollapsedStat):
    """r(x) = d/dn log I(x; n) at the observed n, mean and v, in closed form."""
    x = np.asarray(x, dtype=float)
    n = stat.n
    v = stat.ss / n
    alpha = 0.5 * (n - 1)
    d2 = (x - stat.mean) ** 2
    c = n * v + n / (n + 1.0) * d2
    return (-0.5 / (n + 1.0) + 0.5 * special.digamma(alpha) - 0.5 * np.log(0.5 * c)
            - alpha * (v + d2 / (n + 1.0) ** 2) / c)


def _gamma_moments(alpha, quad: QuadratureSpec):
    """(E[ln t], E[t]) for t ~ Gamma(alpha) by quadrature.

    Integrated in s with t = alpha * exp(s / sqrt(alpha)) so the weight is
    centred and of unit width for every alpha.
    """
    root = math.sqrt(alpha)

    def integrand(s):
        # the weight is exp(-t), so anything past log t = 700 is already zero
        log_t = np.minimum(math.log(alpha) + s / root, 700.0)
        t = np.exp(log_t)
        logw = alpha * log_t - t - (alpha * math.log(alpha) - alpha)
        w = np.exp(logw)
        return np.vstack([w, w * log_t, w * t])

    res = integrate_1d(integrand, quad.on(-math.inf, math.inf), warn=False)
    z, e_log, e_t = res.value
    return e_log / z, e_t / z, res.converged


def dlog_predictive_dn_quadrature(x, stat: CollapsedStat, quad: QuadratureSpec = QuadratureSpec()):
    """Same as :func:`dlog_predictive_dn` with the sigma integrals done numerically."""
    x = np.asarray(x, dtype=float)
    n = stat.n
    d2 = (x - stat.mean) ** 2
    c = stat.ss + n / (n + 1.0) * d2
    b = stat.ss + n * d2 / (n + 1.0) ** 2
    e_log, e_t, _ = _gamma_moments(0.5 * (n - 1), quad)
    return -(0.5 * np.log(0.5 * c) - 0.5 * e_log + 0.5 / (n + 1.0) + b * e_t / (c * n))


def sensitivity_of_predictive(x, stat: CollapsedStat, quad: QuadratureSpec = QuadratureSpec(),
                              domain=IntegrationDomain.FullLine, method="closed"):
    """d/dn of the normalised predictive density at ``x``.

    ``method`` selects how the sigma integrals are evaluated: ``"closed"``
    (digamma) or ``"quadrature"``.
    """
    r_fn = dlog_predictive_dn if method == "closed" else (lambda u, s: dlog_predictive_dn_quadrature(u, s, quad))
    pred = Predictive.from_stat(stat, domain)
    mean_r = integrate_1d(lambda u: pred.pdf(u) * r_fn(u, stat), quad.on(*domain.bounds), warn=False).value
    return pred.pdf(x) * (r_fn(x, stat) - mean_r)


@dataclass(frozen=True)
class SideSensitivity:
    tier: BeliefTier
    arm: Arm
    value: float
    err_estimate: float
    n_current: int
    minimum_size: bool = False
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "arm": self.arm.name,
            "tier": self.tier.name,
            "value": self.value,
            "err": self.err_estimate,
            "n": self.n_current,
            "minimum_size": self.minimum_size,
        }


def _side_value(pred_side: Predictive, stat_side: CollapsedStat, pred_other: Predictive,
                quad: QuadratureSpec):
    """Cov_{p_side}(r_side, F_other) with its error estimate."""

    def integrand(x):
        p = pred_side.pdf(x)
        r = dlog_predictive_dn(x, stat_side)
        F = pred_other.cdf(x)
        return np.vstack([p * r * F, p * r, p * F])

    res = integrate_1d(integrand, quad.on(*pred_side.domain.bounds), warn=False)
    e_rf, e_r, e_f = res.value
    return e_rf - e_r * e_f, res.error * (1.0 + abs(e_r)), res.converged


def side_sensitivity(pair: MatchedPair, side: Arm, transform=OutcomeTransform.Identity,
                     quad: QuadratureSpec = QuadratureSpec(), domain=IntegrationDomain.FullLine) -> SideSensitivity:
    """E[d rho* / d n] for one side of a matched pair."""
    side = Arm(side)
    stats, preds = {}, {}
    for arm in Arm:
        data = pair.side(arm)
        if data.n < MIN_INFERENCE_SIZE:
            raise InsufficientDataError(
                f"sub-group {data.label} has n={data.n}, need at least {MIN_INFERENCE_SIZE}",
                subgroup=(data.arm, data.tier),
            )
        stats[arm] = collapse(data, transform)
        preds[arm] = Predictive.from_stat(stats[arm], domain)
    other = Arm.Control if side == Arm.Treatment else Arm.Treatment
    value, err, ok = _side_value(preds[side], stats[side], preds[other], quad)
    if side == Arm.Control:
        value = -value
    n = pair.side(side).n
    return SideSensitivity(pair.tier, side, float(value), float(err), n, n <= MIN_INFERENCE_SIZE, ok)


def _rank_key(s: SideSensitivity):
    # Rounding lets numerically equal magnitudes fall through to the tie-breaks.
    return (float(f"{abs(s.value):.9g}"), -s.n_current, int(s.arm), int(s.tier))


@dataclass(frozen=True)
class SensitivityReport:
    entries: tuple
    ranking: tuple
    computed_at_step: int = 0

    @property
    def head(self) -> SideSensitivity:
        return self.ranking[0]

    def to_dict(self) -> dict:
        return {
            "computed_at_step": self.computed_at_step,
            "entries": [e.to_dict() for e in self.entries],
            "ranking": [e.to_dict() for e in self.ranking],
            "head": self.head.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def is_candidate(pair: MatchedPair, side: Arm) -> bool:
    """Both sides analysable and ``side`` stays analysable after one removal."""
    return (pair.control.n >= MIN_INFERENCE_SIZE and pair.treatment.n >= MIN_INFERENCE_SIZE
            and pair.side(side).n - 1 >= REMOVAL_FLOOR)


def rank_candidates(snapshot, transform=OutcomeTransform.Identity, quad: QuadratureSpec = QuadratureSpec(),
                    domain=IntegrationDomain.FullLine) -> SensitivityReport:
    """Rank every eligible (pair, side) by |E[d rho*/dn]|, smallest first.

    ``snapshot`` may be a :class:`TrialSnapshot` or a sequence of matched
    pairs.  Ties are broken by larger current size, then Control before
    Treatment, then tier order.
    """
    if isinstance(snapshot, TrialSnapshot):
        pairs, step = snapshot.pairs, snapshot.step
    else:
        pairs, step = tuple(snapshot), 0
    entries = []
    for pair in pairs:
        for arm in Arm:
            if is_candidate(pair, arm):
                entries.append(side_sensitivity(pair, arm, transform, quad, domain))
    if not entries:
        raise AdaptationExhausted("no sub-group can lose a member without dropping below the size floor")
    return SensitivityReport(tuple(entries), tuple(sorted(entries, key=_rank_key)), step)
