"""Bayesian comparison of a matched pair's outcome distributions.

Each sub-group is modelled as i.i.d. normal with unknown location ``m`` and
scale ``sigma`` under flat priors.  Integrating both parameters out of the
predictive for a new outcome ``x`` leaves a power of the single statistic

    c(x) = x**2 + sum_sq - (x + sum)**2 / (n + 1)
         = SS + n/(n+1) * (x - mean)**2

namely ``I(x) ∝ c(x) ** -((n - 1) / 2)``: a Student-t with ``n - 2`` degrees of
freedom, location ``mean`` and squared scale ``(n + 1) SS / (n (n - 2))``.
The t form is what makes closed-form normalisation possible, and it is only
proper for ``n >= 3``.

The pair-level functional is the probability that a treated participant does
better than a control participant, ``rho* = P(Y_c < X_t)`` under the two
posterior predictives.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special
from scipy.signal import fftconvolve

from .errors import (
    InsufficientDataError,
    InvalidInputError,
    NoEvidenceError,
    SingularStatisticError,
)
from .numerics import QuadratureSpec, integrate_1d
from .trial import BeliefTier, MatchedPair, SubGroupData

logger = logging.getLogger(__name__)

#: Smallest sub-group the collapse accepts (the sigma integral needs n >= 2).
MIN_COLLAPSE_SIZE = 2
#: Smallest sub-group with a normalisable predictive (t with n - 2 dof).
MIN_INFERENCE_SIZE = 3


class OutcomeTransform(enum.Enum):
    Identity = "identity"
    Exp = "exp"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(x) if self is OutcomeTransform.Exp else x


class IntegrationDomain(enum.Enum):
    FullLine = "full"
    PositiveHalfLine = "positive"

    @property
    def bounds(self) -> tuple:
        return (-math.inf, math.inf) if self is IntegrationDomain.FullLine else (0.0, math.inf)


@dataclass(frozen=True)
class ModelParams:
    m: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")


def collapse_exponent(n) -> float:
    """Power p(n) in I(x) ∝ c(x)**-p(n).

    One sigma is absorbed by the Gaussian m-integral, leaving
    ∫ sigma**-n exp(-c / 2 sigma**2) dsigma ∝ c**-((n - 1) / 2).
    Checked against direct (m, sigma) quadrature in the test-suite.
    """
    return 0.5 * (n - 1)


@dataclass(frozen=True)
class CollapsedStat:
    n: int
    sum: float
    sum_sq: float

    def __post_init__(self):
        if self.n < MIN_COLLAPSE_SIZE:
            raise InsufficientDataError(f"collapse needs n >= {MIN_COLLAPSE_SIZE}, got {self.n}")

    @classmethod
    def from_values(cls, x) -> "CollapsedStat":
        x = np.asarray(x, dtype=float)
        return cls(int(x.size), float(x.sum()), float(np.dot(x, x)))

    @property
    def mean(self) -> float:
        return self.sum / self.n

    @property
    def ss(self) -> float:
        """Centred sum of squares, clipped at zero against round-off."""
        return max(self.sum_sq - self.sum * self.sum / self.n, 0.0)

    def c(self, x):
        """The only data-dependent term left after collapsing (m, sigma)."""
        x = np.asarray(x, dtype=float)
        n = self.n
        return self.ss + n / (n + 1.0) * (x - self.mean) ** 2

    def c_literal(self, x):
        x = np.asarray(x, dtype=float)
        return x * x + self.sum_sq - (x + self.sum) ** 2 / (self.n + 1.0)


def collapse(data: SubGroupData, transform: OutcomeTransform = OutcomeTransform.Identity) -> CollapsedStat:
    if data.n < MIN_COLLAPSE_SIZE:
        raise InsufficientDataError(
            f"sub-group {data.label} has n={data.n}, need at least {MIN_COLLAPSE_SIZE}",
            subgroup=(data.arm, data.tier),
        )
    with np.errstate(over="ignore"):
        x = transform.apply(data.outcomes)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"non-finite transformed outcome in sub-group {data.label}")
    return CollapsedStat.from_values(x)


def predictive_unnorm(x, stat: CollapsedStat):
    """Unnormalised posterior predictive c(x)**-p(n)."""
    c = stat.c(x)
    if np.any(c <= 1e-300):
        raise SingularStatisticError("c(x) is not positive; the sub-group data are degenerate")
    return c ** -collapse_exponent(stat.n)


@dataclass(frozen=True)
class Predictive:
    """Normalised posterior predictive of one sub-group on a domain."""

    loc: float
    scale: float
    nu: float
    domain: IntegrationDomain = IntegrationDomain.FullLine

    @classmethod
    def from_stat(cls, stat: CollapsedStat, domain=IntegrationDomain.FullLine) -> "Predictive":
        n = stat.n
        if n < MIN_INFERENCE_SIZE:
            raise InsufficientDataError(
                f"predictive is improper for n={n}; need at least {MIN_INFERENCE_SIZE}"
            )
        ss = stat.ss
        if ss <= 1e-300 * max(1.0, stat.sum_sq):
            raise SingularStatisticError("sub-group outcomes are all identical")
        nu = n - 2.0
        return cls(stat.mean, math.sqrt((n + 1.0) * ss / (n * nu)), nu, domain)

    @property
    def _log_norm(self) -> float:
        nu = self.nu
        return (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
                - 0.5 * math.log(nu * math.pi) - math.log(self.scale))

    @property
    def mass(self) -> float:
        """Mass of the untruncated t inside the domain."""
        if self.domain is IntegrationDomain.FullLine:
            return 1.0
        return float(special.stdtr(self.nu, self.loc / self.scale))

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        logp = self._log_norm - 0.5 * (self.nu + 1) * np.log1p(z * z / self.nu)
        p = np.exp(logp) / self.mass
        if self.domain is IntegrationDomain.PositiveHalfLine:
            p = np.where(np.asarray(x) >= 0, p, 0.0)
        return p

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        F = special.stdtr(self.nu, (x - self.loc) / self.scale)
        if self.domain is IntegrationDomain.FullLine:
            return F
        F0 = 1.0 - self.mass
        return np.clip((F - F0) / self.mass, 0.0, 1.0) * (x >= 0)

    def sample(self, rng, size):
        """Draw by inverting the CDF; used by Monte Carlo oracles."""
        u = rng.uniform(size=size)
        if self.domain is IntegrationDomain.PositiveHalfLine:
            u = (1.0 - self.mass) + u * self.mass
        return self.loc + self.scale * special.stdtrit(self.nu, u)


@dataclass(frozen=True)
class RhoResult:
    rho: float
    err_estimate: float
    pair_tier: BeliefTier
    converged: bool = True


def _does_better(pt: Predictive, pc: Predictive, quad: QuadratureSpec):
    """P(Y_c < X_t) = ∫ p_t(x) F_c(x) dx with the inner integral in closed form."""
    return integrate_1d(lambda x: pt.pdf(x) * pc.cdf(x), quad.on(*pt.domain.bounds), warn=False)


#: Registered distance functionals between the two predictives.
DISTANCES = {"does_better": _does_better}


def pair_predictives(pair: MatchedPair, transform=OutcomeTransform.Identity,
                     domain=IntegrationDomain.FullLine) -> tuple:
    """(control, treatment) predictives; raises for sides that are too small."""
    out = []
    for side in (pair.control, pair.treatment):
        if side.n < MIN_INFERENCE_SIZE:
            raise InsufficientDataError(
                f"sub-group {side.label} has n={side.n}, need at least {MIN_INFERENCE_SIZE}",
                subgroup=(side.arm, side.tier),
            )
        out.append(Predictive.from_stat(collapse(side, transform), domain))
    return tuple(out)


def rho_star(pair: MatchedPair, transform=OutcomeTransform.Identity, quad: QuadratureSpec = QuadratureSpec(),
             domain=IntegrationDomain.FullLine, distance: str = "does_better") -> RhoResult:
    pc, pt = pair_predictives(pair, transform, domain)
    res = DISTANCES[distance](pt, pc, quad)
    rho = min(max(float(res.value), 0.0), 1.0)
    return RhoResult(rho, res.error, pair.tier, res.converged)


def is_analyzable(pair: MatchedPair) -> bool:
    return pair.control.n >= MIN_INFERENCE_SIZE and pair.treatment.n >= MIN_INFERENCE_SIZE


# ---------------------------------------------------------------------------
# Posterior of the differential treatment effect
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    n_points: int = 1001
    half_width_se: float = 6.0


@dataclass(frozen=True)
class PosteriorSummary:
    grid: np.ndarray
    density: np.ndarray
    map_estimate: float
    central_interval_95: tuple
    std: float
    mean: float
    used_tiers: tuple = ()
    skipped_tiers: tuple = ()

    @property
    def resolution(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def to_csv(self, fh) -> None:
        fh.write("value,density\n")
        for v, d in zip(self.grid, self.density):
            fh.write(f"{v!r},{d!r}\n")

    def sidecar(self) -> dict:
        return {
            "map_estimate": self.map_estimate,
            "central_interval_95": list(self.central_interval_95),
            "std": self.std,
            "mean": self.mean,
            "used_tiers": [t.name for t in self.used_tiers],
            "skipped_tiers": [t.name for t in self.skipped_tiers],
        }

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w") as fh:
            self.to_csv(fh)
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


def _location_logpdf(m, stat: CollapsedStat):
    """Log posterior of the location: t with n - 2 dof, squared scale SS/(n(n-2))."""
    n, ss = stat.n, stat.ss
    nu = n - 2.0
    scale = math.sqrt(ss / (n * nu))
    z = (m - stat.mean) / scale
    return (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
            - math.log(scale) - 0.5 * (nu + 1) * np.log1p(z * z / nu))


def _difference_density(grid, st: CollapsedStat, sc: CollapsedStat):
    """Density of m_t - m_c on ``grid`` by discrete convolution of the two location posteriors."""
    h = grid[1] - grid[0]
    span = grid[-1] - grid[0]
    J = int(math.ceil(span / h))
    I = 2 * J
    m_c = sc.mean + h * (np.arange(2 * J + 1) - J)
    u_t = st.mean + h * (np.arange(2 * I + 1) - I)
    p_c = np.exp(_location_logpdf(m_c, sc))
    p_t = np.exp(_location_logpdf(u_t, st))
    g = h * fftconvolve(p_t, p_c[::-1], mode="full")
    delta = (st.mean - sc.mean) + h * (np.arange(g.size) - J - I)
    return np.clip(np.interp(grid, delta, g), 0.0, None)


def differential_posterior(pairs: Sequence[MatchedPair], transform=OutcomeTransform.Identity,
                           grid_spec: GridSpec = GridSpec()) -> PosteriorSummary:
    """Posterior of the treatment-minus-control location difference.

    Each analysable pair contributes the density of ``m_t - m_c`` (both
    scales marginalised); pair densities are mixed with weights ``n_c + n_t``.
    Pairs with a side smaller than three are skipped.
    """
    used, skipped = [], []
    for pair in pairs:
        if not is_analyzable(pair):
            skipped.append(pair.tier)
            logger.info("skipping tier %s: sizes (%d, %d)", pair.tier.name, pair.control.n, pair.treatment.n)
            continue
        sc, st = collapse(pair.control, transform), collapse(pair.treatment, transform)
        if sc.ss <= 0 or st.ss <= 0:
            raise SingularStatisticError(f"tier {pair.tier.name} has a degenerate sub-group")
        used.append((pair, sc, st))
    if not used:
        raise NoEvidenceError("no matched pair has at least three members on both sides")

    lo, hi = math.inf, -math.inf
    for _, sc, st in used:
        d = st.mean - sc.mean
        pooled = (sc.ss + st.ss) / (sc.n + st.n - 2)
        se = math.sqrt(pooled * (1.0 / sc.n + 1.0 / st.n))
        lo = min(lo, d - grid_spec.half_width_se * se)
        hi = max(hi, d + grid_spec.half_width_se * se)
    grid = np.linspace(lo, hi, grid_spec.n_points)

    density = np.zeros_like(grid)
    total_w = 0.0
    for pair, sc, st in used:
        dens = _difference_density(grid, st, sc)
        z = np.trapezoid(dens, grid)
        if not z > 0:
            continue
        w = float(sc.n + st.n)
        density += w * dens / z
        total_w += w
    density /= total_w
    density /= np.trapezoid(density, grid)

    mean = float(np.trapezoid(grid * density, grid))
    var = float(np.trapezoid((grid - mean) ** 2 * density, grid))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    lo95, hi95 = np.interp([0.025, 0.975], cdf, grid)
    return PosteriorSummary(
        grid=grid,
        density=density,
        map_estimate=float(grid[int(np.argmax(density))]),
        central_interval_95=(float(lo95), float(hi95)),
        std=math.sqrt(var),
        mean=mean,
        used_tiers=tuple(p.tier for p, _, _ in used),
        skipped_tiers=tuple(skipped),
    )
