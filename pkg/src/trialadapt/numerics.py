"""Adaptive quadrature and seeded sampling helpers.

The integrator is a vectorised, globally adaptive Gauss-Kronrod (7/15) rule.
Infinite limits are mapped onto a finite interval by a rational substitution
rather than truncated, so slowly decaying integrands keep their tails.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyWarning, InvalidInputError

# Kronrod 15-point nodes on [-1, 1] and weights; the odd-indexed nodes are
# the embedded 7-point Gauss rule.
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WK[:-1], _WK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:14:2] = np.concatenate([_WG[:-1], _WG[::-1]])


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_subdivisions: int = 200
    domain: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidInputError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise InvalidInputError("max_subdivisions must be >= 1")
        lo, hi = self.domain
        if not lo < hi:
            raise InvalidInputError(f"empty integration domain {self.domain}")

    def on(self, lo, hi) -> "QuadratureSpec":
        return QuadratureSpec(self.abs_tol, self.rel_tol, self.max_subdivisions, (lo, hi))


@dataclass(frozen=True)
class McSpec:
    n_samples: int = 10_000
    seed: int = 0
    target_rel_error: float = 1e-2

    def __post_init__(self):
        if self.n_samples < 1 or self.target_rel_error <= 0:
            raise InvalidInputError("invalid Monte Carlo spec")


@dataclass(frozen=True)
class QuadResult:
    """Integral estimate; unpacks as ``value, error``."""

    value: float
    error: float
    converged: bool = True
    n_intervals: int = 0

    def __iter__(self):
        yield self.value
        yield self.error

    def __float__(self):
        return float(self.value)


def _substitution(lo, hi):
    """Return (a, b, phi) with phi mapping [a, b] onto [lo, hi]: (x, dx/dt)."""
    lo_inf, hi_inf = math.isinf(lo), math.isinf(hi)
    if not lo_inf and not hi_inf:
        return lo, hi, None
    if lo_inf and hi_inf:
        def phi(t):
            d = 1.0 - t * t
            return t / d, (1.0 + t * t) / (d * d)
        return -1.0, 1.0, phi
    if hi_inf:
        def phi(t):
            d = 1.0 - t
            return lo + t / d, 1.0 / (d * d)
        return 0.0, 1.0, phi

    def phi(t):
        d = 1.0 - t
        return hi - t / d, 1.0 / (d * d)
    return 0.0, 1.0, phi


def _gk_batch(g, a, b):
    """Apply the 15-point pair to every interval [a_i, b_i] with one call of g."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    t = mid[:, None] + half[:, None] * NODES[None, :]
    vals = np.asarray(g(t.ravel()), dtype=float)
    vals = vals.reshape(vals.shape[:-1] + t.shape)
    k = half * (vals @ KRONROD_WEIGHTS)
    gl = half * (vals @ GAUSS_WEIGHTS)
    mean = k / (2.0 * half)
    resasc = half * (np.abs(vals - mean[..., None]) @ KRONROD_WEIGHTS)
    diff = np.abs(k - gl)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(resasc > 0, np.minimum(1.0, (200.0 * diff / resasc) ** 1.5), 1.0)
    err = np.where(resasc > 0, resasc * scale, diff)
    if err.ndim > 1:
        err = err.max(axis=tuple(range(err.ndim - 1)))
    return k, err


def integrate_1d(f, spec: QuadratureSpec = QuadratureSpec(), *, initial_intervals: int = 8,
                 warn: bool = True) -> QuadResult:
    """Integrate ``f`` over ``spec.domain``.

    ``f`` must accept a 1-D array of abscissae and may return either an array
    of the same length or a stacked array of shape ``(k, len(x))``; in the
    latter case all ``k`` integrals are computed on a shared subdivision and
    ``value`` is an array.

    Intervals whose error exceeds their share of the tolerance are bisected
    until the total error meets ``max(abs_tol, rel_tol*|value|)`` or
    ``max_subdivisions`` intervals are in use.  Non-convergence yields a
    result with ``converged=False`` (and an :class:`AccuracyWarning`).
    """
    lo, hi = spec.domain
    a0, b0, phi = _substitution(float(lo), float(hi))
    if phi is None:
        g = f
    else:
        def g(t):
            x, jac = phi(t)
            return np.asarray(f(x), dtype=float) * jac

    edges = np.linspace(a0, b0, max(1, initial_intervals) + 1)
    a, b = edges[:-1], edges[1:]
    k, err = _gk_batch(g, a, b)
    while True:
        value = k.sum(axis=-1)
        total_err = float(err.sum())
        tol = max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(value))))
        if total_err <= tol:
            converged = True
            break
        if a.size >= spec.max_subdivisions:
            converged = False
            break
        budget = spec.max_subdivisions - a.size
        share = tol * (b - a) / (b0 - a0)
        bad = np.flatnonzero(err > share)
        if bad.size == 0:
            bad = np.array([int(np.argmax(err))])
        if bad.size > budget:
            bad = bad[np.argsort(err[bad])[::-1][:budget]]
        keep = np.ones(a.size, dtype=bool)
        keep[bad] = False
        m = 0.5 * (a[bad] + b[bad])
        na = np.concatenate([a[bad], m])
        nb = np.concatenate([m, b[bad]])
        nk, nerr = _gk_batch(g, na, nb)
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        k = np.concatenate([k[..., keep], nk], axis=-1)
        err = np.concatenate([err[keep], nerr])

    if np.ndim(value) == 0:
        value = float(value)
    if not converged and warn:
        warnings.warn(
            f"quadrature did not converge: error {total_err:.3g} > tolerance {tol:.3g}",
            AccuracyWarning,
            stacklevel=2,
        )
    return QuadResult(value, total_err, converged, int(a.size))


def integrate_2d_nested(f, outer: QuadratureSpec, inner: QuadratureSpec, inner_bounds=None) -> QuadResult:
    """Iterated integral of ``f(x, y)``: x over ``outer.domain``, y inside.

    ``inner_bounds(x) -> (lo, hi)`` lets the inner domain depend on the outer
    variable (e.g. ``lambda x: (-inf, x)`` for the region y < x); by default
    ``inner.domain`` is used for every x.  ``f`` is called with a scalar x and
    an array of y values.
    """
    state = {"converged": True, "inner_err": 0.0}

    def outer_integrand(xs):
        out = np.empty(xs.shape)
        for i, x in enumerate(xs):
            if inner_bounds is None:
                spec = inner
            else:
                lo, hi = inner_bounds(x)
                if not lo < hi:
                    out[i] = 0.0
                    continue
                spec = inner.on(lo, hi)
            r = integrate_1d(lambda y: f(x, y), spec, warn=False)
            state["converged"] &= r.converged
            state["inner_err"] = max(state["inner_err"], r.error)
            out[i] = r.value
        return out

    res = integrate_1d(outer_integrand, outer, warn=False)
    converged = res.converged and state["converged"]
    if not converged:
        warnings.warn("nested quadrature did not converge", AccuracyWarning, stacklevel=2)
    return QuadResult(res.value, res.error + state["inner_err"], converged, res.n_intervals)


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; ``seed`` may be an int or a SeedSequence."""
    return np.random.default_rng(seed)


def sample_normal(rng: np.random.Generator, mean, sd, size=None):
    if np.any(np.asarray(sd) < 0):
        raise InvalidInputError("standard deviation must be non-negative")
    if np.all(np.asarray(sd) == 0):
        # Consume the same draws as the stochastic path so streams stay aligned.
        z = rng.standard_normal(size)
        return np.zeros_like(z) + mean if size is not None else float(mean)
    return rng.normal(mean, sd, size)


def sample_uniform_choice(rng: np.random.Generator, items):
    items = list(items) if not isinstance(items, np.ndarray) else items
    if len(items) == 0:
        raise InvalidInputError("cannot choose from an empty set")
    return items[int(rng.integers(len(items)))]
