"""Sampling kernels and special functions used by the model and samplers.

All samplers are pure functions of (parameters, RngStream).  Scalar entry
points validate their domains; the *_array variants are the vectorized forms
the samplers call in bulk and assume already-validated inputs.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream

# Gamma shapes and Dirichlet concentrations below this are clamped.
SHAPE_FLOOR = 1e-10
# Simplex entries are floored here before renormalization so downstream
# logs and ratios stay finite.
SIMPLEX_FLOOR = 1e-300


class ParameterDomainError(ValueError):
    """A distribution parameter is outside its domain."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterDomainError(msg)


# ---------------------------------------------------------------------------
# gamma / Dirichlet / multinomial


def gamma_array(shape, rate, rng: RngStream) -> np.ndarray:
    """Vectorized Gamma(shape, rate) draws, robust to shapes below 1.

    Shapes under 1 use the boosting identity Gamma(a) = Gamma(a+1) * U^(1/a),
    computed in log space so that tiny shapes underflow gracefully to 0
    instead of tripping rejection samplers.  Shapes are clamped at SHAPE_FLOOR.
    """
    shape = np.maximum(np.asarray(shape, dtype=np.float64), SHAPE_FLOOR)
    rate = np.asarray(rate, dtype=np.float64)
    small = shape < 1.0
    boosted = np.where(small, shape + 1.0, shape)
    draws = rng.gen.standard_gamma(boosted)
    if np.any(small):
        u = rng.gen.random(shape.shape)
        with np.errstate(divide="ignore"):
            log_boost = np.where(small, np.log(u) / shape, 0.0)
        draws = draws * np.exp(log_boost)
    return draws / rate


def sample_gamma(shape: float, rate: float, rng: RngStream) -> float:
    """Draw from Gamma(shape, rate); mean shape/rate."""
    _require(np.isfinite(shape) and shape > 0, f"gamma shape must be positive, got {shape}")
    _require(np.isfinite(rate) and rate > 0, f"gamma rate must be positive, got {rate}")
    return float(gamma_array(shape, rate, rng))


def dirichlet_array(concentration: np.ndarray, rng: RngStream) -> np.ndarray:
    """Dirichlet draws along the last axis via normalized gammas."""
    g = gamma_array(concentration, 1.0, rng)
    g = np.maximum(g, SIMPLEX_FLOOR)
    return g / g.sum(axis=-1, keepdims=True)


def sample_dirichlet(concentration, rng: RngStream) -> np.ndarray:
    conc = np.asarray(concentration, dtype=np.float64)
    _require(conc.ndim == 1 and conc.size > 0, "concentration must be a nonempty vector")
    _require(bool(np.all(np.isfinite(conc)) and np.all(conc > 0)),
             "concentration entries must be positive")
    return dirichlet_array(conc, rng)


def sample_multinomial(total: int, probs, rng: RngStream) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    _require(total >= 0, f"multinomial total must be nonnegative, got {total}")
    _require(abs(probs.sum() - 1.0) < 1e-9, "probs must sum to 1 within 1e-9")
    _require(bool(np.all(probs >= 0)), "probs must be nonnegative")
    return rng.gen.multinomial(int(total), probs / probs.sum())


# ---------------------------------------------------------------------------
# Chinese restaurant table / logarithmic


def crt_array(customers, mass, rng: RngStream) -> np.ndarray:
    """Vectorized CRT draws: sum of Bernoulli(mass / (mass + i)) over seats."""
    n = np.asarray(customers, dtype=np.int64)
    r = np.broadcast_to(np.asarray(mass, dtype=np.float64), n.shape)
    out = np.zeros(n.shape, dtype=np.int64)
    top = int(n.max()) if n.size else 0
    for i in range(top):
        active = n > i
        if not active.any():
            break
        p = r[active] / (r[active] + i)
        out[active] += rng.gen.random(int(active.sum())) < p
    return out


def sample_crt(customers: int, mass: float, rng: RngStream) -> int:
    """Table count for `customers` seated with concentration `mass`."""
    _require(customers >= 0, f"customers must be nonnegative, got {customers}")
    _require(np.isfinite(mass) and mass > 0, f"mass must be positive, got {mass}")
    return int(crt_array(np.array([customers]), mass, rng)[0])


def sample_sumlog(tables: int, p: float, rng: RngStream) -> int:
    """Sum of `tables` independent Logarithmic(p) draws."""
    _require(tables >= 0, f"tables must be nonnegative, got {tables}")
    _require(0.0 < p < 1.0, f"p must lie in (0,1), got {p}")
    if tables == 0:
        return 0
    return int(rng.gen.logseries(p, size=int(tables)).sum())


# ---------------------------------------------------------------------------
# negative binomial / truncated Poisson


def sample_negative_binomial(r: float, p: float, rng: RngStream) -> int:
    """NB(r, p) via the Poisson-gamma compound: Poisson(Gamma(r, (1-p)/p))."""
    _require(np.isfinite(r) and r > 0, f"r must be positive, got {r}")
    _require(0.0 < p < 1.0, f"p must lie in (0,1), got {p}")
    lam = gamma_array(r, (1.0 - p) / p, rng)
    return int(rng.gen.poisson(lam))


def truncated_poisson_ge1_array(rates, rng: RngStream) -> np.ndarray:
    """Poisson(rate) conditioned on being at least 1, vectorized by inversion."""
    lam = np.asarray(rates, dtype=np.float64)
    flat = lam.ravel()
    u = rng.gen.random(flat.shape) * (-np.expm1(-flat))
    k = np.ones(flat.shape, dtype=np.int64)
    pmf = flat * np.exp(-flat)
    cdf = pmf.copy()
    active = u > cdf
    while active.any():
        k[active] += 1
        pmf[active] *= flat[active] / k[active]
        cdf[active] += pmf[active]
        active &= u > cdf
    return k.reshape(lam.shape)


def sample_truncated_poisson_ge1(rate: float, rng: RngStream) -> int:
    _require(np.isfinite(rate) and rate > 0, f"rate must be positive, got {rate}")
    return int(truncated_poisson_ge1_array(np.array([rate]), rng)[0])


# ---------------------------------------------------------------------------
# special functions


def lambert_w_minus1(x: float) -> float:
    """Lower real branch W_-1 of w * exp(w) = x on [-1/e, 0).

    Analytic initial guess followed by Halley iterations; converges to
    |w e^w - x| < 1e-12 |x| over the whole domain.
    """
    if not (-np.exp(-1.0) <= x < 0.0):
        raise ParameterDomainError(f"lambert_w_minus1 requires -1/e <= x < 0, got {x}")
    sigma2 = 2.0 * (1.0 + np.e * x)
    if sigma2 <= 0.0:
        return -1.0
    if sigma2 < 0.5:
        # series around the branch point w = -1 - s - s^2/3 - 11 s^3 / 72
        s = np.sqrt(sigma2)
        w = -1.0 - s - s * s / 3.0 - 11.0 * s ** 3 / 72.0
    else:
        # asymptotic guess for x -> 0-
        l1 = np.log(-x)
        l2 = np.log(-l1)
        w = l1 - l2 + l2 / l1
    for _ in range(50):
        ew = np.exp(w)
        f = w * ew - x
        if f == 0.0:
            break
        denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        step = f / denom
        w -= step
        if abs(step) < 1e-16 * max(1.0, abs(w)):
            break
    return float(w)


def bernoulli_poisson_g(zeta: float) -> float:
    """g(zeta) = 1 - exp(-zeta), the Bernoulli-Poisson link probability."""
    if zeta < 0:
        raise ParameterDomainError(f"zeta must be nonnegative, got {zeta}")
    return float(-np.expm1(-zeta))
