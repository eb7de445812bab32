"""Minibatch stochastic-gradient MCMC.

Simplex-constrained global parameters (Phi and Pi columns) move under
preconditioned Riemannian Langevin updates whose drift is built from
minibatch-scaled augmentation counts; the factor weights nu and diagonal
concentrations xi move under a Nose-Hoover thermostat.  Local latent
variables on each minibatch window are refreshed with the same conditionals
the batch Gibbs sampler uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import ParameterDomainError, SHAPE_FLOOR, gamma_array
from .gibbs import (
    backward_upward,
    compute_zeta,
    forward_downward,
    impute_binary_counts,
)
from .model import CountMatrix, GlobalParams, HyperParams, LatentState, pi_concentration
from .rng import RngStream

SIMPLEX_PROJECTION_FLOOR = 1e-16
PARAM_FLOOR = 1e-10
FIM_DECAY = 0.9
FORCE_CLIP = 1e4  # per-coordinate force bound fed to the thermostat step


@dataclass
class SgmcmcState:
    """Mutable sampler state: momenta and thermostat for the (xi, nu) block,
    running Fisher-information estimates per column, and the step schedule
    eps_n = a (b + n)^(-c)."""

    momenta: np.ndarray
    thermostat: float
    diffusion: float = 1.0
    step_a: float = 0.1
    step_b: float = 1000.0
    step_c: float = 0.55
    precond_M: list[np.ndarray] = field(default_factory=list)
    precond_P: list[np.ndarray] = field(default_factory=list)
    batch_ratio: float = 1.0
    n: int = 0
    sample_beta: bool = False  # default: beta pinned at 1 under SGMCMC

    def step_size(self) -> float:
        return self.step_a * (self.step_b + self.n) ** (-self.step_c)

    def to_dict(self) -> dict:
        """JSON-safe encoding with hex floats for bit-exact round trips."""
        return {
            "momenta": [float(x).hex() for x in self.momenta],
            "thermostat": float(self.thermostat).hex(),
            "diffusion": float(self.diffusion).hex(),
            "step_a": float(self.step_a).hex(),
            "step_b": float(self.step_b).hex(),
            "step_c": float(self.step_c).hex(),
            "precond_M": [[float(x).hex() for x in m] for m in self.precond_M],
            "precond_P": [[float(x).hex() for x in p] for p in self.precond_P],
            "batch_ratio": float(self.batch_ratio).hex(),
            "n": self.n,
            "sample_beta": self.sample_beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SgmcmcState":
        fh = float.fromhex
        return cls(
            momenta=np.array([fh(x) for x in d["momenta"]]),
            thermostat=fh(d["thermostat"]),
            diffusion=fh(d["diffusion"]),
            step_a=fh(d["step_a"]), step_b=fh(d["step_b"]), step_c=fh(d["step_c"]),
            precond_M=[np.array([fh(x) for x in m]) for m in d["precond_M"]],
            precond_P=[np.array([fh(x) for x in p]) for p in d["precond_P"]],
            batch_ratio=fh(d["batch_ratio"]),
            n=d["n"], sample_beta=d["sample_beta"])


def init_sgmcmc_state(hyper: HyperParams, rng: RngStream, diffusion: float = 1.0,
                      step_a: float = 0.1, step_b: float = 1000.0,
                      step_c: float = 0.55) -> SgmcmcState:
    dim = sum(1 + k for k in hyper.K)
    eps0_step = step_a * step_b ** (-step_c)
    momenta = rng.gen.normal(size=dim) * np.sqrt(eps0_step)
    return SgmcmcState(
        momenta=momenta,
        thermostat=diffusion,
        diffusion=diffusion,
        step_a=step_a, step_b=step_b, step_c=step_c,
        precond_M=[np.ones(k) for k in hyper.K],
        precond_P=[np.ones(k) for k in hyper.K],
    )


# ---------------------------------------------------------------------------
# minibatching


def sample_minibatch(X: CountMatrix, sub_T: int, rng: RngStream):
    """A contiguous window of sub_T steps at a uniform start position.

    Returns (window, start, batch_ratio) with batch_ratio = T / sub_T.
    """
    if sub_T < 1 or sub_T > X.T:
        raise ParameterDomainError(f"sub_T must lie in 1..{X.T}, got {sub_T}")
    start = int(rng.gen.integers(0, X.T - sub_T + 1))
    window = CountMatrix(entries=X.entries[:, start:start + sub_T], kind=X.kind)
    return window, start, X.T / sub_T


# ---------------------------------------------------------------------------
# TLASGR simplex updates


def simplex_project(col: np.ndarray) -> np.ndarray:
    floored = np.maximum(col, SIMPLEX_PROJECTION_FLOOR)
    return floored / floored.sum()


def _tlasgr_update(col, counts, prior_conc, precond, eps, batch_ratio, rng: RngStream):
    if eps == 0.0:
        return col
    weighted = batch_ratio * counts + prior_conc
    total = weighted.sum()
    drift = (eps / precond) * (weighted - total * col)
    g = rng.gen.normal(size=col.shape)
    sq = np.sqrt(col)
    noise = np.sqrt(2.0 * eps / precond) * (sq * g - col * (sq * g).sum())
    return simplex_project(col + drift + noise)


def tlasgr_update_pi(pi_col, aux_col_counts, prior_conc_col, precond, eps,
                     batch_ratio, rng: RngStream) -> np.ndarray:
    """One preconditioned Langevin step for a transition-matrix column.

    aux_col_counts are the column's transition counts summed over the
    minibatch window; prior_conc_col is its Dirichlet concentration.
    """
    return _tlasgr_update(pi_col, aux_col_counts, prior_conc_col, precond, eps,
                          batch_ratio, rng)


def tlasgr_update_phi(phi_col, aux_col_counts, eta0, precond, eps,
                      batch_ratio, rng: RngStream) -> np.ndarray:
    """Same update for a loading column under its symmetric prior."""
    prior = np.full(phi_col.shape, eta0)
    return _tlasgr_update(phi_col, aux_col_counts, prior, precond, eps,
                          batch_ratio, rng)


def update_fim_estimate(current: np.ndarray, column_totals: np.ndarray,
                        prior_total: float, batch_ratio: float) -> np.ndarray:
    """Running diagonal FIM estimate per column (decay FIM_DECAY)."""
    fresh = batch_ratio * column_totals + prior_total
    return FIM_DECAY * current + (1.0 - FIM_DECAY) * fresh


# ---------------------------------------------------------------------------
# stochastic forces (exact gradients of the log-posterior terms that the
# transition-matrix prior contributes, normalizing constants dropped)


def stochastic_force_nu(Pi_l: np.ndarray, nu: np.ndarray, xi: float, beta: float,
                        gamma0: float, k: int) -> float:
    """Negative potential gradient for nu_k: cross-entropy of the Pi columns
    against their concentration, plus the gamma-prior terms."""
    K = nu.shape[0]
    with np.errstate(divide="ignore"):
        logpi = np.log(np.maximum(Pi_l, SIMPLEX_PROJECTION_FLOOR))
    into_k = float((nu * logpi[:, k]).sum()) - nu[k] * logpi[k, k]      # k1 != k
    out_of_k = float((nu * logpi[k, :]).sum()) - nu[k] * logpi[k, k]    # k2 != k
    bracket = into_k + out_of_k + xi * logpi[k, k]
    return bracket + (gamma0 / K - 1.0) / nu[k] - beta


def stochastic_force_xi(Pi_l: np.ndarray, nu: np.ndarray, xi: float,
                        eps0: float) -> float:
    """Negative potential gradient for xi: the diagonal log-Pi terms plus the
    noninformative gamma prior."""
    with np.errstate(divide="ignore"):
        logdiag = np.log(np.maximum(np.diag(Pi_l), SIMPLEX_PROJECTION_FLOOR))
    return float((nu * logdiag).sum()) + (eps0 - 1.0) / xi - eps0


# ---------------------------------------------------------------------------
# SGNHT dynamics


def sgnht_step(params: np.ndarray, state: SgmcmcState, forces: np.ndarray,
               eps: float, rng: RngStream, floor: float = PARAM_FLOOR) -> np.ndarray:
    """One discretized thermostat step; positivity kept by reflection."""
    p = state.momenta
    noise = rng.gen.normal(size=p.shape) * np.sqrt(2.0 * state.diffusion * eps)
    # discretization guard rails: bounded forces and a friction coefficient
    # kept below the 1/eps stability limit so the step map cannot diverge
    f = np.clip(forces, -FORCE_CLIP, FORCE_CLIP)
    friction = float(np.clip(state.thermostat, -1.0 / eps, 1.0 / eps))
    p += eps * (f - friction * p) + noise
    params = params + eps * p
    below = params < floor
    if below.any():
        params[below] = np.minimum(2.0 * floor - params[below], 1.0 / floor)
        params[below] = np.maximum(params[below], floor)
        p[below] = -p[below]
    state.thermostat += eps * (float((p * p).sum()) / p.size - 1.0)
    state.thermostat = float(np.clip(state.thermostat, -1.0 / eps, 1.0 / eps))
    return params


# ---------------------------------------------------------------------------
# full step


def sgmcmc_step(X: CountMatrix, hyper: HyperParams, g: GlobalParams,
                lat: LatentState, state: SgmcmcState, rng: RngStream,
                sub_T: int | None = None):
    """One Algorithm-2 iteration: local BUFD sweep on a random window, then
    TLASGR updates for all simplex columns and an SGNHT step for (xi, nu).

    `lat` spans the full series; only the window's columns are refreshed.
    Returns the window start for logging.
    """
    T = X.T
    sub_T = T if sub_T is None else sub_T
    window, start, ratio = sample_minibatch(X, sub_T, rng)
    state.batch_ratio = ratio
    eps = state.step_size()

    # local latent refresh on the window, treating its first step as t = 1
    theta_win = [th[:, start:start + sub_T].copy() for th in lat.Theta]
    lat_win = LatentState(Theta=theta_win)
    delta_win = g.delta if g.delta.ndim == 0 else g.delta[start:start + sub_T]
    g_win = GlobalParams(Phi=g.Phi, Pi=g.Pi, nu=g.nu, xi=g.xi, beta=g.beta,
                         delta=np.asarray(delta_win))
    if window.kind == "binary":
        data_counts = impute_binary_counts(window.entries, hyper, g_win, lat_win, rng)
    else:
        data_counts = window.entries
    aux = backward_upward(data_counts, hyper, g_win, lat_win, rng)
    lat_win.zeta = compute_zeta(g_win.delta, hyper.tau0, hyper.L, sub_T)
    forward_downward(aux, hyper, g_win, lat_win, rng)
    for l in range(hyper.L):
        lat.Theta[l][:, start:start + sub_T] = lat_win.Theta[l]

    # delta: exact conditional on the window, minibatch-scaled when tied
    if hyper.tie_delta:
        shape = hyper.eps0 + ratio * data_counts.sum()
        rate = hyper.eps0 + ratio * lat_win.Theta[0].sum()
        g.delta = np.asarray(float(gamma_array(shape, rate, rng)))
    else:
        shape = hyper.eps0 + data_counts.sum(axis=0)
        rate = hyper.eps0 + lat_win.Theta[0].sum(axis=0)
        g.delta[start:start + sub_T] = gamma_array(shape, rate, rng)

    # TLASGR for Phi then Pi, column by column
    for l in range(1, hyper.L + 1):
        K = hyper.K[l - 1]
        eta_l = hyper.eta[l - 1]
        A_tot = aux.A[l - 1].sum(axis=2)          # K_{l-1} x K
        Z_tot = aux.Z[l - 1].sum(axis=2)          # K x K
        prior_pi = pi_concentration(g.nu[l - 1], g.xi[l - 1])
        state.precond_P[l - 1] = update_fim_estimate(
            state.precond_P[l - 1], A_tot.sum(axis=0),
            hyper.width(l - 1) * eta_l, ratio)
        state.precond_M[l - 1] = update_fim_estimate(
            state.precond_M[l - 1], Z_tot.sum(axis=0),
            prior_pi.sum(axis=0).mean(), ratio)
        for k in range(K):
            g.Phi[l - 1][:, k] = tlasgr_update_phi(
                g.Phi[l - 1][:, k], A_tot[:, k], eta_l,
                state.precond_P[l - 1][k], eps, ratio, rng)
            g.Pi[l - 1][:, k] = tlasgr_update_pi(
                g.Pi[l - 1][:, k], Z_tot[:, k], prior_pi[:, k],
                state.precond_M[l - 1][k], eps, ratio, rng)

    # SGNHT for the flattened (xi, nu) block
    params, forces = [], []
    for l in range(1, hyper.L + 1):
        beta_l = g.beta[l - 1] if state.sample_beta else 1.0
        params.append([g.xi[l - 1]])
        forces.append([stochastic_force_xi(g.Pi[l - 1], g.nu[l - 1],
                                           g.xi[l - 1], hyper.eps0)])
        params.append(g.nu[l - 1])
        forces.append([stochastic_force_nu(g.Pi[l - 1], g.nu[l - 1], g.xi[l - 1],
                                           beta_l, hyper.gamma0, k)
                       for k in range(hyper.K[l - 1])])
    flat = np.concatenate([np.atleast_1d(np.asarray(x, dtype=np.float64)) for x in params])
    f = np.concatenate([np.asarray(x, dtype=np.float64) for x in forces])
    flat = sgnht_step(flat, state, f, eps, rng)
    pos = 0
    for l in range(1, hyper.L + 1):
        g.xi[l - 1] = float(flat[pos]); pos += 1
        g.nu[l - 1] = flat[pos:pos + hyper.K[l - 1]].copy(); pos += hyper.K[l - 1]
        if not state.sample_beta:
            g.beta[l - 1] = 1.0

    state.n += 1
    return start
