"""Backward-upward / forward-downward Gibbs sampling.

One sweep:

1. impute latent counts under the binary link, when applicable;
2. backward (t = T..1) and upward (l = 1..L) augmentation: multinomial factor
   allocation, CRT propagation, binomial temporal/hierarchical split, and
   transition allocation;
3. propagated-scale (zeta) recursion;
4. per layer: the beta/CRT auxiliaries for (nu, xi), then beta, then the
   Dirichlet conditionals for Pi and Phi;
5. forward (t = 1..T) and downward (l = L..1) gamma resampling of Theta;
6. the gamma-Poisson conditional for delta.

Factor-weight and transition updates run before Pi is redrawn so that the
(xi, nu, Pi) block is one exact collapsed draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (
    SHAPE_FLOOR,
    crt_array,
    gamma_array,
    dirichlet_array,
    truncated_poisson_ge1_array,
)
from .model import (
    CountMatrix,
    GlobalParams,
    HyperParams,
    LatentState,
    matmul,
    matvec,
    pi_concentration,
    sample_global_params,
)
from .distributions import lambert_w_minus1
from .rng import RngStream

THETA_FLOOR = 1e-300


class NumericDegeneracyError(RuntimeError):
    """A conditional collapsed to an empty or zero-mass distribution."""


@dataclass
class AuxCounts:
    """The augmented integer lattice produced by one backward-upward pass.

    A[l-1][r, k, t-1]:      allocation of layer-l sources to factor k
    x_up[l-1][k, t-1]:      counts propagated to layer l+1
    x_split_time / x_split_layer: binomial split of x_up (sum to x_up)
    Z[l-1][k, k_l, t]:      transition allocations, valid for t = 2..T,
                            with slices at t in {0, 1, T+1} identically zero
    x_top[k]:               top-boundary counts consumed by the nu update
    data_counts[v, t]:      layer-1 sources (imputed under the binary link)
    """

    A: list[np.ndarray]
    x_up: list[np.ndarray]
    x_split_time: list[np.ndarray]
    x_split_layer: list[np.ndarray]
    Z: list[np.ndarray]
    x_top: np.ndarray
    data_counts: np.ndarray


# ---------------------------------------------------------------------------
# zeta propagation


def compute_zeta(delta, tau0: float, L: int, T: int) -> np.ndarray:
    """Backward-in-t, upward-in-l recursion zeta[l, t] = ln(1 + zeta[l-1, t]
    + zeta[l, t+1]), seeded with zeta[0, t] = delta_t / tau0 and a zero column
    at t = T + 1.  Returned array has shape (L+1, T+2); index t directly."""
    zeta = np.zeros((L + 1, T + 2))
    delta = np.asarray(delta, dtype=np.float64)
    zeta[0, 1:T + 1] = (delta if delta.ndim else np.full(T, float(delta))) / tau0
    for l in range(1, L + 1):
        for t in range(T, 0, -1):
            zeta[l, t] = np.log1p(zeta[l - 1, t] + zeta[l, t + 1])
    return zeta


def stationary_zeta(delta: float, tau0: float, L: int) -> np.ndarray:
    """Interior limit of the zeta recursion under a tied delta, layer by
    layer via the lower Lambert W branch."""
    z = np.zeros(L + 1)
    z[0] = delta / tau0
    for l in range(1, L + 1):
        z[l] = -lambert_w_minus1(-np.exp(-1.0 - z[l - 1])) - 1.0 - z[l - 1]
    return z


# ---------------------------------------------------------------------------
# single augmentation steps


def sample_layer_allocation(source_counts: np.ndarray, Phi_l: np.ndarray,
                            Theta_l: np.ndarray, rng: RngStream) -> np.ndarray:
    """Multinomial allocation of each source count across the layer's factors.

    source_counts is R x T (R = width of the layer below), Phi_l is R x K,
    Theta_l is K x T; the result is R x K x T with probabilities proportional
    to phi[r, k] * theta[k, t].
    """
    R, T = source_counts.shape
    weights = Phi_l[:, None, :] * Theta_l.T[None, :, :]  # R x T x K
    norm = weights.sum(axis=2)
    bad = (norm <= 0) & (source_counts > 0)
    if bad.any():
        r, t = np.argwhere(bad)[0]
        raise NumericDegeneracyError(f"zero allocation mass at row {r}, t={t + 1}")
    safe = np.where(norm > 0, norm, 1.0)
    probs = weights / safe[:, :, None]
    probs[norm <= 0] = 1.0 / probs.shape[2]
    A = rng.gen.multinomial(source_counts, probs)  # R x T x K
    return np.ascontiguousarray(A.transpose(0, 2, 1))


def sample_crt_counts(customers: np.ndarray, mass: np.ndarray, rng: RngStream) -> np.ndarray:
    """CRT table counts propagating `customers` upward under `mass`."""
    customers = np.asarray(customers)
    mass = np.asarray(mass, dtype=np.float64)
    if np.any((mass <= 0) & (customers > 0)):
        raise NumericDegeneracyError("nonpositive CRT mass under positive customers")
    return crt_array(customers, np.maximum(mass, SHAPE_FLOOR), rng)


def split_temporal_hierarchical(x_up: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                                rng: RngStream):
    """Binomial split of propagated counts between the temporal branch (p1)
    and the hierarchical branch (p2)."""
    x_up = np.asarray(x_up)
    p1 = np.broadcast_to(np.asarray(p1, dtype=np.float64), x_up.shape)
    p2 = np.broadcast_to(np.asarray(p2, dtype=np.float64), x_up.shape)
    total = p1 + p2
    if np.any((total <= 0) & (x_up > 0)):
        raise NumericDegeneracyError("zero split mass under positive propagated count")
    frac = np.where(total > 0, p1 / np.where(total > 0, total, 1.0), 0.0)
    x_time = rng.gen.binomial(x_up, frac)
    return x_time, x_up - x_time


def sample_transition_allocation(x_split_time: np.ndarray, Pi_l: np.ndarray,
                                 Theta_prev: np.ndarray, rng: RngStream) -> np.ndarray:
    """Allocate each temporal count across the previous step's factors;
    entry [k, k_l] is the count flowing from factor k_l at t-1 to k at t."""
    weights = Pi_l * Theta_prev[None, :]  # K x K, rows are destinations
    norm = weights.sum(axis=1)
    if np.any((norm <= 0) & (x_split_time > 0)):
        raise NumericDegeneracyError("zero transition mass under positive count")
    safe = np.where(norm > 0, norm, 1.0)
    probs = weights / safe[:, None]
    probs[norm <= 0] = 1.0 / probs.shape[1]
    return rng.gen.multinomial(x_split_time, probs)


def impute_binary_counts(B: np.ndarray, hyper: HyperParams, g: GlobalParams,
                         lat: LatentState, rng: RngStream) -> np.ndarray:
    """Latent counts under the Bernoulli-Poisson link: zero where b = 0,
    truncated Poisson(rate) >= 1 where b = 1."""
    rates = matmul(g.Phi[0], lat.Theta[0])
    rates = rates * (float(g.delta) if g.delta.ndim == 0 else g.delta[None, :])
    counts = np.zeros_like(B, dtype=np.int64)
    on = B > 0
    if on.any():
        counts[on] = truncated_poisson_ge1_array(np.maximum(rates[on], SHAPE_FLOOR), rng)
    return counts


# ---------------------------------------------------------------------------
# passes


def backward_upward(data_counts: np.ndarray, hyper: HyperParams, g: GlobalParams,
                    lat: LatentState, rng: RngStream) -> AuxCounts:
    """Sample the whole augmentation lattice, t = T..1 within l = 1..L."""
    L, tau0 = hyper.L, hyper.tau0
    T = data_counts.shape[1]
    A, x_up, x_st, x_sl, Z = [], [], [], [], []
    source = data_counts
    for l in range(1, L + 1):
        K = hyper.K[l - 1]
        A_l = sample_layer_allocation(source, g.Phi[l - 1], lat.Theta[l - 1], rng)
        A_dot = A_l.sum(axis=0)  # K x T
        Z_l = np.zeros((K, K, T + 2), dtype=np.int64)
        up_l = np.zeros((K, T), dtype=np.int64)
        st_l = np.zeros((K, T), dtype=np.int64)
        sl_l = np.zeros((K, T), dtype=np.int64)
        for t in range(T, 0, -1):
            customers = A_dot[:, t - 1] + Z_l[:, :, t + 1].sum(axis=0)
            p1 = matvec(g.Pi[l - 1], lat.Theta[l - 1][:, t - 2]) if t > 1 else np.zeros(K)
            if l < L:
                p2 = matvec(g.Phi[l], lat.Theta[l][:, t - 1])
            else:
                p2 = g.nu[l - 1] if t == 1 else np.zeros(K)
            up = sample_crt_counts(customers, tau0 * (p1 + p2), rng)
            x_time, x_layer = split_temporal_hierarchical(up, p1, p2, rng)
            if t > 1:
                Z_l[:, :, t] = sample_transition_allocation(
                    x_time, g.Pi[l - 1], lat.Theta[l - 1][:, t - 2], rng)
            up_l[:, t - 1] = up
            st_l[:, t - 1] = x_time
            sl_l[:, t - 1] = x_layer
        A.append(A_l)
        x_up.append(up_l)
        x_st.append(st_l)
        x_sl.append(sl_l)
        Z.append(Z_l)
        source = sl_l
    x_top = x_sl[-1][:, 0].copy()
    return AuxCounts(A=A, x_up=x_up, x_split_time=x_st, x_split_layer=x_sl,
                     Z=Z, x_top=x_top, data_counts=data_counts)


def sample_theta(aux: AuxCounts, hyper: HyperParams, g: GlobalParams,
                 lat: LatentState, layer: int, t: int, rng: RngStream) -> np.ndarray:
    """Gamma draw of theta_t at `layer` given the augmentation lattice."""
    L, tau0 = hyper.L, hyper.tau0
    l = layer
    zeta = lat.zeta
    shape = aux.A[l - 1].sum(axis=0)[:, t - 1].astype(np.float64)
    shape += aux.Z[l - 1][:, :, t + 1].sum(axis=0)
    if t > 1:
        shape += tau0 * matvec(g.Pi[l - 1], lat.Theta[l - 1][:, t - 2])
    if l < L:
        shape += tau0 * matvec(g.Phi[l], lat.Theta[l][:, t - 1])
    elif t == 1:
        shape += tau0 * g.nu[l - 1]
    rate = tau0 * (1.0 + zeta[l - 1, t] + zeta[l, t + 1])
    if rate <= 0:
        raise NumericDegeneracyError(f"nonpositive theta rate at layer {l}, t={t}")
    return np.maximum(gamma_array(shape, rate, rng), THETA_FLOOR)


def forward_downward(aux: AuxCounts, hyper: HyperParams, g: GlobalParams,
                     lat: LatentState, rng: RngStream) -> None:
    T = lat.Theta[0].shape[1]
    for t in range(1, T + 1):
        for l in range(hyper.L, 0, -1):
            lat.Theta[l - 1][:, t - 1] = sample_theta(aux, hyper, g, lat, l, t, rng)


# ---------------------------------------------------------------------------
# global-parameter conditionals


def sample_pi(Z_l: np.ndarray, nu: np.ndarray, xi: float, rng: RngStream) -> np.ndarray:
    """Dirichlet conditional for the transition matrix: prior concentration
    plus the per-column transition counts summed over time."""
    conc = pi_concentration(nu, xi) + Z_l.sum(axis=2)
    return dirichlet_array(conc.T, rng).T


def sample_phi(A_l: np.ndarray, eta_l: float, rng: RngStream) -> np.ndarray:
    """Dirichlet conditional for a loading matrix under a symmetric prior."""
    conc = np.maximum(eta_l + A_l.sum(axis=2), SHAPE_FLOOR)
    return dirichlet_array(conc.T, rng).T


def sample_delta(data_counts: np.ndarray, Theta_1: np.ndarray, hyper: HyperParams,
                 rng: RngStream) -> np.ndarray:
    """Gamma-Poisson conditional for the scaling factor, tied or per-step."""
    if hyper.tie_delta:
        shape = hyper.eps0 + data_counts.sum()
        rate = hyper.eps0 + Theta_1.sum()
        return np.asarray(float(gamma_array(shape, rate, rng)))
    shape = hyper.eps0 + data_counts.sum(axis=0)
    rate = hyper.eps0 + Theta_1.sum(axis=0)
    return gamma_array(shape, rate, rng)


def sample_nu_xi_beta(Z_l: np.ndarray, x_top, zeta_top: float, layer: int,
                      hyper: HyperParams, g: GlobalParams, rng: RngStream,
                      nu_shape_mode: str = "width"):
    """Joint (q, h) augmentation followed by the xi, nu, beta conditionals.

    `x_top` and `zeta_top` are only consulted at the top layer, where the
    t = 1 boundary contributes extra counts and rate mass.  nu_shape_mode
    selects gamma0/K_l ("width", default) or gamma0/beta ("beta") for the nu
    shape offset.
    """
    l = layer
    K = hyper.K[l - 1]
    nu = g.nu[l - 1].copy()
    xi = g.xi[l - 1]
    beta = g.beta[l - 1]
    top = l == hyper.L

    Zsum = Z_l.sum(axis=2)          # [k1, k]
    Zcol = Zsum.sum(axis=0)         # Z_{. k .}
    nu_total = nu.sum()

    # q_k = 0 exactly when its count total vanishes (degenerate Beta limit).
    q = np.zeros(K)
    pos = Zcol > 0
    if pos.any():
        b = np.maximum(nu * (xi + nu_total - nu), SHAPE_FLOOR)
        q[pos] = rng.gen.beta(Zcol[pos], b[pos])
    q = np.clip(q, 0.0, 1.0 - 1e-16)
    log1mq = np.log1p(-q)

    conc = pi_concentration(nu, xi)
    h = crt_array(Zsum, conc, rng)

    # xi carries a Gam(eps0, eps0) prior (the same noninformative prior the
    # stochastic-gradient potential differentiates), so its conjugate update
    # adds the diagonal table counts and the diagonal log-mass to eps0
    xi_shape = hyper.eps0 + np.trace(h)
    xi_rate = hyper.eps0 - float((nu * log1mq).sum())
    xi_new = max(float(gamma_array(xi_shape, xi_rate, rng)), SHAPE_FLOOR)

    nu_offset = hyper.gamma0 / K if nu_shape_mode == "width" else hyper.gamma0 / beta
    h_col = h.sum(axis=0)  # includes h_kk
    h_row = h.sum(axis=1)
    for k in range(K):
        n_k = h_col[k] + h_row[k] - h[k, k]
        rho_k = -log1mq[k] * (xi_new + nu.sum() - nu[k]) \
            - float((log1mq * nu).sum()) + log1mq[k] * nu[k]
        if top:
            n_k += x_top[k]
            rho_k += zeta_top * hyper.tau0
        nu[k] = max(float(gamma_array(nu_offset + n_k, beta + rho_k, rng)), SHAPE_FLOOR)

    beta_new = float(gamma_array(hyper.eps0 + hyper.gamma0, hyper.eps0 + nu.sum(), rng))
    return nu, xi_new, max(beta_new, SHAPE_FLOOR)


# ---------------------------------------------------------------------------
# chain driver


def init_chain(X: CountMatrix, hyper: HyperParams, rng: RngStream):
    """Overdispersed start: globals from their priors, Theta i.i.d. Gam(1,1)."""
    g = sample_global_params(hyper, X.T, rng)
    Theta = [np.maximum(gamma_array(np.ones((k, X.T)), 1.0, rng), THETA_FLOOR)
             for k in hyper.K]
    lat = LatentState(Theta=Theta)
    lat.zeta = compute_zeta(g.delta, hyper.tau0, hyper.L, X.T)
    return g, lat


def gibbs_sweep(X: CountMatrix, hyper: HyperParams, g: GlobalParams,
                lat: LatentState, rng: RngStream,
                nu_shape_mode: str = "width") -> AuxCounts:
    """One full sweep; mutates `g` and `lat` in place and returns the lattice."""
    if X.kind == "binary":
        data_counts = impute_binary_counts(X.entries, hyper, g, lat, rng)
    else:
        data_counts = X.entries
    T = X.T

    aux = backward_upward(data_counts, hyper, g, lat, rng)
    lat.zeta = compute_zeta(g.delta, hyper.tau0, hyper.L, T)

    for l in range(1, hyper.L + 1):
        nu, xi, beta = sample_nu_xi_beta(
            aux.Z[l - 1], aux.x_top, lat.zeta[hyper.L, 1], l, hyper, g, rng,
            nu_shape_mode=nu_shape_mode)
        g.nu[l - 1], g.xi[l - 1], g.beta[l - 1] = nu, xi, beta
        g.Pi[l - 1] = sample_pi(aux.Z[l - 1], nu, xi, rng)
        g.Phi[l - 1] = sample_phi(aux.A[l - 1], hyper.eta[l - 1], rng)

    forward_downward(aux, hyper, g, lat, rng)
    g.delta = sample_delta(data_counts, lat.Theta[0], hyper, rng)
    return aux
