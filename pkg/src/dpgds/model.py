"""Model state containers and the exact ancestral generative process.

Layer widths are indexed K_1..K_L with K_0 = V, so Phi[0] is the V x K_1
loading matrix mapping layer-1 factors to the vocabulary.  Python lists hold
one array per layer throughout; index l-1 addresses layer l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .distributions import (
    SHAPE_FLOOR,
    ParameterDomainError,
    dirichlet_array,
    gamma_array,
)
from .rng import RngStream

NEG_INF = float("-inf")
THETA_FLOOR = 1e-300  # keeps downstream rates positive


def matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """A @ x via an elementwise product and a pairwise-sum reduction.

    BLAS matmul kernels pick summation orders based on runtime memory
    alignment, which breaks bit-reproducibility across checkpoint resume;
    this reduction depends only on shapes.
    """
    return (A * x).sum(axis=1)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A @ B column by column with the same reproducibility guarantee."""
    out = np.empty((A.shape[0], B.shape[1]))
    for j in range(B.shape[1]):
        out[:, j] = (A * B[:, j]).sum(axis=1)
    return out


@dataclass
class HyperParams:
    L: int
    K: list[int]
    V: int
    tau0: float = 1.0
    gamma0: float = 100.0
    eta: list[float] | float = 0.1
    eps0: float = 0.1
    tie_delta: bool = True
    observation_link: str = "poisson-count"  # or "bernoulli-poisson"

    def __post_init__(self):
        self.K = [int(k) for k in self.K]
        if self.L < 1 or len(self.K) != self.L:
            raise ParameterDomainError(f"need L >= 1 layer widths, got L={self.L}, K={self.K}")
        if min(self.K) < 1 or self.V < 1:
            raise ParameterDomainError("layer widths and vocabulary size must be >= 1")
        if np.isscalar(self.eta):
            self.eta = [float(self.eta)] * self.L
        if min(self.tau0, self.gamma0, self.eps0, *self.eta) <= 0:
            raise ParameterDomainError("tau0, gamma0, eps0 and eta must be positive")
        if self.observation_link not in ("poisson-count", "bernoulli-poisson"):
            raise ParameterDomainError(f"unknown observation link {self.observation_link!r}")

    def width(self, layer: int) -> int:
        """K_layer with the K_0 = V convention."""
        return self.V if layer == 0 else self.K[layer - 1]


@dataclass
class GlobalParams:
    Phi: list[np.ndarray]   # layer l: K_{l-1} x K_l, columns on the simplex
    Pi: list[np.ndarray]    # layer l: K_l x K_l, columns on the simplex
    nu: list[np.ndarray]    # layer l: positive length-K_l
    xi: list[float]
    beta: list[float]
    delta: np.ndarray       # scalar array () when tied, else length T

    def delta_at(self, t: int) -> float:
        """delta for time t (1-based); tied deltas broadcast."""
        return float(self.delta) if self.delta.ndim == 0 else float(self.delta[t - 1])


@dataclass
class LatentState:
    Theta: list[np.ndarray]       # layer l: K_l x T, strictly positive
    zeta: np.ndarray | None = None  # (L+1, T+2), zeta[l, t] for t = 0..T+1


@dataclass
class CountMatrix:
    entries: np.ndarray  # V x T, nonnegative integers
    kind: str = "count"  # or "binary"

    def __post_init__(self):
        self.entries = np.asarray(self.entries)
        if self.entries.ndim != 2:
            raise ParameterDomainError("count matrix must be 2-dimensional")
        if np.any(self.entries < 0):
            raise ParameterDomainError("count matrix entries must be nonnegative")
        if self.kind == "binary" and np.any(self.entries > 1):
            raise ParameterDomainError("binary matrix entries must lie in {0, 1}")
        self.entries = self.entries.astype(np.int64)

    @property
    def V(self) -> int:
        return self.entries.shape[0]

    @property
    def T(self) -> int:
        return self.entries.shape[1]


def pi_concentration(nu: np.ndarray, xi: float) -> np.ndarray:
    """Dirichlet concentration matrix for Pi: column k is nu * nu_k with
    xi * nu_k on the diagonal."""
    conc = np.outer(nu, nu)
    np.fill_diagonal(conc, xi * nu)
    return np.maximum(conc, SHAPE_FLOOR)


def sample_global_params(hyper: HyperParams, T: int, rng: RngStream) -> GlobalParams:
    """Draw Phi, Pi, nu, xi, beta, delta from their priors."""
    Phi, Pi, nu, xi, beta = [], [], [], [], []
    for l in range(1, hyper.L + 1):
        K = hyper.width(l)
        beta_l = float(gamma_array(hyper.eps0, hyper.eps0, rng))
        xi_l = float(gamma_array(hyper.eps0, hyper.eps0, rng))
        nu_l = gamma_array(np.full(K, hyper.gamma0 / K), beta_l, rng)
        nu_l = np.maximum(nu_l, SHAPE_FLOOR)
        eta_l = hyper.eta[l - 1]
        Phi_l = dirichlet_array(np.full((K, hyper.width(l - 1)), eta_l), rng).T
        Pi_l = dirichlet_array(pi_concentration(nu_l, xi_l).T, rng).T
        Phi.append(Phi_l)
        Pi.append(Pi_l)
        nu.append(nu_l)
        xi.append(xi_l)
        beta.append(beta_l)
    if hyper.tie_delta:
        delta = np.asarray(float(gamma_array(hyper.eps0, hyper.eps0, rng)))
    else:
        delta = gamma_array(np.full(T, hyper.eps0), hyper.eps0, rng)
    return GlobalParams(Phi=Phi, Pi=Pi, nu=nu, xi=xi, beta=beta, delta=delta)


def sample_theta_chain(hyper: HyperParams, g: GlobalParams, T: int, rng: RngStream) -> LatentState:
    """Ancestral draw of the gamma chains, top layer down, t = 1..T."""
    tau0 = hyper.tau0
    Theta = [np.empty((hyper.K[l], T)) for l in range(hyper.L)]
    for t in range(1, T + 1):
        for l in range(hyper.L, 0, -1):
            if t == 1:
                if l == hyper.L:
                    shape = tau0 * g.nu[l - 1]
                else:
                    shape = tau0 * matvec(g.Phi[l], Theta[l][:, 0])
            else:
                shape = tau0 * matvec(g.Pi[l - 1], Theta[l - 1][:, t - 2])
                if l < hyper.L:
                    shape = shape + tau0 * matvec(g.Phi[l], Theta[l][:, t - 1])
            draw = gamma_array(shape, tau0, rng)
            Theta[l - 1][:, t - 1] = np.maximum(draw, THETA_FLOOR)
    return LatentState(Theta=Theta)


def emit_counts(hyper: HyperParams, g: GlobalParams, lat: LatentState, rng: RngStream) -> CountMatrix:
    """Poisson emission at the data layer; binary link thresholds the count."""
    T = lat.Theta[0].shape[1]
    rates = matmul(g.Phi[0], lat.Theta[0])
    if g.delta.ndim == 0:
        rates = rates * float(g.delta)
    else:
        rates = rates * g.delta[None, :]
    counts = rng.gen.poisson(rates)
    if hyper.observation_link == "bernoulli-poisson":
        return CountMatrix(entries=(counts >= 1).astype(np.int64), kind="binary")
    return CountMatrix(entries=counts, kind="count")


def generate(hyper: HyperParams, T: int, rng: RngStream):
    """Full ancestral simulation: globals, latent chains, observed counts."""
    if T < 1:
        raise ParameterDomainError(f"T must be positive, got {T}")
    g = sample_global_params(hyper, T, rng)
    lat = sample_theta_chain(hyper, g, T, rng)
    X = emit_counts(hyper, g, lat, rng)
    return g, lat, X


def project_topic(g: GlobalParams, layer: int, topic: int) -> np.ndarray:
    """Push factor `topic` of `layer` down to the data layer (a V-simplex)."""
    if not (1 <= layer <= len(g.Phi)):
        raise IndexError(f"layer {layer} out of range")
    if not (1 <= topic <= g.Phi[layer - 1].shape[1]):
        raise IndexError(f"topic {topic} out of range at layer {layer}")
    vec = g.Phi[layer - 1][:, topic - 1]
    for l in range(layer - 1, 0, -1):
        vec = matvec(g.Phi[l - 1], vec)
    return vec


def expected_rate(g: GlobalParams, lat: LatentState, t: int) -> np.ndarray:
    """Conditional Poisson mean delta_t * Phi^(1) theta_t^(1)."""
    T = lat.Theta[0].shape[1]
    if not (1 <= t <= T):
        raise IndexError(f"t={t} out of range 1..{T}")
    return g.delta_at(t) * matvec(g.Phi[0], lat.Theta[0][:, t - 1])


def poisson_log_likelihood(X: CountMatrix, g: GlobalParams, lat: LatentState) -> float:
    """Sum of Poisson log masses at the expected rates.

    A zero rate under a positive count yields -inf (reported as a sentinel,
    not an exception).
    """
    if X.kind != "count":
        raise ParameterDomainError("poisson_log_likelihood expects kind='count'")
    rates = matmul(g.Phi[0], lat.Theta[0])
    if g.delta.ndim == 0:
        rates = rates * float(g.delta)
    else:
        rates = rates * g.delta[None, :]
    x = X.entries
    if np.any((rates == 0) & (x > 0)):
        return NEG_INF
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(x > 0, x * np.log(rates), 0.0) - rates - gammaln(x + 1.0)
    return float(terms.sum())
