"""Held-out evaluation: top-M precision/recall, forecasting, frame error,
and factor alignment for recovery experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import gamma_array
from .model import CountMatrix, GlobalParams, LatentState, matvec
from .rng import RngStream


@dataclass
class HoldoutSplit:
    train: CountMatrix
    heldout: CountMatrix
    final_step_mask: np.ndarray  # True where the whole step is held out


def make_holdout(X: CountMatrix, fraction: float, holdout_final: bool,
                 rng: RngStream) -> HoldoutSplit:
    """Binomial thinning per cell into train with probability `fraction`;
    the final step is withheld entirely when flagged.  Counts are conserved
    exactly: train + heldout = X."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    train = rng.gen.binomial(X.entries, fraction)
    mask = np.zeros(X.T, dtype=bool)
    if holdout_final:
        train[:, -1] = 0
        mask[-1] = True
    heldout = X.entries - train
    return HoldoutSplit(train=CountMatrix(entries=train, kind=X.kind),
                        heldout=CountMatrix(entries=heldout, kind=X.kind),
                        final_step_mask=mask)


def _top_m(scores: np.ndarray, M: int) -> set[int]:
    # ties broken by ascending index: stable sort on (-score, index)
    order = np.lexsort((np.arange(scores.size), -scores))
    return set(order[:M].tolist())


def top_m_precision_recall(predicted_scores, true_counts, M: int):
    """Overlap of the predicted and true top-M sets.  Precision divides by M;
    recall divides by min(M, number of nonzero true entries).  The true set
    never includes zero entries, so both metrics stay in [0, 1]."""
    pred = np.asarray(predicted_scores, dtype=np.float64)
    true = np.asarray(true_counts, dtype=np.float64)
    if M > pred.size:
        raise ValueError(f"M={M} exceeds vector length {pred.size}")
    support = int((true > 0).sum())
    true_top = {v for v in _top_m(true, M) if true[v] > 0}
    hits = len(_top_m(pred, M) & true_top)
    recall = hits / min(M, support) if support else 0.0
    return hits / M, recall


def mean_precision_recall(model_rates: np.ndarray, split: HoldoutSplit, M: int = 50):
    """MP / MR: per-step top-M metrics against held-out counts, averaged over
    every step that is not fully held out."""
    steps = [t for t in range(split.heldout.T) if not split.final_step_mask[t]]
    pr = [top_m_precision_recall(model_rates[:, t], split.heldout.entries[:, t], M)
          for t in steps]
    precisions, recalls = zip(*pr)
    return float(np.mean(precisions)), float(np.mean(recalls))


def forecast_next(g: GlobalParams, lat: LatentState, horizon: int) -> np.ndarray:
    """Expected data rates for steps T+1 .. T+horizon by layer-wise
    propagation of conditional expectations; returns V x horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    L = len(g.Phi)
    T = lat.Theta[0].shape[1]
    theta = [lat.Theta[l][:, T - 1].copy() for l in range(L)]
    delta = float(g.delta) if g.delta.ndim == 0 else float(g.delta[-1])
    out = np.empty((g.Phi[0].shape[0], horizon))
    for h in range(horizon):
        nxt = [None] * L
        nxt[L - 1] = matvec(g.Pi[L - 1], theta[L - 1])
        for l in range(L - 1, 0, -1):
            nxt[l - 1] = matvec(g.Phi[l], nxt[l]) + matvec(g.Pi[l - 1], theta[l - 1])
        theta = nxt
        out[:, h] = delta * matvec(g.Phi[0], theta[0])
    return out


def forecast_next_monte_carlo(g: GlobalParams, lat: LatentState, horizon: int,
                              n_draws: int, rng: RngStream,
                              tau0: float = 1.0) -> np.ndarray:
    """Ancestral-simulation forecast: mean data rate over n_draws forward
    draws of the gamma chains."""
    L = len(g.Phi)
    T = lat.Theta[0].shape[1]
    delta = float(g.delta) if g.delta.ndim == 0 else float(g.delta[-1])
    acc = np.zeros((g.Phi[0].shape[0], horizon))
    for _ in range(n_draws):
        theta = [lat.Theta[l][:, T - 1].copy() for l in range(L)]
        for h in range(horizon):
            nxt = [None] * L
            shape = matvec(g.Pi[L - 1], theta[L - 1])
            nxt[L - 1] = gamma_array(tau0 * shape, tau0, rng)
            for l in range(L - 1, 0, -1):
                shape = matvec(g.Phi[l], nxt[l]) + matvec(g.Pi[l - 1], theta[l - 1])
                nxt[l - 1] = gamma_array(tau0 * shape, tau0, rng)
            theta = nxt
            acc[:, h] += delta * matvec(g.Phi[0], theta[0])
    return acc / n_draws


def prediction_error_frames(predicted_rates: np.ndarray, true_frames: np.ndarray) -> float:
    """Mean squared error between Bernoulli probabilities 1 - exp(-rate) and
    binary pixels, averaged over pixels and frames."""
    probs = -np.expm1(-np.asarray(predicted_rates, dtype=np.float64))
    truth = np.asarray(true_frames, dtype=np.float64)
    if probs.shape != truth.shape:
        raise ValueError(f"shape mismatch {probs.shape} vs {truth.shape}")
    return float(np.mean((probs - truth) ** 2))


def align_factors(estimated: np.ndarray, true: np.ndarray):
    """Greedy maximum-cosine column matching; returns (permutation, mean
    matched similarity).  permutation[j] is the estimated column assigned to
    true column j."""
    if estimated.shape != true.shape:
        raise ValueError("factor matrices must have equal shapes")
    K = true.shape[1]

    def unit(M):
        norms = np.linalg.norm(M, axis=0)
        return M / np.where(norms > 0, norms, 1.0)

    sim = unit(true).T @ unit(estimated)  # [true j, est i]
    perm = np.full(K, -1, dtype=np.int64)
    used = np.zeros(K, dtype=bool)
    scores = []
    # highest similarity first; ties resolved by ascending (j, i)
    order = np.lexsort((np.tile(np.arange(K), K), np.repeat(np.arange(K), K),
                        -sim.ravel()))
    for flat in order:
        j, i = divmod(int(flat), K)
        if perm[j] >= 0 or used[i]:
            continue
        perm[j] = i
        used[i] = True
        scores.append(sim[j, i])
        if len(scores) == K:
            break
    return perm, float(np.mean(scores))
