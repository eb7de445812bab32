"""Shared oracle helpers for the test suite."""

import numpy as np
from scipy.stats import chi2


def chisq_pvalue(observed, expected):
    """Pearson chi-square p-value with cells pooled so every expected
    count is at least 5."""
    observed = np.asarray(observed, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    order = np.argsort(expected)
    obs_p, exp_p = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += observed[i]
        acc_e += expected[i]
        if acc_e >= 5.0:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and exp_p:
        obs_p[-1] += acc_o
        exp_p[-1] += acc_e
    obs_p, exp_p = np.array(obs_p), np.array(exp_p)
    if len(obs_p) < 2:
        return 1.0
    # renormalize expected to the observed total (counts, not probabilities)
    exp_p = exp_p * obs_p.sum() / exp_p.sum()
    stat = float(((obs_p - exp_p) ** 2 / exp_p).sum())
    return float(chi2.sf(stat, len(obs_p) - 1))


def two_sample_chisq_pvalue(counts_a, counts_b):
    """Homogeneity chi-square between two histograms on the same support."""
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    # pool sparse cells
    order = np.argsort(a + b)
    pooled = [[0.0, 0.0]]
    for i in order:
        pooled[-1][0] += a[i]
        pooled[-1][1] += b[i]
        if pooled[-1][0] + pooled[-1][1] >= 20:
            pooled.append([0.0, 0.0])
    if pooled[-1][0] + pooled[-1][1] < 20 and len(pooled) > 1:
        last = pooled.pop()
        pooled[-1][0] += last[0]
        pooled[-1][1] += last[1]
    table = np.array(pooled)
    if len(table) < 2:
        return 1.0
    na, nb = table[:, 0].sum(), table[:, 1].sum()
    tot = table.sum(axis=1)
    ea = tot * na / (na + nb)
    eb = tot * nb / (na + nb)
    stat = float(((table[:, 0] - ea) ** 2 / ea + (table[:, 1] - eb) ** 2 / eb).sum())
    return float(chi2.sf(stat, len(table) - 1))


def histogram(draws, support_max):
    """Counts on {0..support_max}, overflow lumped into the last cell."""
    d = np.minimum(np.asarray(draws, dtype=np.int64), support_max)
    return np.bincount(d, minlength=support_max + 1)
