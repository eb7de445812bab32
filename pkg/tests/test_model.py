import numpy as np
import pytest

from dpgds.distributions import ParameterDomainError, gamma_array
from dpgds.model import (
    CountMatrix,
    GlobalParams,
    HyperParams,
    LatentState,
    emit_counts,
    expected_rate,
    generate,
    pi_concentration,
    poisson_log_likelihood,
    project_topic,
    sample_global_params,
    sample_theta_chain,
)
from dpgds.rng import RngStream


def random_globals(hyper, T, seed=0, tie=True):
    rng = np.random.default_rng(seed)
    Phi, Pi, nu, xi, beta = [], [], [], [], []
    for l in range(1, hyper.L + 1):
        K = hyper.width(l)
        P = rng.gamma(2.0, size=(hyper.width(l - 1), K))
        Phi.append(P / P.sum(axis=0))
        Q = rng.gamma(2.0, size=(K, K))
        Pi.append(Q / Q.sum(axis=0))
        nu.append(rng.gamma(2.0, size=K))
        xi.append(float(rng.gamma(2.0)))
        beta.append(float(rng.gamma(2.0)))
    delta = np.asarray(1.0) if tie else rng.gamma(2.0, size=T)
    return GlobalParams(Phi=Phi, Pi=Pi, nu=nu, xi=xi, beta=beta, delta=delta)


# ---------------------------------------------------------------------------
# containers


def test_hyper_validation():
    with pytest.raises(ParameterDomainError):
        HyperParams(L=2, K=[3], V=5)
    with pytest.raises(ParameterDomainError):
        HyperParams(L=1, K=[0], V=5)
    with pytest.raises(ParameterDomainError):
        HyperParams(L=1, K=[3], V=5, tau0=-1.0)
    h = HyperParams(L=2, K=[3, 2], V=5, eta=0.2)
    assert h.eta == [0.2, 0.2]
    assert h.width(0) == 5 and h.width(2) == 2


def test_count_matrix_validation():
    with pytest.raises(ParameterDomainError):
        CountMatrix(entries=np.array([[1, -1]]))
    with pytest.raises(ParameterDomainError):
        CountMatrix(entries=np.array([[0, 2]]), kind="binary")
    m = CountMatrix(entries=np.array([[0, 1], [2, 3]]))
    assert m.V == 2 and m.T == 2


def test_pi_concentration_layout():
    nu = np.array([1.0, 2.0, 3.0])
    conc = pi_concentration(nu, 10.0)
    assert conc[0, 1] == 2.0          # nu_0 * nu_1 off the diagonal
    assert conc[2, 1] == 6.0
    assert conc[1, 1] == 20.0         # xi * nu_1 on the diagonal


# ---------------------------------------------------------------------------
# generation


def test_generate_shapes_and_simplex_invariants():
    hyper = HyperParams(L=3, K=[4, 3, 2], V=6, gamma0=5.0)
    g, lat, X = generate(hyper, 7, RngStream(0))
    assert X.entries.shape == (6, 7)
    for l in range(3):
        assert g.Phi[l].shape == (hyper.width(l), hyper.K[l])
        assert np.allclose(g.Phi[l].sum(axis=0), 1.0, atol=1e-9)
        assert np.allclose(g.Pi[l].sum(axis=0), 1.0, atol=1e-9)
        assert np.all(lat.Theta[l] > 0)
    assert g.delta.ndim == 0


def test_generate_per_t_delta():
    hyper = HyperParams(L=1, K=[3], V=4, tie_delta=False)
    g, _, _ = generate(hyper, 9, RngStream(1))
    assert g.delta.shape == (9,)


def test_generate_binary_link():
    hyper = HyperParams(L=1, K=[3], V=4, gamma0=5.0,
                        observation_link="bernoulli-poisson")
    _, _, X = generate(hyper, 6, RngStream(2))
    assert X.kind == "binary"
    assert set(np.unique(X.entries)) <= {0, 1}


def test_emission_mean_matches_rate():
    hyper = HyperParams(L=2, K=[3, 2], V=4)
    g = random_globals(hyper, T=3, seed=3)
    lat = LatentState(Theta=[np.random.default_rng(4).gamma(2.0, size=(k, 3))
                             for k in hyper.K])
    rng = RngStream(5)
    reps = 10_000
    acc = np.zeros((4, 3))
    for _ in range(reps):
        acc += emit_counts(hyper, g, lat, rng).entries
    mean = acc / reps
    rates = g.Phi[0] @ lat.Theta[0] * float(g.delta)
    se = np.sqrt(rates / reps)
    assert np.all(np.abs(mean - rates) < 3.5 * se + 1e-12)


def test_l1_reduction_matches_hand_rolled_pgds_chain():
    # with one layer the theta chain is exactly the shallow gamma process:
    # same draws off a cloned stream
    hyper = HyperParams(L=1, K=[4], V=5, gamma0=5.0)
    g = random_globals(hyper, T=6, seed=6)
    a, b = RngStream(7), RngStream(7)
    lat = sample_theta_chain(hyper, g, 6, a)
    theta = np.empty((4, 6))
    theta[:, 0] = gamma_array(hyper.tau0 * g.nu[0], hyper.tau0, b)
    for t in range(1, 6):
        shape = hyper.tau0 * (g.Pi[0] * theta[:, t - 1]).sum(axis=1)
        theta[:, t] = gamma_array(shape, hyper.tau0, b)
    assert np.array_equal(lat.Theta[0], theta)


# ---------------------------------------------------------------------------
# expected rate / Eq.-style expansion oracle


def tower_rule_oracle(g, given, steps_back):
    """Numerically propagate conditional expectations layer by layer for a
    3-layer model, conditioning on theta^(1)_{t-1}, theta^(2)_{t-2},
    theta^(3)_{t-3}.  Returns E[x_t]."""
    th1_prev, th2_prev2, th3_prev3 = given
    e3_tm2 = g.Pi[2] @ th3_prev3
    e3_tm1 = g.Pi[2] @ e3_tm2
    e3_t = g.Pi[2] @ e3_tm1
    e2_tm1 = g.Phi[2] @ e3_tm1 + g.Pi[1] @ th2_prev2
    e2_t = g.Phi[2] @ e3_t + g.Pi[1] @ e2_tm1
    e1_t = g.Phi[1] @ e2_t + g.Pi[0] @ th1_prev
    return float(g.delta) * (g.Phi[0] @ e1_t)


def closed_form_expansion(g, given):
    th1_prev, th2_prev2, th3_prev3 = given
    P1, P2, P3 = g.Phi
    Pi1, Pi2, Pi3 = g.Pi
    term1 = P1 @ Pi1 @ th1_prev
    term2 = P1 @ P2 @ Pi2 @ Pi2 @ th2_prev2
    term3 = P1 @ P2 @ (Pi2 @ P3 + P3 @ Pi3) @ Pi3 @ Pi3 @ th3_prev3
    return float(g.delta) * (term1 + term2 + term3)


def test_three_layer_expansion_matches_tower_rule():
    hyper = HyperParams(L=3, K=[4, 3, 2], V=5)
    g = random_globals(hyper, T=4, seed=8)
    r = np.random.default_rng(9)
    given = (r.gamma(2.0, size=4), r.gamma(2.0, size=3), r.gamma(2.0, size=2))
    a = tower_rule_oracle(g, given, 3)
    b = closed_form_expansion(g, given)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_three_layer_expansion_matches_monte_carlo():
    hyper = HyperParams(L=3, K=[4, 3, 2], V=5)
    g = random_globals(hyper, T=4, seed=10)
    r = np.random.default_rng(11)
    given = (r.gamma(2.0, size=4), r.gamma(2.0, size=3), r.gamma(2.0, size=2))
    target = closed_form_expansion(g, given)
    rng = RngStream(12)
    tau0 = 1.0
    reps = 40_000
    acc = np.zeros(5)
    for _ in range(reps):
        th3_tm2 = gamma_array(tau0 * (g.Pi[2] @ given[2]), tau0, rng)
        th3_tm1 = gamma_array(tau0 * (g.Pi[2] @ th3_tm2), tau0, rng)
        th3_t = gamma_array(tau0 * (g.Pi[2] @ th3_tm1), tau0, rng)
        th2_tm1 = gamma_array(tau0 * (g.Phi[2] @ th3_tm1 + g.Pi[1] @ given[1]), tau0, rng)
        th2_t = gamma_array(tau0 * (g.Phi[2] @ th3_t + g.Pi[1] @ th2_tm1), tau0, rng)
        th1_t = gamma_array(tau0 * (g.Phi[1] @ th2_t + g.Pi[0] @ given[0]), tau0, rng)
        acc += rng.gen.poisson(float(g.delta) * (g.Phi[0] @ th1_t))
    mean = acc / reps
    # variance of the compound draw dominates; use empirical spread bound
    assert np.all(np.abs(mean - target) < 0.06 * np.maximum(target, 1.0))


def test_expected_rate_identity_phi():
    hyper = HyperParams(L=1, K=[3], V=3)
    g = random_globals(hyper, T=2, seed=13)
    g.Phi[0] = np.eye(3)
    lat = LatentState(Theta=[np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])])
    assert np.allclose(expected_rate(g, lat, 2), [2.0, 4.0, 6.0])
    with pytest.raises(IndexError):
        expected_rate(g, lat, 3)


# ---------------------------------------------------------------------------
# topic projection


def test_project_topic_layer1_identity_and_simplex():
    hyper = HyperParams(L=2, K=[2, 2], V=2)
    g = random_globals(hyper, T=2, seed=14)
    assert np.array_equal(project_topic(g, 1, 1), g.Phi[0][:, 0])
    v = project_topic(g, 2, 2)
    assert abs(v.sum() - 1.0) < 1e-9 and np.all(v >= 0)


def test_project_topic_identity_loading():
    hyper = HyperParams(L=2, K=[2, 2], V=2)
    g = random_globals(hyper, T=2, seed=15)
    g.Phi[0] = np.eye(2)
    g.Phi[1] = np.array([[0.3, 0.6], [0.7, 0.4]])
    assert np.allclose(project_topic(g, 2, 1), [0.3, 0.7])
    with pytest.raises(IndexError):
        project_topic(g, 3, 1)
    with pytest.raises(IndexError):
        project_topic(g, 1, 3)


# ---------------------------------------------------------------------------
# likelihood


def test_loglik_all_zero_unit_rate():
    hyper = HyperParams(L=1, K=[2], V=3)
    g = random_globals(hyper, T=4, seed=16)
    # force unit rates: Phi columns sum to 1, theta summing to 1 per t, delta=1
    lat = LatentState(Theta=[np.full((2, 4), 0.5)])
    X = CountMatrix(entries=np.zeros((3, 4), dtype=int))
    rates = g.Phi[0] @ lat.Theta[0]
    assert np.allclose(poisson_log_likelihood(X, g, lat), -rates.sum())


def test_loglik_closed_form_cell():
    g = GlobalParams(Phi=[np.eye(1)], Pi=[np.eye(1)], nu=[np.ones(1)],
                     xi=[1.0], beta=[1.0], delta=np.asarray(1.0))
    lat = LatentState(Theta=[np.array([[2.0]])])
    X = CountMatrix(entries=np.array([[2]]))
    assert abs(poisson_log_likelihood(X, g, lat) - (np.log(2.0) - 2.0)) < 1e-12


def test_loglik_matches_direct_sum_oracle():
    from math import lgamma, log
    hyper = HyperParams(L=1, K=[3], V=4)
    g = random_globals(hyper, T=5, seed=17, tie=False)
    lat = LatentState(Theta=[np.random.default_rng(18).gamma(2.0, size=(3, 5))])
    X = CountMatrix(entries=np.random.default_rng(19).poisson(2.0, size=(4, 5)))
    rates = (g.Phi[0] @ lat.Theta[0]) * g.delta[None, :]
    oracle = sum(X.entries[v, t] * log(rates[v, t]) - rates[v, t]
                 - lgamma(X.entries[v, t] + 1.0)
                 for v in range(4) for t in range(5))
    assert abs(poisson_log_likelihood(X, g, lat) - oracle) < 1e-10


def test_loglik_zero_rate_sentinel():
    g = GlobalParams(Phi=[np.eye(1)], Pi=[np.eye(1)], nu=[np.ones(1)],
                     xi=[1.0], beta=[1.0], delta=np.asarray(0.0))
    lat = LatentState(Theta=[np.array([[1.0]])])
    X = CountMatrix(entries=np.array([[3]]))
    assert poisson_log_likelihood(X, g, lat) == float("-inf")
