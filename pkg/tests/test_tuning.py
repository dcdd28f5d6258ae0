import numpy as np
import pytest
from scipy import stats

from signedbp import tuning
from signedbp.tuning import (EmpiricalIF, SurrogateIF, TuningInputs,
                             computational_time, ct_sweep, estimate_gamma,
                             log_abs_variance, optimal_lambda, prob_positive,
                             recommend)


def _simulate_log_abs_and_sign(m, lam, sigma, n_reps, seed):
    """Direct simulation of the estimator's log|.| and sign under the
    fixed shift a = B - m*lam (factors 1 + sigma*Z/(m*lam))."""
    rng = np.random.default_rng(seed)
    totals = rng.poisson(m * lam, n_reps)
    z = rng.standard_normal(int(totals.sum()))
    factors = 1.0 + sigma * z / (m * lam)
    edges = np.concatenate(([0], np.cumsum(totals)))
    log_abs = np.zeros(n_reps)
    n_neg = np.zeros(n_reps, dtype=int)
    logs = np.log(np.abs(factors))
    negs = (factors < 0).astype(int)
    for r in range(n_reps):
        sl = slice(edges[r], edges[r + 1])
        log_abs[r] = logs[sl].sum()
        n_neg[r] = negs[sl].sum()
    return log_abs, (-1.0) ** n_neg


def test_prob_positive_certain_when_shift_deep():
    # mass below the shift is negligible at m*lam / sigma = 10
    assert prob_positive(1.0, 10, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_prob_positive_closed_form():
    # independent derivation: negatives arrive as a thinned Poisson with
    # mean m*lam*Phi(-m*lam/sigma); the estimate is positive iff their
    # count is even
    for m, lam, sigma in [(1.0, 5, 10.0), (1.0, 20, 10.0), (2.0, 8, 30.0)]:
        p = stats.norm.cdf(-m * lam / sigma)
        expected = 0.5 * (1.0 + np.exp(-2.0 * m * lam * p))
        assert prob_positive(m, lam, sigma) == pytest.approx(expected,
                                                             rel=1e-9)


def test_prob_positive_simulation():
    m, lam, sigma = 1.0, 8, 12.0
    _, signs = _simulate_log_abs_and_sign(m, lam, sigma, 100_000, 21)
    frac = np.mean(signs > 0)
    se = np.sqrt(frac * (1 - frac) / len(signs))
    assert abs(prob_positive(m, lam, sigma) - frac) < 3 * se


def test_log_abs_variance_simulation():
    m, lam, sigma = 1.0, 10, 2.0
    log_abs, _ = _simulate_log_abs_and_sign(m, lam, sigma, 200_000, 22)
    sim = log_abs.var(ddof=1)
    assert log_abs_variance(m, lam, sigma) == pytest.approx(sim, rel=0.02)


def test_polygamma_moments_asymptotic_matches_direct_sum():
    # the large-mean branch must agree with an explicit windowed sum
    from scipy.special import polygamma

    mean = 2.0e4  # above the internal switch point
    js = np.arange(int(mean - 45 * np.sqrt(mean)),
                   int(mean + 45 * np.sqrt(mean)))
    pmf = stats.poisson.pmf(js, mean)
    pmf = pmf / pmf.sum()
    v0 = polygamma(0, 0.5 + js)
    e0 = float(np.sum(pmf * v0))
    var0 = float(np.sum(pmf * (v0 - e0) ** 2))
    e1 = float(np.sum(pmf * polygamma(1, 0.5 + js)))
    a0, avar0, a1 = tuning._poisson_polygamma_moments(mean)
    assert a0 == pytest.approx(e0, rel=1e-8)
    assert avar0 == pytest.approx(var0, rel=1e-4)
    assert a1 == pytest.approx(e1, rel=1e-6)


def test_log_abs_variance_monotone_in_sigma():
    vals = [log_abs_variance(1.0, 50, s) for s in (0.5, 1.0, 2.0, 5.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_surrogate_if_monotone_and_bounded():
    f = SurrogateIF()
    assert f(0.0) == 1.0
    assert f(1.0) < f(10.0) < f(100.0)
    assert f(100.0, rho=0.99) < f(100.0, rho=0.0)
    assert np.isinf(f(1e8))


def test_empirical_if_from_pilot():
    rng = np.random.default_rng(5)
    x = np.empty(50_000)
    x[0] = 0.0
    phi = 0.6
    innov = rng.standard_normal(len(x))
    for i in range(1, len(x)):
        x[i] = phi * x[i - 1] + innov[i]
    f = EmpiricalIF(x)
    expected = (1 + phi) / (1 - phi)
    assert f(123.0) == pytest.approx(expected, rel=0.15)


def test_computational_time_formula():
    inputs = TuningInputs(gamma=400.0, m=1.0, lam=30, M=20, rho=0.5)
    tau = prob_positive(1.0, 30, inputs.sigma_B)
    sigma2 = log_abs_variance(1.0, 30, inputs.sigma_B)
    expected = 30 * 20 * SurrogateIF()(sigma2, 0.5) / (2 * tau - 1) ** 2
    assert computational_time(inputs) == pytest.approx(expected, rel=1e-12)


def test_computational_time_infinite_below_half():
    # enormous intrinsic variance drives tau to one half
    inputs = TuningInputs(gamma=1e12, m=1.0, lam=800, M=1, rho=0.0)
    assert np.isinf(computational_time(inputs))


def test_optimal_lambda_reference_points():
    assert optimal_lambda(500.0 ** 2, rho=0.0) == 294
    assert optimal_lambda(500.0 ** 2, rho=0.99) == 187


def test_optimal_lambda_grows_with_gamma():
    lo = optimal_lambda(50.0 ** 2, rho=0.0)
    hi = optimal_lambda(500.0 ** 2, rho=0.0)
    assert lo < hi


def test_estimate_gamma_scales_with_variance():
    class P:
        def __init__(self, sd):
            self.sd = sd

        def z_hat(self, theta, key):
            from signedbp.rng import stream
            return 10.0 + self.sd * stream(*key).standard_normal()

    g_small = estimate_gamma([0.0], P(0.1), M=10, replicates=400)
    g_big = estimate_gamma([0.0], P(1.0), M=10, replicates=400)
    assert 0 < g_small < g_big
    assert g_big / g_small == pytest.approx(100.0, rel=0.5)
    with pytest.raises(ValueError):
        estimate_gamma([], P(1.0), M=10, replicates=10)


def test_recommend_branches():
    high = recommend(500.0 ** 2)
    assert (high.lam, high.rho) == (100, 0.99)
    assert high.M_opt == max(50, round(0.0012 * 500 ** 2))
    low = recommend(50.0 ** 2)
    assert (low.lam, low.rho) == (50, 0.98)
    assert low.M_opt == max(50, round(0.0042 * 50 ** 2))
    tiny = recommend(5.0 ** 2)
    assert tiny.M_opt == 50
    assert tiny.low_variance_lambda == 10
    assert recommend(500.0 ** 2).low_variance_lambda is None
    with pytest.raises(ValueError):
        recommend(-1.0)


def test_ct_sweep_consistent_with_optimal_lambda():
    grid = np.arange(10, 801)
    sweep = ct_sweep(500.0 ** 2, rho=0.0, M=100, lam_grid=grid)
    assert sweep.shape == (len(grid),)
    best = int(sweep["lam"][np.argmin(sweep["ct"])])
    assert best == optimal_lambda(500.0 ** 2, rho=0.0)
    assert np.all(sweep["tau"] > 0.5) or np.any(np.isinf(sweep["ct"]))


def test_poisson_moment_guard():
    with pytest.raises(ValueError):
        next(tuning._poisson_pmf_until_tail(1e4))
