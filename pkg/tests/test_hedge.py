import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gammaln

from mechgrl.agents import (
    KTCounter,
    bayes_mixture_squared_error,
    hedge_init,
    hedge_step,
    kt_distribution,
    kt_predict,
    mixture_log_loss,
)
from mechgrl.errors import ContractError, DomainError


def kt_block(n0, n1):
    """Closed-form KT probability of any sequence with n0 zeros and n1 ones."""
    return math.exp(gammaln(n0 + 0.5) + gammaln(n1 + 0.5) - math.log(math.pi) - gammaln(n0 + n1 + 1))


def test_kt_small_values():
    assert kt_predict(0, 0) == 0.5
    assert kt_predict(0, 1) == 0.75
    assert kt_predict(2, 0) == pytest.approx(0.5 / 3)
    assert np.allclose(kt_distribution([1, 0, 0]), [1.5 / 2.5, 0.5 / 2.5, 0.5 / 2.5])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_kt_sequential_product_matches_block_formula(bits):
    c = KTCounter(2)
    p = 1.0
    for b in bits:
        p *= c.prob(b)
        c.update(b)
    assert p == pytest.approx(kt_block(bits.count(0), bits.count(1)), rel=1e-10)


def test_hedge_validation():
    with pytest.raises(DomainError):
        hedge_init({0: 0.0})
    with pytest.raises(DomainError):
        hedge_init({0: 1.0}, eta=0)
    st0 = hedge_init({0: 0.5, 1: 0.5})
    with pytest.raises(ContractError):
        hedge_step(st0, {0: 1.0})
    with pytest.raises(ContractError):
        hedge_step(st0, {0: 1.0, 1: 1.0}, arrivals=[7])


def test_arrival_seeded_at_prior_times_exp_minus_cumulative_loss():
    st0 = hedge_init({0: 0.5, 1: 0.25, 2: 0.25}, active=[0, 1])
    losses = {0: 0.4, 1: 1.3}
    L = mixture_log_loss(st0, losses)
    st1 = hedge_step(st0, losses, arrivals=[2])
    assert st1.cum_loss == pytest.approx(L)
    assert st1.weights[2] == pytest.approx(0.25 * math.exp(-L))
    assert st1.weights[0] == pytest.approx(0.5 * math.exp(-0.4))
    st2 = hedge_step(st1, {0: 0.1, 1: 0.1, 2: 0.1}, departures=[1])
    assert st2.active == frozenset({0, 2}) and 1 not in st2.log_weights


@given(st.integers(2, 5), st.integers(1, 60), st.integers(0, 10**6))
def test_eta_one_is_bayes_posterior(n, T, seed):
    rng = np.random.default_rng(seed)
    priors = rng.dirichlet(np.ones(n))
    st_ = hedge_init(dict(enumerate(priors)))
    logpost = np.log(priors)
    for _ in range(T):
        p = rng.uniform(0.01, 1, size=n)
        st_ = hedge_step(st_, dict(enumerate(-np.log(p))))
        logpost += np.log(p)
    post = np.exp(logpost - logpost.max())
    post /= post.sum()
    w = st_.normalized()
    assert np.allclose([w[i] for i in range(n)], post, atol=1e-12)


@given(st.integers(2, 4), st.sampled_from([1.0, 0.5]), st.integers(0, 10**6))
def test_mixture_loss_regret_bound(n, eta, seed):
    rng = np.random.default_rng(seed)
    priors = rng.dirichlet(np.ones(n))
    st_ = hedge_init(dict(enumerate(priors)), eta)
    cum, mix = np.zeros(n), 0.0
    for _ in range(50):
        loss = -np.log(rng.uniform(1e-3, 1, size=n))
        mix += mixture_log_loss(st_, dict(enumerate(loss)))
        st_ = hedge_step(st_, dict(enumerate(loss)))
        cum += loss
    assert mix <= (cum + np.log(1 / priors) / eta).min() + 1e-9


def test_long_streams_do_not_underflow():
    st_ = hedge_init({0: 0.5, 1: 0.5})
    for _ in range(5000):
        st_ = hedge_step(st_, {0: 50.0, 1: 51.0})
    w = st_.normalized()
    assert math.isfinite(w[0]) and w[0] == pytest.approx(1.0)


def bernoulli(p1):
    return lambda prefix: np.array([1 - p1, p1])


@pytest.mark.parametrize("true_index", [0, 1, 2])
def test_bayes_squared_error_bounded_by_log_inverse_prior(true_index):
    models = [bernoulli(0.1), bernoulli(0.5), bernoulli(0.8)]
    priors = [0.2, 0.3, 0.5]
    err = bayes_mixture_squared_error(models, priors, true_index, 10)
    assert 0 < err <= math.log(1 / priors[true_index])


def test_bayes_squared_error_zero_when_prior_is_point_mass_model():
    assert bayes_mixture_squared_error([bernoulli(0.3)], [1.0], 0, 6) == pytest.approx(0.0)
