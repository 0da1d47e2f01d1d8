import math

import numpy as np
import pytest

from banditmtd.defenders import BanditFeedback, DefenderView
from banditmtd.defenders.baselines import (
    BiasedASLR, FixedMixed, RobustRL, SExp3, Uniform, q_update, sexp3_update, uniform_step,
)


def view(n, T=1000):
    return DefenderView(n, np.zeros((n, n)), T)


def fb(t, r=-0.5, cost=0.0, hit=True):
    return BanditFeedback(t, r, cost, hit)


def test_uniform_single_config():
    assert all(uniform_step(1, np.random.default_rng(i)) == 0 for i in range(10))


def test_uniform_frequencies():
    g = np.random.default_rng(0)
    freq = np.bincount([uniform_step(4, g) for _ in range(100_000)], minlength=4) / 100_000
    assert np.all(np.abs(freq - 0.25) < 0.01)


def test_uniform_reproducible():
    a = Uniform(view(2), np.random.default_rng(9))
    b = Uniform(view(2), np.random.default_rng(9))
    assert [a.select() for _ in range(50)] == [b.select() for _ in range(50)]


def test_fixed_mixed_validates():
    with pytest.raises(ValueError):
        FixedMixed(view(2), np.random.default_rng(), [0.5, 0.6])
    d = FixedMixed(view(3), np.random.default_rng(), [0, 1, 0])
    assert {d.select() for _ in range(20)} == {1}


# -- S-Exp3 --------------------------------------------------------------

def test_sexp3_batch_default():
    assert SExp3(view(3, T=1000), np.random.default_rng()).batch == 10
    assert SExp3(view(3, T=1001), np.random.default_rng()).batch == 11


def test_sexp3_equal_rewards_stay_uniform():
    d = SExp3(view(4, T=125), np.random.default_rng(0))
    for t in range(1, 126):
        d.select()
        d.update(fb(t, 0.0))
        np.testing.assert_allclose(d.probabilities(), 0.25)


def test_sexp3_holds_config_within_batch():
    d = SExp3(view(5, T=1000), np.random.default_rng(3))
    g = np.random.default_rng(4)
    for block in range(20):
        picks = []
        for i in range(d.batch):
            picks.append(d.select())
            d.update(fb(block * d.batch + i + 1, -g.random()))
        assert len(set(picks)) == 1


def test_sexp3_update_factor():
    # one step from uniform weights multiplies the arm's weight by exp(lr * g / p)
    log_w = np.zeros(3)
    sexp3_update(log_w, 1, -0.6, 1 / 3, 0.1)
    assert math.exp(log_w[1]) == pytest.approx(math.exp(0.1 * -0.6 * 3))
    # monotone in g / p
    a, b = np.zeros(2), np.zeros(2)
    sexp3_update(a, 0, -0.2, 0.5, 0.1)
    sexp3_update(b, 0, -0.4, 0.5, 0.1)
    assert a[0] > b[0]


def test_sexp3_batch_one_is_exp3():
    d = SExp3(view(2, T=10), np.random.default_rng(0), batch=1, lr=0.5)
    arm = d.select()
    p = d.probabilities()[arm]
    d.update(fb(1, -0.4, cost=0.1))
    assert d.log_w[arm] == pytest.approx(0.5 * -0.5 / p)
    assert d.log_w[1 - arm] == 0.0


# -- RobustRL ------------------------------------------------------------

def test_robust_rl_full_exploration_uniform():
    d = RobustRL(view(4), np.random.default_rng(0), epsilon=1.0)
    freq = np.bincount([d.select() for _ in range(40_000)], minlength=4) / 40_000
    assert np.all(np.abs(freq - 0.25) < 0.015)


def test_robust_rl_greedy():
    d = RobustRL(view(2), np.random.default_rng(0), epsilon=0.0)
    d.q = np.array([0.0, -0.5])
    assert d.select() == 0


def test_q_update_hand_value():
    q = np.zeros(3)
    q_update(q, 1, -1.0, 0.2, 0.8)
    assert q[1] == pytest.approx(-0.2)


def test_robust_rl_uses_modified_reward():
    d = RobustRL(view(2), np.random.default_rng(0), epsilon=0.0)
    d.select()
    d.update(fb(1, -0.5, cost=0.5))
    assert d.q[0] == pytest.approx(-0.2)


# -- BiasedASLR ----------------------------------------------------------

def test_aslr_probabilities():
    d = BiasedASLR(view(2), np.random.default_rng())
    np.testing.assert_allclose(d.probabilities(), [0.5, 0.5])
    d.counts[:] = [1, 3]
    np.testing.assert_allclose(d.probabilities(), [2 / 3, 1 / 3])
    d.counts[:] = [0, 10**6]
    assert d.probabilities()[0] > 0.999


def test_aslr_counts_only_breaches():
    d = BiasedASLR(view(2), np.random.default_rng(1))
    c = d.select()
    d.update(fb(1, 0.0, hit=False))
    assert d.counts.sum() == 0
    c = d.select()
    d.update(fb(2, -0.3, hit=True))
    assert d.counts[c] == 1
