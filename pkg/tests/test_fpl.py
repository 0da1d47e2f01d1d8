import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from banditmtd.defenders import BanditFeedback, DefenderView, RevealedFeedback
from banditmtd.defenders.fpl import (
    ConfigEstimateTable, FplGr, FplMaxMin, FplMtd, FplParams, VulnEstimateTable, default_gr_cap,
    fpl_maxmin_select, fpl_maxmin_update, fpl_mtd_select, fpl_mtd_update, gr_mtd,
)
from banditmtd.resampling import geometric_resample, perturbed_leader

TINY_ETA = 1e-9


def rng(seed=0):
    return np.random.default_rng(seed)


# -- selection ---------------------------------------------------------------

def test_full_exploration_is_uniform():
    draws = perturbed_leader(np.array([0.0, -1.0, -2.0, -3.0]), 0.1, 1.0, rng(), size=100_000)
    counts = np.bincount(draws, minlength=4)
    assert chisquare(counts).pvalue > 1e-3


def test_vanishing_noise_picks_leader():
    table = ConfigEstimateTable(np.array([0.5, 0.1]))
    p = FplParams(eta=TINY_ETA, gamma=0.0)
    assert fpl_mtd_select(table, 0, p, rng(), np.zeros((2, 2))) == 0


def test_switching_cost_keeps_current_config():
    table = ConfigEstimateTable(np.array([0.5, 0.4]))
    s = np.array([[0.0, 0.2], [0.2, 0.0]])
    p = FplParams(eta=TINY_ETA, gamma=0.0)
    # from c1, moving to c0 costs 0.2 and 0.5 - 0.2 < 0.4
    assert fpl_mtd_select(table, 1, p, rng(), s) == 1
    # the plain rule ignores the cost
    assert fpl_mtd_select(table, 1, p, rng(), None) == 0


class _NoNoise:
    """Generator stand-in: never explores, zero perturbation."""

    def random(self, size):
        return np.ones(size)

    def integers(self, lo, hi, size):
        return np.zeros(size, dtype=int)

    def exponential(self, scale, size):
        return np.zeros(size)


def test_ties_go_to_lowest_index():
    assert perturbed_leader(np.array([-0.2, 0.0, 0.0]), 0.1, 0.0, _NoNoise())[0] == 1
    assert perturbed_leader(np.zeros(3), 0.1, 0.0, _NoNoise(), offset=np.array([0.1, 0.0, 0.0]))[0] == 1


# -- geometric resampling ------------------------------------------------------

def test_single_config_resamples_once():
    table = ConfigEstimateTable(np.zeros(1))
    p = FplParams(gamma=0.3)
    assert all(gr_mtd(table, 0, 0, p, rng(i), cap=100) == 1 for i in range(20))


def test_unreachable_choice_returns_cap():
    table = ConfigEstimateTable(np.array([1.0, 0.0]))
    p = FplParams(eta=TINY_ETA, gamma=0.0)
    assert gr_mtd(table, 0, 1, p, rng(), cap=3) == 3


def test_gr_does_not_touch_estimates():
    table = ConfigEstimateTable(np.array([-0.2, -0.1, -0.4]))
    before = table.estimates.copy()
    gr_mtd(table, 0, 2, FplParams(), rng(), np.zeros((3, 3)), cap=1000)
    np.testing.assert_array_equal(table.estimates, before)


@pytest.mark.parametrize("seed", range(10))
def test_batched_resampling_matches_one_at_a_time(seed):
    stream = rng(seed).integers(0, 40, size=200_000)
    pos = 0

    def simulate(k):
        nonlocal pos
        out = stream[pos:pos + k]
        pos += k
        return out

    hits = np.flatnonzero(stream == 7)
    assert geometric_resample(simulate, 7, 100_000) == min(hits[0] + 1, 100_000)


def test_batched_resampling_respects_cap():
    assert geometric_resample(lambda k: np.zeros(k, dtype=int), 1, 37) == 37


def test_gr_mean_is_inverse_probability():
    table = ConfigEstimateTable(np.zeros(4))
    p = FplParams(gamma=1.0)
    g = rng(5)
    ks = [gr_mtd(table, 0, 2, p, g, cap=10_000) for _ in range(20_000)]
    assert np.mean(ks) == pytest.approx(4.0, rel=0.05)


def test_default_cap():
    assert default_gr_cap(2, 10, 0.5) == 40
    assert FplParams(gamma=0.007).cap_for(3, 1000) == int(np.ceil(3 * 1000 / 0.007))


# -- estimate update ---------------------------------------------------------

def test_update_hand_example():
    table = ConfigEstimateTable.zeros(3)
    fpl_mtd_update(table, 0, -0.4, 2, 1)
    np.testing.assert_allclose(table.estimates, [-0.8, 0.0, 0.0])


def test_zero_reward_scales_estimates():
    table = ConfigEstimateTable(np.array([-1.0, -0.5, 0.0]))
    fpl_mtd_update(table, 1, 0.0, 5, 4)
    np.testing.assert_allclose(table.estimates, np.array([-1.0, -0.5, 0.0]) * 3 / 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-1, 0), st.integers(1, 50)), min_size=1, max_size=30))
def test_update_is_running_mean(steps):
    # estimate after t rounds equals the mean of K * r * indicator over rounds
    table = ConfigEstimateTable.zeros(4)
    acc = np.zeros(4)
    for t, (c, r, K) in enumerate(steps, start=1):
        fpl_mtd_update(table, c, r, K, t)
        acc[c] += K * r
    np.testing.assert_allclose(table.estimates, acc / len(steps), atol=1e-9)


def test_update_rejects_round_zero():
    with pytest.raises(ValueError):
        fpl_mtd_update(ConfigEstimateTable.zeros(2), 0, -0.1, 1, 0)


def test_params_validated():
    with pytest.raises(ValueError):
        FplParams(eta=0.0)
    with pytest.raises(ValueError):
        FplParams(gamma=1.5)


# -- FPL+GR vs FPL-MTD -----------------------------------------------------------

def _view(n=3, cost=0.0, T=200):
    s = np.full((n, n), cost)
    np.fill_diagonal(s, 0)
    return DefenderView(n, s, T)


def test_fpl_gr_equals_fpl_mtd_without_switching_costs():
    a = FplMtd(_view(), rng(1), gr_rng=rng(2))
    b = FplGr(_view(), rng(1), gr_rng=rng(2))
    feed = rng(3)
    for t in range(1, 200):
        da, db = a.select(), b.select()
        assert da == db
        r = -feed.random()
        a.update(BanditFeedback(t, r, 0.0, True))
        b.update(BanditFeedback(t, r, 0.0, True))
    np.testing.assert_array_equal(a.table.estimates, b.table.estimates)


def test_fpl_gr_learns_modified_reward():
    d = FplGr(_view(2, 0.5), rng(0), FplParams(gamma=1.0), gr_rng=rng(1))
    d.select()
    d.update(BanditFeedback(1, -0.2, 0.5, True))
    assert d.table.estimates.min() < -0.2


# -- FPL-MaxMin --------------------------------------------------------------

EX_MASK = np.array([[1, 1, 0], [0, 1, 1]], dtype=bool)


def test_maxmin_prefers_better_worst_case():
    table = VulnEstimateTable.zeros(3, 1)
    table.estimates = np.array([[-1.0], [-0.5], [-0.1]])
    p = FplParams(eta=TINY_ETA, gamma=0.0)
    assert fpl_maxmin_select(table, 0, EX_MASK, np.ones(1), np.zeros((2, 2)), p, rng()) == 1


def test_maxmin_symmetric_tie_picks_first():
    table = VulnEstimateTable.zeros(3, 2)
    table.estimates = np.array([[-0.5, -0.5], [-0.2, -0.2], [-0.5, -0.5]])
    p = FplParams(eta=TINY_ETA, gamma=0.0)
    # both configs have value -0.5; noise of size 1e-9 cannot beat a true tie
    # in general, so check the noiseless scores directly
    from banditmtd.defenders.fpl import maxmin_values
    u = maxmin_values(table.estimates, EX_MASK, np.array([0.5, 0.5]))
    assert u[0] == u[1]
    assert int(np.argmax(u)) == 0


def test_maxmin_exploration_uniform():
    table = VulnEstimateTable.zeros(3, 1)
    g = rng(0)
    p = FplParams(gamma=1.0)
    picks = [fpl_maxmin_select(table, 0, EX_MASK, np.ones(1), np.zeros((2, 2)), p, g) for _ in range(20_000)]
    assert abs(np.mean(picks) - 0.5) < 0.02


def test_maxmin_constant_attack_estimate():
    mask = np.ones((2, 3), dtype=bool)
    table = VulnEstimateTable.zeros(3, 1)
    for t in range(1, 41):
        fpl_maxmin_update(table, 0, 1, -0.3, t % 2, mask, np.ones(1), t)
    assert table.exposure[1] == 40
    assert table.attack_probabilities(np.ones(1))[1, 0] == 1.0
    assert table.estimates[1, 0] == pytest.approx(-0.3)
    assert not table.estimates[[0, 2]].any()


def test_maxmin_zero_rewards_stay_zero():
    mask = np.ones((2, 3), dtype=bool)
    table = VulnEstimateTable.zeros(3, 2)
    g = rng(0)
    for t in range(1, 60):
        fpl_maxmin_update(table, int(g.integers(2)), int(g.integers(3)), 0.0, int(g.integers(2)),
                          mask, np.array([0.5, 0.5]), t)
    assert not table.estimates.any()


def test_maxmin_retroactive_weighting():
    # two attacks on v0, one on v1, all by the single type; v0 exposed 3 rounds
    mask = np.array([[1, 1]], dtype=bool)
    table = VulnEstimateTable.zeros(2, 1)
    fpl_maxmin_update(table, 0, 0, -0.6, 0, mask, np.ones(1), 1)
    first = table.estimates[0, 0]
    fpl_maxmin_update(table, 0, 1, -0.3, 0, mask, np.ones(1), 2)
    fpl_maxmin_update(table, 0, 0, -0.6, 0, mask, np.ones(1), 3)
    # p(v0) = 2/3, exposure 3: (-1.2) / (3 * 2/3)
    assert first == pytest.approx(-0.6)
    assert table.estimates[0, 0] == pytest.approx(-1.2 / 2)
    assert table.estimates[1, 0] == pytest.approx(-0.3 / 1)


def test_maxmin_needs_prior_knowledge():
    with pytest.raises(ValueError):
        FplMaxMin(_view(), rng())


def test_maxmin_state_round_trip():
    view = DefenderView(2, np.zeros((2, 2)), 50, vuln_mask=EX_MASK, type_distribution=np.array([0.5, 0.5]))
    d = FplMaxMin(view, rng(0))
    for t in range(1, 20):
        c = d.select()
        d.update(RevealedFeedback(t, -0.1, 0.0, True, attacker_type=t % 2, exploit=1))
    e = FplMaxMin(view, rng(0))
    e.load_state(d.to_state())
    np.testing.assert_array_equal(e.table.estimates, d.table.estimates)
    assert e.prev == d.prev == c
