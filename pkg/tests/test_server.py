import numpy as np
import pytest

from fedsim import params as pv
from fedsim.client import ClientUpdate
from fedsim.errors import DimensionMismatchError, DivergenceError
from fedsim.server import RULES, ServerDelta, ServerHyper, aggregate, init_state, server_step


def upd(cid, delta, n=1):
    return ClientUpdate(cid, pv.as_params(delta), n, n, 0.0, 0.0)


def delta_only(d):
    d = pv.as_params(d)
    return ServerDelta(d, 1, 1)


def test_uniform_aggregate_worked_example():
    agg = aggregate([upd(0, [1.0, 3.0]), upd(1, [3.0, 1.0])])
    assert agg.delta.tolist() == [2.0, 2.0]


def test_example_weighted_aggregate_worked_example():
    agg = aggregate([upd(0, [1.0, 1.0], n=1), upd(1, [4.0, 4.0], n=3)], "by_examples")
    assert agg.delta.tolist() == [3.25, 3.25]
    assert agg.total_examples == 4


def test_aggregate_is_order_independent():
    rng = np.random.default_rng(0)
    ups = [upd(i, rng.normal(size=6), n=i + 1) for i in range(7)]
    a = aggregate(ups, "by_examples")
    b = aggregate(list(reversed(ups)), "by_examples")
    assert np.array_equal(a.delta, b.delta)


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(DimensionMismatchError):
        aggregate([upd(0, [1.0]), upd(1, [1.0, 2.0])])


def test_fedavg_identical_clients_is_bitwise_fixed_point():
    rng = np.random.default_rng(3)
    x = pv.as_params(rng.normal(size=50))
    d = rng.normal(size=50)
    state = init_state("fedavg", x)
    for weighting in ("uniform", "by_examples"):
        agg = aggregate([upd(i, d, n=i + 2) for i in range(5)], weighting)
        new = server_step(state, agg).params
        assert np.array_equal(new, x - d)


def test_fedavg_opposite_clients_average_back():
    state = init_state("fedavg", pv.as_params([1.0, 1.0]))
    agg = aggregate([upd(0, [1.0, -1.0]), upd(1, [-1.0, 1.0])])
    assert server_step(state, agg).params.tolist() == [1.0, 1.0]


@pytest.mark.parametrize("rule", ["fedavg"])
def test_zero_delta_leaves_fedavg_unchanged(rule):
    x = pv.as_params([0.3, -1.7, 2.0])
    state = init_state(rule, x)
    agg = aggregate([upd(0, [0.0, 0.0, 0.0]), upd(1, [0.0, 0.0, 0.0])])
    for _ in range(5):
        state = server_step(state, agg)
    assert np.array_equal(state.params, x)


@pytest.mark.parametrize("rule", ["fedavgm", "fedadam", "fedyogi", "fedadagrad"])
def test_momentum_decays_geometrically_under_zero_deltas(rule):
    x = pv.as_params([0.5, -0.5])
    state = server_step(init_state(rule, x), delta_only([1.0, -2.0]))
    m1 = state.m.copy()
    for k in range(1, 6):
        state = server_step(state, delta_only([0.0, 0.0]))
        np.testing.assert_allclose(state.m, m1 * 0.9 ** k, rtol=1e-14)


def test_adagrad_walkthrough():
    hyper = ServerHyper(lr=0.1, beta1=0.9, tau=1e-3, v0=0.0)
    state = server_step(init_state("fedadagrad", pv.as_params([0.0]), hyper), delta_only([1.0]))
    assert state.m[0] == pytest.approx(0.1, abs=1e-15)
    assert state.v[0] == 1.0
    assert state.params[0] == pytest.approx(-0.1 * 0.1 / 1.001, rel=1e-14)


def test_adam_walkthrough():
    hyper = ServerHyper(lr=0.01, beta1=0.9, beta2=0.99, tau=1e-3)
    state = server_step(init_state("fedadam", pv.as_params([1.0]), hyper), delta_only([2.0]))
    m = 0.1 * 2.0
    v = 0.99 * 1e-6 + 0.01 * 4.0
    assert state.params[0] == pytest.approx(1.0 - 0.01 * m / (np.sqrt(v) + 1e-3), rel=1e-14)


def test_yogi_sign_branches():
    beta2 = 0.99
    hyper = ServerHyper(beta2=beta2, v0=4.0)
    # v == d^2: sign 0, v unchanged
    s = server_step(init_state("fedyogi", pv.as_params([0.0]), hyper), delta_only([2.0]))
    assert s.v[0] == 4.0
    # v > d^2: v shrinks by (1 - beta2) d^2
    s = server_step(init_state("fedyogi", pv.as_params([0.0]), hyper), delta_only([1.0]))
    assert s.v[0] == pytest.approx(4.0 - (1 - beta2) * 1.0)
    # v < d^2: v grows by (1 - beta2) d^2
    s = server_step(init_state("fedyogi", pv.as_params([0.0]), hyper), delta_only([3.0]))
    assert s.v[0] == pytest.approx(4.0 + (1 - beta2) * 9.0)


def test_adagrad_second_moment_non_decreasing():
    rng = np.random.default_rng(8)
    state = init_state("fedadagrad", pv.zeros(10))
    prev = state.v.copy()
    for _ in range(30):
        state = server_step(state, delta_only(rng.normal(size=10)))
        assert np.all(state.v >= prev)
        prev = state.v.copy()


@pytest.mark.parametrize("rule", ["fedavg", "fedavgm"])
def test_linear_rules_scale_covariant(rule):
    rng = np.random.default_rng(2)
    d = [rng.normal(size=8) for _ in range(4)]
    a = init_state(rule, pv.zeros(8))
    b = init_state(rule, pv.zeros(8))
    for di in d:
        a = server_step(a, delta_only(di))
        b = server_step(b, delta_only(4.0 * di))
    assert np.array_equal(b.params, 4.0 * a.params)


@pytest.mark.parametrize("rule", ["fedadagrad", "fedadam", "fedyogi"])
def test_adaptive_rules_scale_invariant_with_tau(rule):
    # scaling deltas by c, tau by c and v0 by c^2 leaves the trajectory unchanged
    rng = np.random.default_rng(4)
    d = [rng.normal(size=8) for _ in range(6)]
    a = init_state(rule, pv.zeros(8), ServerHyper(tau=1e-3))
    b = init_state(rule, pv.zeros(8), ServerHyper(tau=4e-3, v0=16e-6))
    for di in d:
        a = server_step(a, delta_only(di))
        b = server_step(b, delta_only(4.0 * di))
    np.testing.assert_allclose(b.params, a.params, rtol=1e-12, atol=1e-15)


def test_default_learning_rates():
    h = ServerHyper()
    assert h.resolved_lr("fedavg") == 1.0 and h.resolved_lr("fedavgm") == 1.0
    assert all(h.resolved_lr(r) == 0.01 for r in ("fedadagrad", "fedadam", "fedyogi"))
    assert init_state("fedadam", pv.zeros(3)).v.tolist() == [1e-6] * 3


def test_divergence_names_rule_and_round():
    state = init_state("fedavgm", pv.as_params([1.0]), ServerHyper(lr=1e308))
    state = server_step(state, delta_only([-1.0]))
    with pytest.raises(DivergenceError, match="fedavgm.*round 1"):
        server_step(state, delta_only([-1e308]))


def test_invalid_rule_and_hyper():
    with pytest.raises(ValueError):
        init_state("sgd", pv.zeros(2))
    with pytest.raises(ValueError):
        init_state("fedadam", pv.zeros(2), ServerHyper(beta2=1.0))
    with pytest.raises(ValueError):
        init_state("fedadam", pv.zeros(2), ServerHyper(tau=0.0))


def test_all_rules_reduce_a_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    for rule in RULES:
        state = init_state(rule, pv.zeros(3), ServerHyper(lr=0.3))
        start = np.linalg.norm(state.params - target)
        for _ in range(200):
            state = server_step(state, delta_only(state.params - target))
        assert np.linalg.norm(state.params - target) < 0.1 * start, rule
