import numpy as np
import pytest

from gatelab.attack import (
    AttackConfig,
    AttackError,
    GradientRule,
    HeadBatch,
    amplification_estimate,
    batch_attack,
    run_attack,
)
from gatelab.heads import Quadratic, SigmoidBCE, SoftmaxCE
from gatelab.network import NetworkSpec, ReluNetwork, forward, linearize


def make_net(dims, skips=(), seed=0):
    return ReluNetwork.initialize(NetworkSpec(tuple(dims), tuple(skips), seed=seed))


def rank1_quadratic_net():
    # 2 -> 1 linear map picking the first coordinate: curvature e1 e1^T
    spec = NetworkSpec((2, 1))
    net = ReluNetwork(spec, [np.array([[1.0], [0.0]])], [np.zeros(1)])
    return net


def test_zero_steps_gives_empty_trajectory():
    net = make_net([3, 5, 2], seed=1)
    cfg = AttackConfig(step_size=0.1, steps=0)
    traj = run_attack(net, SoftmaxCE(true_class=0), np.zeros(3), cfg)
    assert traj.steps == 0
    np.testing.assert_array_equal(traj.final_delta, np.zeros(3))
    assert traj.recorded_steps == []


def test_two_step_quadratic_unrolled():
    # rank-one curvature with unit eigenvalue, gradient equal to the
    # eigenvector: two raw steps of 0.1 accumulate the 0.21 coefficient
    net = rank1_quadratic_net()
    x = np.array([2.0, 0.3])  # z = 2.0
    head = Quadratic(np.array([1.0]))  # g_z = z - 1 = 1 at x
    cfg = AttackConfig(step_size=0.1, steps=2, freeze_gates=True)
    traj = run_attack(net, head, x, cfg)
    np.testing.assert_allclose(traj.final_delta, [0.21, 0.0], atol=1e-12)


def test_sign_rule_step_values():
    net = make_net([4, 6, 2], seed=2)
    cfg = AttackConfig(step_size=0.05, steps=3, rule=GradientRule.SIGN_LINF, record_every=1)
    traj = run_attack(net, SoftmaxCE(true_class=1), np.random.default_rng(0).random(4), cfg)
    for upd in traj.updates:
        assert set(np.round(np.abs(upd) / 0.05, 12)).issubset({0.0, 1.0})


def test_l2_rule_unit_step_norm():
    net = make_net([4, 6, 2], seed=3)
    cfg = AttackConfig(step_size=0.07, steps=5, rule=GradientRule.L2_NORMALIZED, record_every=1)
    traj = run_attack(net, SoftmaxCE(true_class=0), np.random.default_rng(1).random(4) + 0.2, cfg)
    for upd in traj.updates:
        assert np.linalg.norm(upd) == pytest.approx(0.07, rel=1e-12)


def test_updates_telescope_to_delta():
    net = make_net([5, 8, 3], seed=4)
    cfg = AttackConfig(step_size=0.02, steps=17, record_every=5)
    traj = run_attack(net, SoftmaxCE(true_class=2), np.random.default_rng(2).random(5), cfg)
    np.testing.assert_allclose(np.sum(traj.updates, axis=0), traj.final_delta, atol=1e-12)
    np.testing.assert_allclose(traj.deltas[-1], traj.final_delta, atol=0)
    assert traj.recorded_steps[-1] == 17


def test_step_recursion_on_quadratic_surrogate():
    # frozen gates + quadratic head: the t-th update must equal
    # step_size * (I + step_size * H)^(t-1) g for the curvature H at x
    net = make_net([6, 10, 4], seed=5)
    rng = np.random.default_rng(3)
    x = rng.random(6)
    head = Quadratic(rng.standard_normal(4))
    gates = forward(net, x).gates
    lin = linearize(net, gates)
    jac = lin.effective_weight
    h = jac.T @ jac  # quadratic head curvature through the frozen map
    from gatelab.heads import loss_eval
    from gatelab.network import _backward

    trace = forward(net, x, frozen=gates)
    g0, _, _ = _backward(net, trace, loss_eval(head, trace.z).g_z_vector())

    alpha = 0.05
    cfg = AttackConfig(step_size=alpha, steps=20, freeze_gates=True, record_every=1)
    traj = run_attack(net, head, x, cfg)
    power = np.eye(6)
    for t in range(1, 21):
        expected = alpha * power @ g0
        got = traj.updates[t - 1]
        assert np.linalg.norm(got - expected) <= 1e-8 * max(np.linalg.norm(expected), 1e-12)
        power = power @ (np.eye(6) + alpha * h)


def test_projection_linf_and_l2():
    net = make_net([4, 8, 2], seed=6)
    x = np.random.default_rng(4).random(4)
    cfg = AttackConfig(step_size=0.5, steps=12, epsilon=0.3, norm_p=np.inf, project=True)
    traj = run_attack(net, SoftmaxCE(true_class=0), x, cfg)
    assert np.max(np.abs(traj.final_delta)) <= 0.3 + 1e-15
    cfg2 = AttackConfig(step_size=0.5, steps=12, epsilon=0.3, norm_p=2, project=True)
    traj2 = run_attack(net, SoftmaxCE(true_class=0), x, cfg2)
    assert np.linalg.norm(traj2.final_delta) <= 0.3 + 1e-12


def test_config_validation():
    with pytest.raises(AttackError):
        AttackConfig(step_size=0.0, steps=5)
    with pytest.raises(AttackError):
        AttackConfig(step_size=0.1, steps=-1)
    with pytest.raises(AttackError):
        AttackConfig(step_size=0.1, steps=5, project=True)  # missing epsilon
    with pytest.raises(AttackError):
        AttackConfig(step_size=0.1, steps=5, project=True, epsilon=0.1, norm_p=3)


def test_amplification_on_constant_curvature_path():
    # frozen single-layer quadratic model: h_z = 1 and the margin gradient
    # are constant, so the sum collapses to steps * alpha * ||g_tilde||^2
    net = rank1_quadratic_net()
    x = np.array([1.5, -0.4])
    head = SigmoidBCE(label=1)
    cfg = AttackConfig(step_size=0.01, steps=7, freeze_gates=True)
    traj = run_attack(net, head, x, cfg)
    # h_z varies along the path for the sigmoid; check against the recorded sum
    expected = 0.01 * np.sum(traj.h_z * traj.g_tilde_norms**2)
    assert amplification_estimate(traj) == pytest.approx(expected, rel=1e-12)
    assert amplification_estimate(traj) > 0.0
    # g_tilde is the fixed linear map here
    np.testing.assert_allclose(traj.g_tilde_norms, np.ones(7), atol=1e-12)


def test_amplification_empty_and_missing():
    net = rank1_quadratic_net()
    traj = run_attack(net, SigmoidBCE(label=1), np.array([1.0, 0.0]), AttackConfig(step_size=0.1, steps=0))
    assert amplification_estimate(traj) == 0.0
    traj2 = run_attack(net, Quadratic(np.array([0.0])), np.array([1.0, 0.0]), AttackConfig(step_size=0.1, steps=2))
    with pytest.raises(AttackError, match="missing"):
        amplification_estimate(traj2)


def test_success_step_sigmoid():
    net = rank1_quadratic_net()
    x = np.array([0.2, 0.0])  # small positive margin, label +1: attack pushes it down
    cfg = AttackConfig(step_size=0.1, steps=50, freeze_gates=True)
    traj = run_attack(net, SigmoidBCE(label=1), x, cfg)
    assert traj.m_success is not None
    assert traj.delta_norms[traj.m_success - 1] > 0.19  # margin had to travel past 0.2


def test_frozen_vs_free_gates_differ_after_crossing():
    net = make_net([4, 12, 12, 2], seed=9)
    x = np.random.default_rng(5).random(4)
    cfg_free = AttackConfig(step_size=0.3, steps=30)
    cfg_frozen = AttackConfig(step_size=0.3, steps=30, freeze_gates=True)
    d_free = run_attack(net, SoftmaxCE(true_class=0), x, cfg_free).final_delta
    d_frozen = run_attack(net, SoftmaxCE(true_class=0), x, cfg_frozen).final_delta
    assert np.linalg.norm(d_free - d_frozen) > 1e-6


def test_batch_attack_matches_single():
    net = make_net([6, 10, 3], seed=11)
    rng = np.random.default_rng(6)
    xs = rng.random((5, 6))
    heads = [SoftmaxCE(true_class=int(i % 3)) for i in range(5)]
    for freeze in (False, True):
        cfg = AttackConfig(step_size=0.05, steps=25, freeze_gates=freeze)
        res = batch_attack(net, heads, xs, cfg)
        for i in range(5):
            traj = run_attack(net, heads[i], xs[i], cfg)
            np.testing.assert_allclose(res.deltas[i], traj.final_delta, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(res.delta_norms[i], traj.delta_norms, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(res.grad_norms[i], traj.grad_norms, rtol=1e-9, atol=1e-12)
            got = res.success_step[i]
            assert (traj.m_success if traj.m_success is not None else -1) == got


def test_batch_attack_sigmoid_stats_match_single():
    net = make_net([6, 10, 1], seed=12)
    rng = np.random.default_rng(7)
    xs = rng.random((4, 6))
    heads = [SigmoidBCE(label=1 if i % 2 == 0 else -1) for i in range(4)]
    cfg = AttackConfig(step_size=0.05, steps=15)
    res = batch_attack(net, heads, xs, cfg)
    for i in range(4):
        traj = run_attack(net, heads[i], xs[i], cfg)
        np.testing.assert_allclose(res.h_z[i], traj.h_z, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(res.g_tilde_norms[i], traj.g_tilde_norms, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(
            res.a_hat(cfg.step_size)[i], amplification_estimate(traj), rtol=1e-9
        )


def test_batch_attack_projection_matches_single():
    net = make_net([5, 9, 2], seed=13)
    rng = np.random.default_rng(8)
    xs = rng.random((3, 5))
    heads = [SoftmaxCE(true_class=0)] * 3
    cfg = AttackConfig(
        step_size=0.2, steps=10, rule=GradientRule.SIGN_LINF, epsilon=0.25, norm_p=np.inf, project=True
    )
    res = batch_attack(net, heads, xs, cfg, with_stats=False)
    for i in range(3):
        traj = run_attack(net, heads[i], xs[i], cfg)
        np.testing.assert_allclose(res.deltas[i], traj.final_delta, rtol=1e-10, atol=1e-12)


def test_head_batch_rejects_mixed_kinds():
    with pytest.raises(AttackError):
        HeadBatch.from_heads([SigmoidBCE(label=1), SoftmaxCE(true_class=0)], 1)
