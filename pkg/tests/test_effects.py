import numpy as np
import pytest

from gatelab.analytic import perturbation_limit, spectral_decomposition
from gatelab.effects import (
    EffectsError,
    adversarial_total_effect,
    cosine_report,
    loss_expansion,
    measure_effect,
    measured_effect,
    oscillation_probe,
    predicted_effect,
    spearman,
    vanilla_effect,
    weight_gradient_shift,
)
from gatelab.heads import Quadratic, SigmoidBCE, SoftmaxCE
from gatelab.network import NetworkSpec, ReluNetwork, forward, margin_gradients


def make_net(dims, skips=(), seed=0):
    return ReluNetwork.initialize(NetworkSpec(tuple(dims), tuple(skips), seed=seed))


def one_layer_sigmoid(weights, bias=0.0):
    spec = NetworkSpec((len(weights), 1))
    return ReluNetwork(spec, [np.asarray(weights, dtype=np.float64)[:, None]], [np.array([bias])])


# ---------------------------------------------------------------------------
# weight gradient shift
# ---------------------------------------------------------------------------

def test_zero_delta_zero_shift():
    net = make_net([5, 8, 1], seed=1)
    x = np.random.default_rng(0).random(5)
    pair = weight_gradient_shift(net, SigmoidBCE(label=1), x, np.zeros(5), layer_j=1, eta=0.01)
    np.testing.assert_array_equal(pair.delta_g_w, np.zeros_like(pair.delta_g_w))


def test_shift_is_exact_difference():
    net = make_net([5, 8, 1], seed=2)
    rng = np.random.default_rng(1)
    x, delta = rng.random(5), rng.standard_normal(5) * 0.1
    pair = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, layer_j=1, eta=0.01)
    np.testing.assert_array_equal(pair.delta_g_w, pair.g_w_adv - pair.g_w)


def test_one_layer_expansion_matches_measurement():
    # single linear layer + sigmoid: the only expansion error is the loss
    # third derivative along the margin, cubic in the perturbation
    net = one_layer_sigmoid([0.8, -0.5, 0.3], bias=0.05)
    rng = np.random.default_rng(2)
    x = rng.random(3)
    delta = rng.standard_normal(3) * 1e-5
    pair = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, layer_j=1, eta=0.01)
    rel = np.linalg.norm(pair.delta_g_w - pair.expansion) / np.linalg.norm(pair.delta_g_w)
    assert rel < 1e-6


def test_expansion_residual_scaling():
    # leading residual term is x * O(||dh||^2): halving delta divides it by
    # about four
    net = make_net([6, 10, 10, 1], seed=3)
    rng = np.random.default_rng(3)
    x = rng.random(6)
    direction = rng.standard_normal(6)
    direction /= np.linalg.norm(direction)

    def residual(scale):
        pair = weight_gradient_shift(net, SigmoidBCE(label=1), x, scale * direction, 1, eta=0.01)
        return np.linalg.norm(pair.delta_g_w - pair.expansion)

    r1, r2 = residual(2e-3), residual(1e-3)
    assert r1 / r2 >= 3.5


def test_quadratic_head_expansion_exact():
    net = make_net([5, 9, 2], seed=4)
    rng = np.random.default_rng(4)
    x, delta = rng.random(5), rng.standard_normal(5) * 0.2
    pair = weight_gradient_shift(net, Quadratic(np.zeros(2)), x, delta, 1, eta=0.01)
    scale = max(np.linalg.norm(pair.delta_g_w), 1e-30)
    assert np.linalg.norm(pair.delta_g_w - pair.expansion) / scale < 1e-12


def test_gate_mode_changes_attacked_side_only():
    net = make_net([6, 12, 1], seed=5)
    rng = np.random.default_rng(5)
    x = rng.random(6)
    delta = rng.standard_normal(6) * 2.0  # large enough to flip gates
    frozen = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, 1, eta=0.01, gate_mode="frozen")
    free = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, 1, eta=0.01, gate_mode="free")
    np.testing.assert_array_equal(frozen.g_w, free.g_w)
    assert np.linalg.norm(frozen.g_w_adv - free.g_w_adv) > 0.0


# ---------------------------------------------------------------------------
# scalar effects
# ---------------------------------------------------------------------------

def test_measured_effect_trivials():
    net = make_net([5, 8, 1], seed=6)
    x = np.random.default_rng(6).random(5)
    gates = forward(net, x).gates
    trace = forward(net, x, frozen=gates)
    gtx, gth = margin_gradients(net, trace, SigmoidBCE(label=1), 1)
    pair0 = weight_gradient_shift(net, SigmoidBCE(label=1), x, np.zeros(5), 1, eta=0.01)
    assert measured_effect(pair0, gtx, gth) == 0.0
    delta = np.random.default_rng(7).standard_normal(5) * 0.1
    p1 = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, 1, eta=0.01)
    p2 = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, 1, eta=0.02)
    assert measured_effect(p2, gtx, gth) == pytest.approx(2 * measured_effect(p1, gtx, gth), rel=1e-12)


def test_effect_decomposition_identity():
    # attacked-step projection minus the extra projection equals the clean
    # projection, sample by sample, by pure algebra
    net = make_net([6, 9, 9, 1], seed=7)
    rng = np.random.default_rng(8)
    for _ in range(10):
        x = rng.random(6)
        delta = rng.standard_normal(6) * 0.3
        gates = forward(net, x).gates
        trace = forward(net, x, frozen=gates)
        gtx, gth = margin_gradients(net, trace, SigmoidBCE(label=1), 2)
        pair = weight_gradient_shift(net, SigmoidBCE(label=1), x, delta, 2, eta=0.05, gate_mode="free")
        total = adversarial_total_effect(pair, gtx, gth)
        extra = measured_effect(pair, gtx, gth)
        base = vanilla_effect(pair, gtx, gth)
        assert total - extra == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_predicted_effect_limits_and_identity():
    rng = np.random.default_rng(9)
    for _ in range(50):
        t_ori = rng.standard_normal() * 0.1
        eta = rng.random() * 0.1 + 1e-3
        g_z = rng.standard_normal() * 0.5
        h_z = rng.random() * 0.3 + 1e-3
        gh = rng.random() * 3
        a = rng.random() * 2
        kw = dict(t_ori=t_ori, eta=eta, g_z=g_z, h_z=h_z, g_tilde_h_norm=gh)
        # no-attack limit
        assert predicted_effect("additional", amplification=0.0, **kw) == 0.0
        assert predicted_effect("adversarial", amplification=0.0, **kw) == pytest.approx(t_ori)
        # total minus additional is the clean projection, for any scalars
        diff = predicted_effect("adversarial", amplification=a, **kw) - predicted_effect(
            "additional", amplification=a, **kw
        )
        assert diff == pytest.approx(t_ori, rel=1e-12, abs=1e-15)
        # the curvature term never helps the current gradient
        second = predicted_effect("additional", amplification=a, **kw) - (np.exp(a) - 1.0) * t_ori
        assert second <= 1e-15


def test_predicted_effect_reference_value():
    # a = ln 2, eta = 0.1, g_z^2 = 0.25, h_z = 0.25, ||g_h||^2 = 4,
    # t_ori = -0.01: (2-1)(-0.01) - 0.1*0.25*4/0.25*(4-2) = -0.81
    val = predicted_effect(
        "additional",
        amplification=np.log(2.0),
        t_ori=-0.01,
        eta=0.1,
        g_z=0.5,
        h_z=0.25,
        g_tilde_h_norm=2.0,
    )
    assert val == pytest.approx(-0.81, rel=1e-12)


def test_predicted_effect_validation():
    with pytest.raises(EffectsError):
        predicted_effect("additional", amplification=1.0, t_ori=0.0, eta=0.1, g_z=0.1, h_z=0.0, g_tilde_h_norm=1.0)
    with pytest.raises(EffectsError):
        predicted_effect("nope", amplification=1.0, t_ori=0.0, eta=0.1, g_z=0.1, h_z=0.1, g_tilde_h_norm=1.0)
    with pytest.raises(EffectsError):
        predicted_effect("normalized", amplification=1.0, t_ori=0.0, eta=0.1, g_z=0.1, h_z=0.1, g_tilde_h_norm=1.0)


def test_measure_effect_exact_on_one_layer_sigmoid():
    # analytic perturbation + frozen gates on a single-layer margin model:
    # the measurement and the closed form agree to high accuracy near the
    # decision boundary (the cubic loss term vanishes at margin zero)
    net = one_layer_sigmoid([0.6, -0.4, 0.25], bias=0.0)
    rng = np.random.default_rng(10)
    x = rng.random(3)
    head = SigmoidBCE(label=1)
    z = forward(net, x).z[0]
    # shift the bias so the margin sits at zero
    net.biases[-1][0] -= z
    strength = 0.01
    dec = spectral_decomposition(net, head, x)
    delta = perturbation_limit(dec, strength).delta
    m = measure_effect(net, head, x, delta, layer_j=1, eta=0.01, strength=strength)
    assert m.phi_star == pytest.approx(m.phi_hat, rel=1e-6)


def test_measure_effect_quadratic_like_accuracy_deeper():
    # deeper net, still frozen gates and the analytic perturbation: the
    # relative gap stays tiny for modest strengths
    net = make_net([6, 12, 12, 1], seed=11)
    rng = np.random.default_rng(11)
    errors = []
    for _ in range(10):
        x = rng.random(6)
        head = SigmoidBCE(label=1)
        dec = spectral_decomposition(net, head, x)
        strength = 0.002 / max(dec.eigenvalues[0], 1e-6)
        delta = perturbation_limit(dec, strength).delta
        m = measure_effect(net, head, x, delta, layer_j=1, eta=0.01, strength=strength)
        errors.append(abs(m.phi_star - m.phi_hat) / abs(m.phi_star))
    assert np.median(errors) < 1e-3


# ---------------------------------------------------------------------------
# loss expansion
# ---------------------------------------------------------------------------

def test_loss_expansion_zero_delta():
    net = make_net([5, 8, 2], seed=12)
    x = np.random.default_rng(12).random(5)
    exp = loss_expansion(net, SoftmaxCE(true_class=0), x, np.zeros(5), layer_j=1)
    assert exp.first == 0.0 and exp.second == 0.0 and exp.residual == 0.0


def test_loss_expansion_quadratic_head_residual_machine_zero():
    net = make_net([5, 8, 2], seed=13)
    rng = np.random.default_rng(13)
    x, delta = rng.random(5), rng.standard_normal(5) * 0.5
    exp = loss_expansion(net, Quadratic(np.zeros(2)), x, delta, layer_j=1)
    assert abs(exp.residual) < 1e-10 * max(1.0, abs(exp.measured))


def test_loss_expansion_third_order_scaling():
    net = make_net([6, 10, 3], seed=14)
    rng = np.random.default_rng(14)
    x = rng.random(6)
    direction = rng.standard_normal(6)
    direction /= np.linalg.norm(direction)

    def res(scale):
        return abs(loss_expansion(net, SoftmaxCE(true_class=1), x, scale * direction, 1).residual)

    assert res(2e-2) / res(1e-2) >= 7.0


# ---------------------------------------------------------------------------
# oscillation probe
# ---------------------------------------------------------------------------

def test_probe_zero_delta_exactly_equal():
    net = make_net([5, 8, 2], seed=15)
    x = np.random.default_rng(15).random(5)
    probe = oscillation_probe(net, SoftmaxCE(true_class=0), x, np.zeros(5), probe_length=0.001)
    assert probe.delta_ori == probe.delta_adv
    assert not probe.skipped


def test_probe_flat_loss_is_zero():
    # saturated sigmoid: the weight gradient is constant to within round-off,
    # so a fixed-length weight step barely moves it
    net = one_layer_sigmoid([1.0, 1.0], bias=60.0)
    probe = oscillation_probe(net, SigmoidBCE(label=1), np.array([0.5, 0.5]), np.zeros(2), 0.001)
    assert probe.delta_ori <= 1e-12 and probe.delta_adv <= 1e-12


def test_probe_skips_on_zero_gradient():
    net = one_layer_sigmoid([1.0, 1.0])
    probe = oscillation_probe(net, SigmoidBCE(label=1), np.zeros(2), np.zeros(2), 0.001)
    assert probe.skipped


def test_probe_larger_curvature_larger_response():
    net = make_net([6, 10, 1], seed=16)
    rng = np.random.default_rng(16)
    x = rng.random(6)
    # attacked point near the boundary has larger curvature than a
    # confident clean point; compare probe magnitudes
    head = SigmoidBCE(label=1)
    dec = spectral_decomposition(net, head, x)
    delta = perturbation_limit(dec, 1.0 / max(dec.eigenvalues[0], 1e-9)).delta
    probe = oscillation_probe(net, head, x, delta, probe_length=0.001)
    assert np.isfinite(probe.delta_ori) and np.isfinite(probe.delta_adv)


# ---------------------------------------------------------------------------
# cosine report and rank correlation
# ---------------------------------------------------------------------------

def test_cosine_identical_samples():
    mat = np.ones((3, 2))
    rep = cosine_report([(mat, 0.1), (mat, 0.5), (mat, 0.9)], bins=3)
    np.testing.assert_allclose(rep.bin_mean_cosine, np.ones(3), atol=1e-12)
    np.testing.assert_array_equal(rep.bin_counts, [1, 1, 1])


def test_cosine_orthogonal_pair():
    a = np.zeros((2, 2)); a[0, 0] = 1.0
    b = np.zeros((2, 2)); b[1, 1] = 1.0
    rep = cosine_report([(a, 0.1), (b, 0.2)], bins=1)
    np.testing.assert_allclose(rep.cosines, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-12)


def test_cosine_excludes_zero_norm():
    a = np.ones((2, 2))
    rep = cosine_report([(a, 0.1), (np.zeros((2, 2)), 0.2), (a, 0.3)], bins=2)
    assert rep.n_excluded == 1
    assert rep.a_hats.size == 2


def test_cosine_needs_two_samples():
    with pytest.raises(EffectsError):
        cosine_report([(np.ones((2, 2)), 0.1)], bins=1)


def test_spearman_basics():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert spearman(x, x * 10) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    assert abs(spearman(x, np.array([1.0, -2.0, 3.0, -4.0]))) < 1.0
    # ties get average ranks
    assert spearman(np.array([1.0, 1.0, 2.0]), np.array([3.0, 3.0, 5.0])) == pytest.approx(1.0)
