"""Training effects of adversarial perturbations on the weight gradient.

The quantities here all live in the whole-map ("composite") view of a
chosen layer: the weight object is the affine map from the input to that
layer's preactivation, whose loss gradient is the rank-one matrix
``x g_h^T``.  An adversarial example shifts that gradient by
``delta_g_w = g_w_adv - g_w``; projecting the shift between the margin
gradients at the input and at the layer gives the scalar effect

    phi_star = -eta * g_tilde_x^T delta_g_w g_tilde_h

whose closed-form prediction under the frozen-gate rank-one curvature
model is implemented by :func:`predicted_effect`.  The amplification
exponent is ``a = strength * h_z * ||g_tilde_x||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import LossHead, is_scalar_head, loss_eval
from .network import (
    ReluNetwork,
    forward,
    grad_weights,
    grad_weights_composite,
    linearize,
    margin_gradients,
)


class EffectsError(ValueError):
    """Invalid inputs for an effect measurement."""


@dataclass(frozen=True)
class WeightGradientPair:
    """Clean and attacked composite weight gradients and their difference.

    ``expansion`` is the second-order model
    ``x (H_h dh)^T + delta (g_h + H_h dh)^T`` evaluated with the clean-input
    curvature; for a quadratic head under frozen gates it matches
    ``delta_g_w`` to round-off.
    """

    g_w: np.ndarray
    g_w_adv: np.ndarray
    delta_g_w: np.ndarray
    delta: np.ndarray
    eta: float
    layer_index: int
    gate_mode: str
    expansion: np.ndarray
    g_h: np.ndarray
    g_h_adv: np.ndarray


def weight_gradient_shift(
    net: ReluNetwork,
    head: LossHead,
    x,
    delta,
    layer_j: int,
    eta: float,
    gate_mode: str = "frozen",
) -> WeightGradientPair:
    """Measure g_w, g_w_adv, and their difference in the composite view.

    ``gate_mode="frozen"`` evaluates the attacked point under the gates
    recorded at ``x`` (the idealized setting); ``"free"`` lets the attacked
    point use its own gates, which is what a real network does.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise EffectsError("perturbation contains non-finite entries")
    if gate_mode not in ("frozen", "free"):
        raise EffectsError(f"gate_mode must be 'frozen' or 'free', got {gate_mode!r}")

    gates_x = forward(net, x).gates
    trace_x = forward(net, x, frozen=gates_x)
    if gate_mode == "frozen":
        trace_adv = forward(net, x + delta, frozen=gates_x)
    else:
        own_gates = forward(net, x + delta).gates
        trace_adv = forward(net, x + delta, frozen=own_gates)

    comp = grad_weights_composite(net, trace_x, head, layer_j)
    comp_adv = grad_weights_composite(net, trace_adv, head, layer_j)
    g_w = comp.matrix
    g_w_adv = np.outer(x + delta, comp_adv.g_h)
    delta_g_w = g_w_adv - g_w

    # second-order model around x (frozen-gate curvature)
    lin = linearize(net, gates_x, layer_j)
    dh = lin.composite_w.T @ delta
    h_h = _layer_curvature(net, trace_x, head, layer_j)
    hdh = h_h @ dh
    expansion = np.outer(x, hdh) + np.outer(delta, comp.g_h + hdh)

    return WeightGradientPair(
        g_w=g_w,
        g_w_adv=g_w_adv,
        delta_g_w=delta_g_w,
        delta=delta,
        eta=float(eta),
        layer_index=layer_j,
        gate_mode=gate_mode,
        expansion=expansion,
        g_h=comp.g_h,
        g_h_adv=comp_adv.g_h,
    )


def _layer_jacobian(net: ReluNetwork, trace, layer_j: int) -> np.ndarray:
    """d(logits)/d(layer-j preactivation) under the trace's gates, (c, D)."""
    from .network import _backward

    c = net.output_dim
    rows = []
    for i in range(c):
        e = np.zeros(c)
        e[i] = 1.0
        _, _, pre_grads = _backward(net, trace, e)
        rows.append(e.copy() if layer_j == net.num_layers else pre_grads[layer_j - 1])
    return np.stack(rows)


def _layer_curvature(net: ReluNetwork, trace, head: LossHead, layer_j: int) -> np.ndarray:
    """Loss curvature at the layer-j preactivation under frozen gates."""
    ev = loss_eval(head, trace.z)
    jac_h = _layer_jacobian(net, trace, layer_j)
    return jac_h.T @ ev.h_z_matrix() @ jac_h


def measured_effect(pair: WeightGradientPair, g_tilde_x: np.ndarray, g_tilde_h: np.ndarray) -> float:
    """phi_star = -eta * g_tilde_x^T delta_g_w g_tilde_h."""
    if pair.delta_g_w.shape != (g_tilde_x.size, g_tilde_h.size):
        raise EffectsError(
            f"shape mismatch: delta_g_w {pair.delta_g_w.shape} vs projections "
            f"({g_tilde_x.size}, {g_tilde_h.size})"
        )
    return float(-pair.eta * g_tilde_x @ pair.delta_g_w @ g_tilde_h)


def vanilla_effect(pair: WeightGradientPair, g_tilde_x: np.ndarray, g_tilde_h: np.ndarray) -> float:
    """t_ori = -eta * g_tilde_x^T g_w g_tilde_h, the clean-step projection."""
    return float(-pair.eta * g_tilde_x @ pair.g_w @ g_tilde_h)


def adversarial_total_effect(pair: WeightGradientPair, g_tilde_x: np.ndarray, g_tilde_h: np.ndarray) -> float:
    """-eta * g_tilde_x^T g_w_adv g_tilde_h, the attacked-step projection."""
    return float(-pair.eta * g_tilde_x @ pair.g_w_adv @ g_tilde_h)


EFFECT_KINDS = ("additional", "adversarial", "normalized")


def predicted_effect(
    kind: str,
    *,
    amplification: float,
    t_ori: float,
    eta: float,
    g_z: float,
    h_z: float,
    g_tilde_h_norm: float,
    length: float | None = None,
    delta_norm: float | None = None,
) -> float:
    """Closed-form effect prediction for one sample.

    ``additional``: the extra effect of training on the attacked input over
    the clean step.  ``adversarial``: the attacked step's total effect.
    ``normalized``: the extra effect when the perturbation is rescaled to a
    fixed ``length`` (requires the unnormalized perturbation's norm).
    ``amplification`` is a = strength * h_z * ||g_tilde_x||^2.
    """
    if kind not in EFFECT_KINDS:
        raise EffectsError(f"kind must be one of {EFFECT_KINDS}, got {kind!r}")
    if not h_z > 0.0:
        raise EffectsError(f"logit curvature must be positive, got {h_z}")
    e_a = np.exp(amplification)
    curvature_term = (eta * g_z * g_z * g_tilde_h_norm * g_tilde_h_norm) / h_z
    if kind == "additional":
        return float((e_a - 1.0) * t_ori - curvature_term * (e_a * e_a - e_a))
    if kind == "adversarial":
        return float(e_a * t_ori - curvature_term * (e_a * e_a - e_a))
    if length is None or delta_norm is None:
        raise EffectsError("normalized prediction needs length and delta_norm")
    if not delta_norm > 0.0:
        raise EffectsError(f"delta_norm must be positive, got {delta_norm}")
    u = (e_a - 1.0) / delta_norm
    return float(length * u * t_ori - length * curvature_term * (u + length * u * u))


@dataclass(frozen=True)
class EffectMeasurement:
    """Measured effect, its prediction, and every scalar entering either."""

    phi_star: float
    phi_hat: float
    variant: str
    amplification: float
    a_hat: float | None
    h_z: float
    g_z: float
    g_tilde_x_norm: float
    g_tilde_h_norm: float
    delta_norm: float
    length: float | None
    eta: float
    t_ori: float
    delta_g_w_norm: float


def measure_effect(
    net: ReluNetwork,
    head: LossHead,
    x,
    delta,
    layer_j: int,
    eta: float,
    strength: float,
    variant: str = "additional",
    gate_mode: str = "frozen",
    length: float | None = None,
    analytic_delta_norm: float | None = None,
    a_hat: float | None = None,
) -> EffectMeasurement:
    """Full per-sample pipeline: measure phi_star and predict phi_hat.

    All theory-side scalars (margin gradients, curvature, amplification)
    are taken at the clean input; only the attacked weight gradient sees
    ``delta``.  Requires a scalar-margin head.
    """
    if not is_scalar_head(head):
        raise EffectsError("effect measurement needs a scalar-margin head (sigmoid or reduced)")
    x = np.asarray(x, dtype=np.float64)
    gates_x = forward(net, x).gates
    trace_x = forward(net, x, frozen=gates_x)
    ev = loss_eval(head, trace_x.z)
    g_tilde_x, g_tilde_h = margin_gradients(net, trace_x, head, layer_j)
    pair = weight_gradient_shift(net, head, x, delta, layer_j, eta, gate_mode=gate_mode)
    t_ori = vanilla_effect(pair, g_tilde_x, g_tilde_h)
    phi_star = measured_effect(pair, g_tilde_x, g_tilde_h)
    gx_norm = float(np.linalg.norm(g_tilde_x))
    gh_norm = float(np.linalg.norm(g_tilde_h))
    amplification = strength * float(ev.h_z) * gx_norm * gx_norm
    delta_norm = float(np.linalg.norm(pair.delta))
    phi_hat = predicted_effect(
        variant,
        amplification=amplification,
        t_ori=t_ori,
        eta=eta,
        g_z=float(ev.g_z),
        h_z=float(ev.h_z),
        g_tilde_h_norm=gh_norm,
        length=length,
        delta_norm=analytic_delta_norm if analytic_delta_norm is not None else delta_norm,
    )
    return EffectMeasurement(
        phi_star=phi_star,
        phi_hat=phi_hat,
        variant=variant,
        amplification=amplification,
        a_hat=a_hat,
        h_z=float(ev.h_z),
        g_z=float(ev.g_z),
        g_tilde_x_norm=gx_norm,
        g_tilde_h_norm=gh_norm,
        delta_norm=delta_norm,
        length=length,
        eta=eta,
        t_ori=t_ori,
        delta_g_w_norm=float(np.linalg.norm(pair.delta_g_w)),
    )


@dataclass(frozen=True)
class LossExpansion:
    """Second-order expansion of the loss in the layer feature change."""

    zeroth: float
    first: float
    second: float
    residual: float
    measured: float
    dh_norm: float


def loss_expansion(net: ReluNetwork, head: LossHead, x, delta, layer_j: int) -> LossExpansion:
    """Decompose the frozen-gate loss at ``x + delta`` around ``x``.

    The feature change is ``dh = composite_w^T delta``; the residual is
    whatever the constant, linear, and quadratic terms leave unexplained
    (third order in ``dh`` for smooth heads, round-off for quadratic ones).
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    gates = forward(net, x).gates
    trace_x = forward(net, x, frozen=gates)
    trace_adv = forward(net, x + delta, frozen=gates)
    ev = loss_eval(head, trace_x.z)
    measured = loss_eval(head, trace_adv.z).loss
    if not np.isfinite(measured):
        raise EffectsError("loss at the attacked point is not finite")

    lin = linearize(net, gates, layer_j)
    dh = lin.composite_w.T @ delta
    comp = grad_weights_composite(net, trace_x, head, layer_j)
    h_h = _layer_curvature(net, trace_x, head, layer_j)
    zeroth = float(ev.loss)
    first = float(comp.g_h @ dh)
    second = float(0.5 * dh @ h_h @ dh)
    return LossExpansion(
        zeroth=zeroth,
        first=first,
        second=second,
        residual=measured - zeroth - first - second,
        measured=measured,
        dh_norm=float(np.linalg.norm(dh)),
    )


@dataclass(frozen=True)
class OscillationProbe:
    """Gradient change per unit weight step, clean versus attacked input."""

    delta_ori: float
    delta_adv: float
    probe_length: float
    layer_index: int
    skipped: bool = False


def oscillation_probe(
    net: ReluNetwork, head: LossHead, x, delta, probe_length: float = 0.001, layer_j: int = 1
) -> OscillationProbe:
    """Step the layer's weight along its own normalized negative gradient by
    ``probe_length`` and measure how much the gradient moves.

    The clean probe uses the gradient at ``x``, the adversarial probe the
    gradient at ``x + delta``; each is normalized by the layer's row count
    and the probe length.  A zero weight gradient skips the probe.
    """
    if not probe_length > 0.0:
        raise EffectsError(f"probe length must be positive, got {probe_length}")
    if not 1 <= layer_j <= net.num_layers:
        raise EffectsError(f"layer index {layer_j} out of range 1..{net.num_layers}")
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    d_rows = net.weights[layer_j - 1].shape[0]

    def grad_at(point: np.ndarray, network: ReluNetwork) -> np.ndarray:
        trace = forward(network, point)
        return grad_weights(network, trace, head)[layer_j - 1][0]

    def probe(point: np.ndarray) -> float | None:
        g = grad_at(point, net)
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            return None
        shifted = net.copy()
        shifted.weights[layer_j - 1] = shifted.weights[layer_j - 1] - probe_length * g / norm
        g_shifted = grad_at(point, shifted)
        return float(np.linalg.norm(g_shifted - g)) / (d_rows * probe_length)

    ori = probe(x)
    adv = probe(x + delta)
    if ori is None or adv is None:
        return OscillationProbe(np.nan, np.nan, probe_length, layer_j, skipped=True)
    return OscillationProbe(ori, adv, probe_length, layer_j)


@dataclass(frozen=True)
class CosineReport:
    """Per-sample alignment with the mean gradient shift, bucketed by the
    amplification estimate into equal-population bins."""

    a_hats: np.ndarray
    cosines: np.ndarray
    bin_edges: np.ndarray
    bin_mid_a_hat: np.ndarray
    bin_mean_cosine: np.ndarray
    bin_counts: np.ndarray
    n_excluded: int


def cosine_report(samples, bins: int = 10) -> CosineReport:
    """samples: iterable of (delta_g_w matrix, a_hat).  Cosines are taken
    against the mean shift over all usable samples."""
    mats, a_hats = [], []
    excluded = 0
    for mat, a_hat in samples:
        mat = np.asarray(mat, dtype=np.float64)
        if np.linalg.norm(mat) == 0.0:
            excluded += 1
            continue
        mats.append(mat.ravel())
        a_hats.append(float(a_hat))
    if len(mats) < 2:
        raise EffectsError("cosine report needs at least two usable samples")
    if bins < 1:
        raise EffectsError("need at least one bin")
    mats = np.stack(mats)
    a_hats = np.asarray(a_hats)
    mean = mats.mean(axis=0)
    mean_norm = np.linalg.norm(mean)
    if mean_norm == 0.0:
        raise EffectsError("mean gradient shift is zero; cosines undefined")
    cosines = mats @ mean / (np.linalg.norm(mats, axis=1) * mean_norm)

    order = np.argsort(a_hats, kind="stable")
    groups = np.array_split(order, min(bins, order.size))
    mids, means, counts, edges = [], [], [], [float(a_hats[order[0]])]
    for grp in groups:
        mids.append(float(np.median(a_hats[grp])))
        means.append(float(np.mean(cosines[grp])))
        counts.append(int(grp.size))
        edges.append(float(a_hats[grp[-1]]))
    return CosineReport(
        a_hats=a_hats,
        cosines=cosines,
        bin_edges=np.asarray(edges),
        bin_mid_a_hat=np.asarray(mids),
        bin_mean_cosine=np.asarray(means),
        bin_counts=np.asarray(counts, dtype=np.intp),
        n_excluded=excluded,
    )


def spearman(a, b) -> float:
    """Rank correlation (average ranks on ties)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size or a.size < 2:
        raise EffectsError("spearman needs two equal-length vectors of size >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0.0:
        return 0.0
    return float(ra @ rb / denom)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks
