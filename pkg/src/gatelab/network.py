"""Fully-connected ReLU networks with explicit, freezable gating states.

Every ReLU is modelled as a binary gate on its preactivation.  Recording
the gates at one input and replaying them elsewhere turns the network into
an exact affine map, which is what the whole analytic machinery runs on:
:func:`linearize` produces that affine map both to the logits and to any
intermediate layer's preactivation.

Weights are stored as (fan_in, fan_out) matrices so a forward step is
``a @ W + b`` for a single sample or a batch alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import LossHead, is_scalar_head, logit_selector, loss_eval


class NetworkError(ValueError):
    """Shape or gate-state mismatch."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: layer widths, per-hidden-block skip flags, init seed."""

    layer_dims: tuple[int, ...]
    skip_connections: tuple[bool, ...] = ()
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise NetworkError(f"need at least input and output dims >= 1, got {dims}")
        skips = tuple(bool(s) for s in self.skip_connections)
        if not skips:
            skips = (False,) * (len(dims) - 2)
        if len(skips) != len(dims) - 2:
            raise NetworkError(
                f"{len(dims) - 2} hidden blocks but {len(skips)} skip flags"
            )
        for k, s in enumerate(skips):
            if s and dims[k] != dims[k + 1]:
                raise NetworkError(
                    f"skip connection on block {k} needs equal widths, got {dims[k]} -> {dims[k + 1]}"
                )
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "skip_connections", skips)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


class ReluNetwork:
    """Weights and biases for a :class:`NetworkSpec`; immutable in use.

    Only the trainer writes to ``weights``/``biases``, and it does so on a
    private copy.  Everything else treats instances as read-only, so traces
    and linearizations stay valid for as long as the caller keeps them.
    """

    def __init__(self, spec: NetworkSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        dims = spec.layer_dims
        if len(self.weights) != spec.num_layers or len(self.biases) != spec.num_layers:
            raise NetworkError("one weight matrix and bias vector per layer required")
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[j], dims[j + 1]) or b.shape != (dims[j + 1],):
                raise NetworkError(
                    f"layer {j}: expected weight {(dims[j], dims[j + 1])} and bias ({dims[j + 1]},), "
                    f"got {w.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetworkError(f"layer {j} has non-finite parameters")

    @classmethod
    def initialize(cls, spec: NetworkSpec) -> "ReluNetwork":
        """He-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases."""
        rng = np.random.default_rng(spec.seed)
        weights, biases = [], []
        dims = spec.layer_dims
        for j in range(spec.num_layers):
            std = np.sqrt(2.0 / dims[j])
            weights.append(rng.normal(0.0, std, size=(dims[j], dims[j + 1])))
            biases.append(np.zeros(dims[j + 1]))
        return cls(spec, weights, biases)

    def copy(self) -> "ReluNetwork":
        return ReluNetwork(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    @property
    def num_layers(self) -> int:
        return self.spec.num_layers


@dataclass(frozen=True)
class GateState:
    """Binary gate mask per hidden layer (1 = pass, 0 = blocked)."""

    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        for k, m in enumerate(self.masks):
            m = np.asarray(m, dtype=np.float64)
            if m.ndim != 1:
                raise NetworkError(f"gate mask {k} must be a vector")
            if not np.all((m == 0.0) | (m == 1.0)):
                raise NetworkError(f"gate mask {k} has entries outside {{0, 1}}")
        object.__setattr__(self, "masks", tuple(np.asarray(m, dtype=np.float64) for m in self.masks))

    def check_against(self, net: ReluNetwork) -> None:
        widths = net.spec.hidden_widths
        if len(self.masks) != len(widths):
            raise NetworkError(f"{len(widths)} gating layers but {len(self.masks)} masks")
        for k, (m, w) in enumerate(zip(self.masks, widths)):
            if m.size != w:
                raise NetworkError(f"gate mask {k} has width {m.size}, layer has {w}")


@dataclass(frozen=True)
class ForwardTrace:
    """One forward pass: input, per-layer preactivations/activations, gates, logits."""

    x: np.ndarray
    preactivations: tuple[np.ndarray, ...]
    activations: tuple[np.ndarray, ...]
    gates: GateState
    z: np.ndarray
    frozen: bool


def forward(net: ReluNetwork, x, frozen: GateState | None = None) -> ForwardTrace:
    """Run the network, recording (or replaying) the gating pattern.

    Without ``frozen``, gates are recorded as ``preactivation > 0`` (an
    exact zero gates closed).  With ``frozen``, the supplied masks are
    applied regardless of preactivation signs, making the map exactly
    affine in ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise NetworkError(f"input shape {x.shape} != ({net.input_dim},)")
    if frozen is not None:
        frozen.check_against(net)
    a = x
    pres, acts, masks = [], [], []
    hidden = net.num_layers - 1
    for k in range(hidden):
        pre = a @ net.weights[k] + net.biases[k]
        mask = frozen.masks[k] if frozen is not None else (pre > 0.0).astype(np.float64)
        act = mask * pre
        if net.spec.skip_connections[k]:
            act = act + a
        pres.append(pre)
        acts.append(act)
        masks.append(mask)
        a = act
    z = a @ net.weights[-1] + net.biases[-1]
    return ForwardTrace(
        x=x,
        preactivations=tuple(pres),
        activations=tuple(acts),
        gates=GateState(tuple(masks)),
        z=z,
        frozen=frozen is not None,
    )


def _backward(net: ReluNetwork, trace: ForwardTrace, dz: np.ndarray):
    """Backpropagate a logit cotangent through the recorded gates.

    Returns (d_input, per-layer [(dW, db)], per-hidden-layer d_preactivation).
    """
    hidden = net.num_layers - 1
    acts_in = (trace.x,) + trace.activations  # input to each layer
    weight_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.num_layers
    pre_grads: list[np.ndarray] = [None] * hidden

    weight_grads[-1] = (np.outer(acts_in[-1], dz), dz.copy())
    d_act = dz @ net.weights[-1].T
    for k in range(hidden - 1, -1, -1):
        d_pre = trace.gates.masks[k] * d_act
        pre_grads[k] = d_pre
        weight_grads[k] = (np.outer(acts_in[k], d_pre), d_pre)
        d_prev = d_pre @ net.weights[k].T
        if net.spec.skip_connections[k]:
            d_prev = d_prev + d_act
        d_act = d_prev
    return d_act, weight_grads, pre_grads


def _check_trace(net: ReluNetwork, trace: ForwardTrace) -> None:
    if trace.x.shape != (net.input_dim,) or trace.z.shape != (net.output_dim,):
        raise NetworkError("trace does not match network shapes")
    if len(trace.preactivations) != net.num_layers - 1:
        raise NetworkError("trace layer count does not match network")
    for k, pre in enumerate(trace.preactivations):
        if pre.shape != (net.spec.layer_dims[k + 1],):
            raise NetworkError(f"trace layer {k} width mismatch")


@dataclass(frozen=True)
class InputGradients:
    """Loss gradient in the input, the logit Jacobian, and (for scalar-margin
    heads) the margin gradient g_tilde_x = d(margin)/dx."""

    g_x: np.ndarray
    jac_z: np.ndarray
    g_tilde_x: np.ndarray | None


def grad_input(net: ReluNetwork, trace: ForwardTrace, head: LossHead) -> InputGradients:
    """Backprop the loss to the input through the trace's recorded gates."""
    _check_trace(net, trace)
    ev = loss_eval(head, trace.z)
    g_x, _, _ = _backward(net, trace, ev.g_z_vector())
    lin = linearize(net, trace.gates, net.num_layers)
    jac = lin.effective_weight
    g_tilde = jac.T @ logit_selector(head, net.output_dim) if is_scalar_head(head) else None
    return InputGradients(g_x=g_x, jac_z=jac, g_tilde_x=g_tilde)


def grad_weights(net: ReluNetwork, trace: ForwardTrace, head: LossHead) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (dW, db) of the loss, through the trace's recorded gates."""
    _check_trace(net, trace)
    ev = loss_eval(head, trace.z)
    _, grads, _ = _backward(net, trace, ev.g_z_vector())
    return grads


@dataclass(frozen=True)
class CompositeGradient:
    """Weight gradient in the whole-map view: the rank-one matrix x g_h^T,
    where g_h is the loss gradient at the chosen layer's preactivation."""

    matrix: np.ndarray
    g_h: np.ndarray
    layer_index: int


def grad_weights_composite(
    net: ReluNetwork, trace: ForwardTrace, head: LossHead, layer_j: int
) -> CompositeGradient:
    """Gradient of the loss w.r.t. the input-to-layer-j map, as x g_h^T.

    Only meaningful when the trace was computed under explicitly frozen
    gates (the whole-map view treats the network below the logits as one
    affine function, which free gates would invalidate).
    """
    if not trace.frozen:
        raise NetworkError("composite weight gradient requires a frozen-gate trace")
    _check_trace(net, trace)
    if not 1 <= layer_j <= net.num_layers:
        raise NetworkError(f"layer index {layer_j} out of range 1..{net.num_layers}")
    ev = loss_eval(head, trace.z)
    _, grads, pre_grads = _backward(net, trace, ev.g_z_vector())
    if layer_j == net.num_layers:
        g_h = ev.g_z_vector()
    else:
        g_h = pre_grads[layer_j - 1]
    return CompositeGradient(matrix=np.outer(trace.x, g_h), g_h=g_h, layer_index=layer_j)


def margin_gradients(net: ReluNetwork, trace: ForwardTrace, head: LossHead, layer_j: int):
    """(g_tilde_x, g_tilde_h): gradients of the scalar margin at the input
    and at layer j's preactivation, through the trace's gates."""
    _check_trace(net, trace)
    s = logit_selector(head, net.output_dim)
    g_tilde_x, _, pre_grads = _backward(net, trace, s)
    if layer_j == net.num_layers:
        g_tilde_h = s.copy()
    else:
        g_tilde_h = pre_grads[layer_j - 1]
    return g_tilde_x, g_tilde_h


@dataclass(frozen=True)
class LinearizedModel:
    """Affine model of the network under a fixed gate pattern.

    ``effective_weight @ x + effective_bias`` reproduces the logits, and
    ``composite_w.T @ x + composite_bias`` reproduces the preactivation of
    the selected layer, exactly, for every input under those gates.
    """

    effective_weight: np.ndarray
    effective_bias: np.ndarray
    composite_w: np.ndarray
    composite_bias: np.ndarray
    layer_index: int
    wtw_condition: float | None = None
    wtw_singular: bool | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.effective_weight @ x + self.effective_bias

    def layer_preactivation(self, x: np.ndarray) -> np.ndarray:
        return self.composite_w.T @ x + self.composite_bias


def linearize(
    net: ReluNetwork, gates: GateState, layer_j: int | None = None, check_rank: bool = False
) -> LinearizedModel:
    """Collapse the network under fixed gates into explicit affine maps.

    ``layer_j`` (1-based, defaults to the last layer) selects which layer's
    preactivation the composite map targets.  With ``check_rank`` the Gram
    matrix of the composite map is eigendecomposed to record its condition
    number; rank deficiency sets a warning flag but never fails.
    """
    from .linalg import sym_eigen

    gates.check_against(net)
    if layer_j is None:
        layer_j = net.num_layers
    if not 1 <= layer_j <= net.num_layers:
        raise NetworkError(f"layer index {layer_j} out of range 1..{net.num_layers}")

    n = net.input_dim
    comp_w = None
    comp_b = None
    cur_map = np.eye(n)  # (width_k, n): a_k = cur_map @ x + cur_off
    cur_off = np.zeros(n)
    hidden = net.num_layers - 1
    for k in range(net.num_layers):
        pre_map = net.weights[k].T @ cur_map
        pre_off = net.weights[k].T @ cur_off + net.biases[k]
        if k + 1 == layer_j:
            comp_w = pre_map.T.copy()
            comp_b = pre_off.copy()
        if k < hidden:
            mask = gates.masks[k][:, None]
            nxt_map = mask * pre_map
            nxt_off = gates.masks[k] * pre_off
            if net.spec.skip_connections[k]:
                nxt_map = nxt_map + cur_map
                nxt_off = nxt_off + cur_off
            cur_map, cur_off = nxt_map, nxt_off
        else:
            cur_map, cur_off = pre_map, pre_off

    cond = None
    singular = None
    if check_rank:
        w = comp_w  # (n, D)
        d = w.shape[1]
        gram = w.T @ w if d <= n else w @ w.T
        lam = np.clip(sym_eigen(gram).eigenvalues, 0.0, None)
        lam_max = float(lam[0]) if lam.size else 0.0
        lam_min = float(lam[-1]) if lam.size else 0.0
        if d > n or lam_min <= 1e-12 * max(lam_max, 1e-300):
            singular = True
            cond = np.inf
        else:
            singular = False
            cond = lam_max / lam_min
    return LinearizedModel(
        effective_weight=cur_map,
        effective_bias=cur_off,
        composite_w=comp_w,
        composite_bias=comp_b,
        layer_index=layer_j,
        wtw_condition=cond,
        wtw_singular=singular,
    )


# ---------------------------------------------------------------------------
# batched engine (hot paths: training and multi-sample attacks)
# ---------------------------------------------------------------------------

def batch_forward(net: ReluNetwork, xs: np.ndarray, frozen_masks: list[np.ndarray] | None = None):
    """Forward a (B, n) batch; returns (inputs to each layer, pres, masks, Z).

    Row i reproduces ``forward(net, xs[i])`` up to float summation order
    (gemm vs matvec); gate decisions use the same strict ``> 0`` rule.
    """
    a = np.asarray(xs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise NetworkError(f"batch shape {a.shape} != (B, {net.input_dim})")
    acts_in = [a]
    pres, masks = [], []
    hidden = net.num_layers - 1
    for k in range(hidden):
        pre = a @ net.weights[k] + net.biases[k]
        mask = frozen_masks[k] if frozen_masks is not None else (pre > 0.0).astype(np.float64)
        act = mask * pre
        if net.spec.skip_connections[k]:
            act = act + a
        pres.append(pre)
        masks.append(mask)
        acts_in.append(act)
        a = act
    z = a @ net.weights[-1] + net.biases[-1]
    return acts_in, pres, masks, z


def batch_backward_input(net: ReluNetwork, masks: list[np.ndarray], dz: np.ndarray) -> np.ndarray:
    """Batched loss-to-input backprop given recorded masks and (B, c) cotangents."""
    hidden = net.num_layers - 1
    d_act = dz @ net.weights[-1].T
    for k in range(hidden - 1, -1, -1):
        d_pre = masks[k] * d_act
        d_prev = d_pre @ net.weights[k].T
        if net.spec.skip_connections[k]:
            d_prev = d_prev + d_act
        d_act = d_prev
    return d_act


def batch_backward_weights(net: ReluNetwork, acts_in: list[np.ndarray], masks: list[np.ndarray], dz: np.ndarray):
    """Batched summed weight gradients: returns per-layer (dW_sum, db_sum)."""
    hidden = net.num_layers - 1
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.num_layers
    grads[-1] = (acts_in[-1].T @ dz, dz.sum(axis=0))
    d_act = dz @ net.weights[-1].T
    for k in range(hidden - 1, -1, -1):
        d_pre = masks[k] * d_act
        grads[k] = (acts_in[k].T @ d_pre, d_pre.sum(axis=0))
        d_prev = d_pre @ net.weights[k].T
        if net.spec.skip_connections[k]:
            d_prev = d_prev + d_act
        d_act = d_prev
    return grads
