"""Multi-step gradient ascent on the input, with gate freezing and recording.

The attack iterates ``delta += step_size * rule(grad)`` where the gradient
is taken at the current perturbed input, optionally through the gate
pattern recorded at the clean input.  Besides the perturbation itself the
trajectory keeps per-step scalars (perturbation norm, gradient norm, and
for scalar-margin heads the margin curvature and margin-gradient norm)
that feed the growth curves and the along-trajectory amplification sum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .heads import (
    BinaryReduced,
    LossHead,
    Quadratic,
    SigmoidBCE,
    SoftmaxCE,
    is_scalar_head,
    logit_selector,
    loss_eval,
    reduce_to_binary,
)
from .network import (
    GateState,
    ReluNetwork,
    _backward,
    batch_backward_input,
    batch_forward,
    forward,
)


class AttackError(RuntimeError):
    """Attack could not proceed (non-finite gradient, bad configuration)."""


class GradientRule(enum.Enum):
    """How the raw loss gradient turns into a step direction."""

    RAW = "raw"
    L2_NORMALIZED = "l2"
    SIGN_LINF = "linf"


@dataclass(frozen=True)
class AttackConfig:
    step_size: float
    steps: int
    rule: GradientRule = GradientRule.RAW
    freeze_gates: bool = False
    epsilon: float | None = None
    norm_p: float | None = None  # 2 or inf; required when project is set
    project: bool = False
    record_every: int = 1

    def __post_init__(self):
        if not self.step_size > 0.0:
            raise AttackError(f"step size must be positive, got {self.step_size}")
        if self.steps < 0:
            raise AttackError(f"step count must be >= 0, got {self.steps}")
        if self.record_every < 1:
            raise AttackError("record_every must be >= 1")
        if self.project:
            if self.epsilon is None or not self.epsilon > 0.0:
                raise AttackError("projection requires a positive epsilon budget")
            if self.norm_p not in (2, 2.0, np.inf, float("inf")):
                raise AttackError("projection norm must be 2 or inf")


@dataclass
class AttackTrajectory:
    """Per-step record of one attack run.

    Scalar arrays have one entry per step t = 1..m.  ``h_z`` and
    ``g_tilde_norms`` hold NaN when the head has no scalar margin.
    Vectors (``deltas``/``updates``) are kept at ``record_every`` strides;
    consecutive recorded updates telescope, so their cumulative sum equals
    the recorded perturbations exactly.
    """

    x: np.ndarray
    config: AttackConfig
    delta_norms: np.ndarray
    grad_norms: np.ndarray
    h_z: np.ndarray
    g_tilde_norms: np.ndarray
    a_hat_partial: np.ndarray
    recorded_steps: list[int] = field(default_factory=list)
    deltas: list[np.ndarray] = field(default_factory=list)
    updates: list[np.ndarray] = field(default_factory=list)
    m_success: int | None = None
    final_delta: np.ndarray = None

    @property
    def steps(self) -> int:
        return self.delta_norms.size


def _apply_rule(rule: GradientRule, g: np.ndarray, step_size: float) -> np.ndarray:
    if rule is GradientRule.RAW:
        return step_size * g
    if rule is GradientRule.L2_NORMALIZED:
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            return np.zeros_like(g)  # degenerate input: skip rather than divide by zero
        return step_size * g / norm
    if rule is GradientRule.SIGN_LINF:
        return step_size * np.sign(g)  # sign(0) = 0 keeps dead coordinates dead
    raise AttackError(f"unknown rule {rule!r}")


def _project(delta: np.ndarray, epsilon: float, norm_p: float) -> np.ndarray:
    if norm_p in (np.inf, float("inf")):
        return np.clip(delta, -epsilon, epsilon)
    norm = float(np.linalg.norm(delta))
    if norm > epsilon:
        return delta * (epsilon / norm)
    return delta


def _stats_head(head: LossHead, z_clean: np.ndarray) -> LossHead | None:
    """Scalar-margin head used for per-step curvature/margin records."""
    if is_scalar_head(head):
        return head
    if isinstance(head, SoftmaxCE):
        _, _, reduced = reduce_to_binary(z_clean)
        return reduced
    return None  # quadratic head: no scalar margin to record


def _predict(head: LossHead, z: np.ndarray):
    if isinstance(head, (SigmoidBCE, BinaryReduced)):
        margin = float(z[0]) if isinstance(head, SigmoidBCE) else float(head.selector(z.size) @ z)
        return margin > 0.0
    return int(np.argmax(z)) if z.size > 1 else bool(z[0] > 0.0)


def run_attack(net: ReluNetwork, head: LossHead, x, cfg: AttackConfig) -> AttackTrajectory:
    """Reference single-sample attack loop (see :func:`batch_attack` for the
    vectorized twin used on sample sets)."""
    x = np.asarray(x, dtype=np.float64)
    frozen = forward(net, x).gates if cfg.freeze_gates else None
    trace = forward(net, x, frozen=frozen)
    stats_head = _stats_head(head, trace.z)
    pred_clean = _predict(head, trace.z)

    m = cfg.steps
    traj = AttackTrajectory(
        x=x,
        config=cfg,
        delta_norms=np.zeros(m),
        grad_norms=np.zeros(m),
        h_z=np.full(m, np.nan),
        g_tilde_norms=np.full(m, np.nan),
        a_hat_partial=np.zeros(m),
    )

    delta = np.zeros_like(x)
    last_recorded_delta = np.zeros_like(x)
    g = _loss_grad(net, trace, head, step=0)
    a_hat = 0.0
    for t in range(1, m + 1):
        new_delta = delta + _apply_rule(cfg.rule, g, cfg.step_size)
        if cfg.project:
            new_delta = _project(new_delta, cfg.epsilon, cfg.norm_p)
        delta = new_delta
        trace = forward(net, x + delta, frozen=frozen)
        g = _loss_grad(net, trace, head, step=t)
        traj.delta_norms[t - 1] = np.linalg.norm(delta)
        traj.grad_norms[t - 1] = np.linalg.norm(g)
        if stats_head is not None:
            ev = loss_eval(stats_head, trace.z)
            s = logit_selector(stats_head, net.output_dim)
            g_tilde, _, _ = _backward(net, trace, s)
            traj.h_z[t - 1] = float(ev.h_z)
            traj.g_tilde_norms[t - 1] = float(np.linalg.norm(g_tilde))
            a_hat += cfg.step_size * float(ev.h_z) * float(g_tilde @ g_tilde)
        traj.a_hat_partial[t - 1] = a_hat
        if traj.m_success is None and _predict(head, trace.z) != pred_clean:
            traj.m_success = t
        if t % cfg.record_every == 0 or t == m:
            traj.recorded_steps.append(t)
            traj.deltas.append(delta.copy())
            traj.updates.append(delta - last_recorded_delta)
            last_recorded_delta = delta.copy()
    traj.final_delta = delta
    return traj


def _loss_grad(net, trace, head, step: int) -> np.ndarray:
    ev = loss_eval(head, trace.z)
    g, _, _ = _backward(net, trace, ev.g_z_vector())
    if not np.all(np.isfinite(g)):
        raise AttackError(f"non-finite gradient at attack step {step}")
    return g


def amplification_estimate(traj: AttackTrajectory, step_size: float | None = None) -> float:
    """Along-trajectory amplification sum: step_size * sum_t h_z(t) * ||g_tilde(t)||^2.

    Requires the margin scalars at every step; zero for an empty trajectory.
    """
    if traj.steps == 0:
        return 0.0
    if np.any(np.isnan(traj.h_z)) or np.any(np.isnan(traj.g_tilde_norms)):
        raise AttackError("trajectory is missing per-step margin records")
    alpha = traj.config.step_size if step_size is None else step_size
    return float(alpha * np.sum(traj.h_z * traj.g_tilde_norms**2))


# ---------------------------------------------------------------------------
# batched attack over a sample set
# ---------------------------------------------------------------------------

class HeadBatch:
    """Per-sample heads of one kind, vectorized over the batch."""

    def __init__(self, kind: str, output_dim: int, labels=None, targets=None, selectors=None):
        self.kind = kind
        self.output_dim = output_dim
        self.labels = labels
        self.targets = targets
        self.selectors = selectors

    @classmethod
    def from_heads(cls, heads: list[LossHead], output_dim: int) -> "HeadBatch":
        kinds = {type(h) for h in heads}
        if len(kinds) != 1:
            raise AttackError("all heads in a batch must share a kind")
        h0 = heads[0]
        if isinstance(h0, SigmoidBCE):
            return cls("sigmoid", output_dim, labels=np.array([h.label for h in heads], dtype=np.float64))
        if isinstance(h0, SoftmaxCE):
            return cls("softmax", output_dim, labels=np.array([h.true_class for h in heads], dtype=np.intp))
        if isinstance(h0, Quadratic):
            return cls("quadratic", output_dim, targets=np.stack([h.target for h in heads]))
        if isinstance(h0, BinaryReduced):
            return cls("reduced", output_dim, selectors=np.stack([h.selector(output_dim) for h in heads]))
        raise AttackError(f"unsupported head {h0!r}")

    def loss_grad(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample loss values and logit cotangents, (B,), (B, c)."""
        if self.kind == "sigmoid":
            zy = z[:, 0] * self.labels
            loss = np.logaddexp(0.0, -zy)
            g = (-self.labels * _sigmoid_vec(-zy))[:, None]
            return loss, g
        if self.kind == "reduced":
            margin = np.einsum("bc,bc->b", z, self.selectors)
            loss = np.logaddexp(0.0, -margin)
            return loss, (-_sigmoid_vec(-margin))[:, None] * self.selectors
        if self.kind == "softmax":
            shifted = z - z.max(axis=1, keepdims=True)
            expz = np.exp(shifted)
            p = expz / expz.sum(axis=1, keepdims=True)
            rows = np.arange(z.shape[0])
            loss = np.log(expz.sum(axis=1)) - shifted[rows, self.labels]
            g = p.copy()
            g[rows, self.labels] -= 1.0
            return loss, g
        r = z - self.targets
        return 0.5 * np.einsum("bc,bc->b", r, r), r

    def margin_stats(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        """(h_z, selector matrix) for scalar-margin kinds, else None."""
        if self.kind == "sigmoid":
            zy = z[:, 0] * self.labels
            return _sigmoid_vec(zy) * _sigmoid_vec(-zy), np.ones((z.shape[0], 1))
        if self.kind == "reduced":
            margin = np.einsum("bc,bc->b", z, self.selectors)
            return _sigmoid_vec(margin) * _sigmoid_vec(-margin), self.selectors
        return None

    def predictions(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "sigmoid":
            return (z[:, 0] > 0.0).astype(np.intp)
        if self.kind == "reduced":
            return (np.einsum("bc,bc->b", z, self.selectors) > 0.0).astype(np.intp)
        if z.shape[1] == 1:
            return (z[:, 0] > 0.0).astype(np.intp)
        return np.argmax(z, axis=1)


def _sigmoid_vec(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class BatchAttackResult:
    deltas: np.ndarray               # (B, n) final perturbations
    delta_norms: np.ndarray          # (B, m)
    grad_norms: np.ndarray           # (B, m)
    h_z: np.ndarray                  # (B, m) NaN without a scalar margin
    g_tilde_norms: np.ndarray        # (B, m)
    success_step: np.ndarray         # (B,) step of first prediction flip, -1 if never

    def a_hat(self, step_size: float) -> np.ndarray:
        if np.any(np.isnan(self.h_z)):
            raise AttackError("batch is missing per-step margin records")
        return step_size * np.sum(self.h_z * self.g_tilde_norms**2, axis=1)


def batch_attack(
    net: ReluNetwork,
    heads: HeadBatch | list[LossHead],
    xs: np.ndarray,
    cfg: AttackConfig,
    with_stats: bool = True,
) -> BatchAttackResult:
    """Vectorized attack across independent samples.

    Per-sample results agree with :func:`run_attack` up to float summation
    order.  ``with_stats=False`` skips the margin scalars (training only
    needs the final perturbations).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if isinstance(heads, list):
        heads = HeadBatch.from_heads(heads, net.output_dim)
    b, m = xs.shape[0], cfg.steps

    frozen_masks = None
    _, _, masks0, z0 = batch_forward(net, xs)
    if cfg.freeze_gates:
        frozen_masks = masks0
    stats_head = heads if heads.kind in ("sigmoid", "reduced") else None
    if heads.kind == "softmax" and with_stats:
        # fixed top-two margin per sample, decided at the clean input
        order = np.argsort(-z0, axis=1, kind="stable")
        sel = np.zeros_like(z0)
        rows = np.arange(b)
        sel[rows, order[:, 0]] = 1.0
        sel[rows, order[:, 1]] = -1.0
        stats_head = HeadBatch("reduced", net.output_dim, selectors=sel)

    pred_clean = heads.predictions(z0)
    res = BatchAttackResult(
        deltas=np.zeros_like(xs),
        delta_norms=np.zeros((b, m)),
        grad_norms=np.zeros((b, m)),
        h_z=np.full((b, m), np.nan),
        g_tilde_norms=np.full((b, m), np.nan),
        success_step=np.full(b, -1, dtype=np.intp),
    )

    delta = np.zeros_like(xs)
    masks = frozen_masks if frozen_masks is not None else masks0
    z = z0
    _, gz = heads.loss_grad(z)
    g = batch_backward_input(net, masks, gz)
    for t in range(1, m + 1):
        if not np.all(np.isfinite(g)):
            raise AttackError(f"non-finite gradient at attack step {t - 1}")
        if cfg.rule is GradientRule.RAW:
            step = cfg.step_size * g
        elif cfg.rule is GradientRule.L2_NORMALIZED:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            safe = np.where(norms == 0.0, 1.0, norms)
            step = cfg.step_size * np.where(norms == 0.0, 0.0, g / safe)
        else:
            step = cfg.step_size * np.sign(g)
        delta = delta + step
        if cfg.project:
            if cfg.norm_p in (np.inf, float("inf")):
                delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
            else:
                norms = np.linalg.norm(delta, axis=1, keepdims=True)
                scale = np.where(norms > cfg.epsilon, cfg.epsilon / np.where(norms == 0, 1, norms), 1.0)
                delta = delta * scale
        _, _, step_masks, z = batch_forward(net, xs + delta, frozen_masks)
        masks = frozen_masks if frozen_masks is not None else step_masks
        _, gz = heads.loss_grad(z)
        g = batch_backward_input(net, masks, gz)
        res.delta_norms[:, t - 1] = np.linalg.norm(delta, axis=1)
        res.grad_norms[:, t - 1] = np.linalg.norm(g, axis=1)
        if with_stats and stats_head is not None:
            hz, selectors = stats_head.margin_stats(z)
            gt = batch_backward_input(net, masks, selectors)
            res.h_z[:, t - 1] = hz
            res.g_tilde_norms[:, t - 1] = np.linalg.norm(gt, axis=1)
        flipped = (heads.predictions(z) != pred_clean) & (res.success_step < 0)
        res.success_step[flipped] = t
    res.deltas = delta
    return res
