"""Loss heads with closed-form first and second derivatives in the logits.

Three heads cover the lab's needs: a binary cross-entropy head on a scalar
logit with labels in {-1, +1}, a softmax cross-entropy head on a logit
vector, and a quadratic head 0.5 * ||z - target||^2 whose curvature is the
identity (so frozen-gate losses become exactly quadratic in the input).

A fourth variant, :class:`BinaryReduced`, projects a logit vector onto the
difference between two chosen classes and then behaves like the sigmoid
head with label +1.  It is how multi-class networks enter the scalar-head
analysis: the top-versus-runner-up margin carries the attack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HeadError(ValueError):
    """Logit/head mismatch or invalid head parameters."""


def _stable_sigmoid(u: float) -> float:
    if u >= 0.0:
        e = np.exp(-u)
        return 1.0 / (1.0 + e)
    e = np.exp(u)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SigmoidBCE:
    """Binary cross-entropy on a scalar logit, label in {-1, +1}."""

    label: int = 1

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise HeadError(f"sigmoid label must be -1 or +1, got {self.label}")


@dataclass(frozen=True)
class SoftmaxCE:
    """Cross-entropy after a softmax over the logit vector."""

    true_class: int

    def __post_init__(self):
        if self.true_class < 0:
            raise HeadError(f"class index must be non-negative, got {self.true_class}")


@dataclass(frozen=True)
class Quadratic:
    """0.5 * ||z - target||^2; curvature is exactly the identity."""

    target: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64)
        if t.ndim != 1:
            raise HeadError(f"quadratic target must be a vector, got shape {t.shape}")
        object.__setattr__(self, "target", t)


@dataclass(frozen=True)
class BinaryReduced:
    """Sigmoid head on the margin z[first] - z[second] of a logit vector.

    The label is fixed to +1: the margin is positive while the network
    still prefers ``first``, and an attack succeeds when it crosses zero.
    """

    first: int
    second: int

    def __post_init__(self):
        if self.first == self.second or min(self.first, self.second) < 0:
            raise HeadError(f"reduced head needs two distinct class indices, got {self.first}, {self.second}")

    def selector(self, dim: int) -> np.ndarray:
        if max(self.first, self.second) >= dim:
            raise HeadError(f"reduced head classes ({self.first}, {self.second}) out of range for dim {dim}")
        s = np.zeros(dim)
        s[self.first] = 1.0
        s[self.second] = -1.0
        return s


LossHead = SigmoidBCE | SoftmaxCE | Quadratic | BinaryReduced


@dataclass(frozen=True)
class LossEval:
    """Loss value with its logit gradient and logit curvature.

    For scalar-margin heads (sigmoid, reduced) ``g_z`` and ``h_z`` are the
    scalar derivatives in the margin; ``g_z_vector``/``h_z_matrix`` give
    the equivalent quantities in the full logit space for backpropagation.
    """

    loss: float
    g_z: float | np.ndarray
    h_z: float | np.ndarray
    _selector: np.ndarray | None = field(default=None, repr=False)

    @property
    def scalar(self) -> bool:
        return np.ndim(self.g_z) == 0

    def g_z_vector(self) -> np.ndarray:
        if not self.scalar:
            return np.asarray(self.g_z)
        if self._selector is None:
            return np.array([float(self.g_z)])
        return float(self.g_z) * self._selector

    def h_z_matrix(self) -> np.ndarray:
        if not self.scalar:
            return np.asarray(self.h_z)
        if self._selector is None:
            return np.array([[float(self.h_z)]])
        return float(self.h_z) * np.outer(self._selector, self._selector)


def _check_finite(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise HeadError(f"logits must be a vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise HeadError("logits contain non-finite entries")
    return z


def _sigmoid_eval(margin: float, label: int) -> tuple[float, float, float]:
    zy = margin * label
    loss = float(np.logaddexp(0.0, -zy))
    g = -label * _stable_sigmoid(-zy)
    h = _stable_sigmoid(zy) * _stable_sigmoid(-zy)
    return loss, g, h


def loss_eval(head: LossHead, z) -> LossEval:
    """Evaluate a head at logits ``z``: loss, logit gradient, logit curvature."""
    z = _check_finite(z)
    if isinstance(head, SigmoidBCE):
        if z.size != 1:
            raise HeadError(f"sigmoid head expects a scalar logit, got dim {z.size}")
        loss, g, h = _sigmoid_eval(float(z[0]), head.label)
        return LossEval(loss=loss, g_z=g, h_z=h)
    if isinstance(head, BinaryReduced):
        s = head.selector(z.size)
        loss, g, h = _sigmoid_eval(float(s @ z), +1)
        return LossEval(loss=loss, g_z=g, h_z=h, _selector=s)
    if isinstance(head, SoftmaxCE):
        if head.true_class >= z.size:
            raise HeadError(f"class {head.true_class} out of range for {z.size} logits")
        shifted = z - np.max(z)
        expz = np.exp(shifted)
        p = expz / expz.sum()
        loss = float(np.log(expz.sum()) - shifted[head.true_class])
        g = p.copy()
        g[head.true_class] -= 1.0
        h = np.diag(p) - np.outer(p, p)
        return LossEval(loss=loss, g_z=g, h_z=h)
    if isinstance(head, Quadratic):
        if head.target.size != z.size:
            raise HeadError(f"quadratic target dim {head.target.size} != logit dim {z.size}")
        r = z - head.target
        return LossEval(loss=float(0.5 * r @ r), g_z=r, h_z=np.eye(z.size))
    raise HeadError(f"unknown head {head!r}")


def reduce_to_binary(z, head: SoftmaxCE | None = None) -> tuple[float, SigmoidBCE, BinaryReduced]:
    """Collapse a logit vector to the top-two margin with a sigmoid head.

    Returns the margin z_best - z_second, the equivalent standalone sigmoid
    head (label +1), and the reduced head bound to the winning class pair
    for reuse at other inputs.  Ties pick the lowest indices, giving a zero
    margin.  Needs at least two logits.
    """
    z = _check_finite(z)
    if z.size < 2:
        raise HeadError(f"binary reduction needs at least 2 logits, got {z.size}")
    order = np.argsort(-z, kind="stable")
    best, second = int(order[0]), int(order[1])
    return float(z[best] - z[second]), SigmoidBCE(label=1), BinaryReduced(best, second)


def is_scalar_head(head: LossHead) -> bool:
    return isinstance(head, (SigmoidBCE, BinaryReduced))


def logit_selector(head: LossHead, dim: int) -> np.ndarray:
    """Direction s such that the scalar margin is s^T z; scalar heads only."""
    if isinstance(head, SigmoidBCE):
        if dim != 1:
            raise HeadError(f"sigmoid head expects dim 1, got {dim}")
        return np.array([1.0])
    if isinstance(head, BinaryReduced):
        return head.selector(dim)
    raise HeadError(f"{type(head).__name__} has no scalar margin")
