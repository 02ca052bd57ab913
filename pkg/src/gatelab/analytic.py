"""Closed-form perturbation solutions and the fit metric against real runs.

Under frozen gates the loss Hessian in the input factors through the logit
curvature, so its eigenpairs are cheap: a scalar-margin head gives a single
rank-one mode ``h_z * ||g_tilde||^2`` along the margin gradient, a vector
head gives at most ``c`` modes through the logit Jacobian, and a
finite-difference decomposition stays available as the slow cross-check.
The attack solutions then amplify each gradient projection with the mode's
coefficient: ``((1 + a*l)^m - 1)/l`` after ``m`` steps of size ``a``, and
``(exp(b*l) - 1)/l`` in the many-small-steps limit of total strength
``b = a*m``.  Components with negligible curvature grow linearly, which is
exactly the small-``l`` series of either coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import LossHead, is_scalar_head, logit_selector, loss_eval
from .linalg import fd_hessian, sym_eigen
from .network import ReluNetwork, _backward, forward, linearize


class OracleError(ValueError):
    """Analytic solution unavailable for these inputs."""


class DegenerateDecomposition(OracleError):
    """The gradient or spectrum vanished; no direction to decompose."""


#: below this magnitude an eigenvalue is treated as zero curvature and the
#: second-order series replaces the 0/0 coefficient form
TINY_EIGENVALUE = 1e-8


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the input-space loss curvature with gradient projections.

    ``gammas[i]`` is the projection of the loss gradient on eigenvector i.
    ``residual`` is the part of the gradient outside the stored modes; it
    belongs to the zero-curvature subspace and grows linearly under attack.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gammas: np.ndarray
    g_x: np.ndarray
    source: str
    residual: np.ndarray

    @property
    def modes(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class StepRegime:
    step_size: float
    steps: int


@dataclass(frozen=True)
class LimitRegime:
    strength: float  # total strength: step count times step size, in the limit


@dataclass(frozen=True)
class NormalizedRegime:
    strength: float
    length: float  # perturbation is rescaled to exactly this norm


Regime = StepRegime | LimitRegime | NormalizedRegime


@dataclass(frozen=True)
class AnalyticPerturbation:
    delta: np.ndarray
    predicted_gradient: np.ndarray
    regime: Regime


def spectral_decomposition(
    net: ReluNetwork,
    head: LossHead,
    x,
    source: str = "auto",
    frozen_loss: bool = True,
) -> SpectralDecomposition:
    """Eigendecomposition of the loss curvature in the input at ``x``.

    ``source``: ``rank1`` (scalar-margin heads), ``lowrank`` (any head,
    through the logit Jacobian), ``fd`` (finite differences of the actual
    loss; ``frozen_loss`` controls whether the probed function replays the
    gates recorded at ``x``), or ``auto`` to pick by head arity.  Gates are
    always the ones recorded at ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    trace = forward(net, x)
    if source == "auto":
        source = "rank1" if is_scalar_head(head) else "lowrank"

    if source == "rank1":
        if not is_scalar_head(head):
            raise OracleError(f"rank1 source needs a scalar-margin head, got {type(head).__name__}")
        ev = loss_eval(head, trace.z)
        s = logit_selector(head, net.output_dim)
        g_tilde, _, _ = _backward(net, trace, s)
        norm = float(np.linalg.norm(g_tilde))
        if norm == 0.0:
            raise DegenerateDecomposition("margin gradient vanished; curvature has no direction")
        lam = np.array([float(ev.h_z) * norm * norm])
        v = (g_tilde / norm)[:, None]
        g_x = float(ev.g_z) * g_tilde  # exact for scalar-margin heads
        gammas = np.array([float(ev.g_z) * norm])
        residual = g_x - gammas[0] * v[:, 0]
        return SpectralDecomposition(lam, v, gammas, g_x, "rank1", residual)

    if source == "lowrank":
        ev = loss_eval(head, trace.z)
        jac = linearize(net, trace.gates).effective_weight  # (c, n)
        g_x = jac.T @ ev.g_z_vector()
        hz = ev.h_z_matrix()
        hz_eig = sym_eigen(hz)
        root = hz_eig.eigenvectors * np.sqrt(np.clip(hz_eig.eigenvalues, 0.0, None))
        b = root.T @ jac  # (c, n); b^T b is the curvature matrix
        k = b @ b.T
        k_eig = sym_eigen(k)
        keep = k_eig.eigenvalues > max(1e-14 * max(float(k_eig.eigenvalues[0]), 0.0), 0.0)
        lam = k_eig.eigenvalues[keep]
        u = k_eig.eigenvectors[:, keep]
        v = (b.T @ u) / np.sqrt(lam)
        gammas = v.T @ g_x
        residual = g_x - v @ gammas
        if lam.size == 0:
            raise DegenerateDecomposition("logit curvature vanished; no modes to decompose")
        return SpectralDecomposition(lam, v, gammas, g_x, "lowrank", residual)

    if source == "fd":
        from .heads import loss_eval as _le

        gates = trace.gates if frozen_loss else None

        def f(v):
            return _le(head, forward(net, v, frozen=gates).z).loss

        hess = fd_hessian(f, x)
        dec = sym_eigen(hess)
        ev = loss_eval(head, trace.z)
        g_x, _, _ = _backward(net, trace, ev.g_z_vector())
        gammas = dec.eigenvectors.T @ g_x
        residual = g_x - dec.eigenvectors @ gammas
        return SpectralDecomposition(dec.eigenvalues, dec.eigenvectors, gammas, g_x, "fd", residual)

    raise OracleError(f"unknown spectral source {source!r}")


def _step_coefficients(lam: np.ndarray, alpha: float, steps: int) -> tuple[np.ndarray, np.ndarray]:
    base = 1.0 + alpha * lam
    if np.any(base <= 0.0):
        worst = float(lam[np.argmin(base)])
        raise OracleError(
            f"step size {alpha} too large for eigenvalue {worst}: growth factor would cross zero"
        )
    growth = base**steps
    small = np.abs(lam) < TINY_EIGENVALUE
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = (growth - 1.0) / lam
    series = steps * alpha + steps * (steps - 1) * alpha * alpha * lam / 2.0
    return np.where(small, series, coef), growth


def _limit_coefficients(lam: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    arg = beta * lam
    if np.any(arg > 700.0):
        worst = int(np.argmax(arg))
        raise OracleError(
            f"exp overflow for mode {worst}: strength {beta} times eigenvalue {lam[worst]} exceeds 700"
        )
    growth = np.exp(arg)
    small = np.abs(lam) < TINY_EIGENVALUE
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = (growth - 1.0) / lam
    series = beta + beta * beta * lam / 2.0
    return np.where(small, series, coef), growth


def perturbation_m_step(spec: SpectralDecomposition, step_size: float, steps: int) -> AnalyticPerturbation:
    """Closed-form perturbation and attacked gradient after ``steps`` steps."""
    if not step_size > 0.0:
        raise OracleError(f"step size must be positive, got {step_size}")
    if steps < 0:
        raise OracleError(f"step count must be >= 0, got {steps}")
    coef, growth = _step_coefficients(spec.eigenvalues, step_size, steps)
    delta = spec.eigenvectors @ (coef * spec.gammas) + steps * step_size * spec.residual
    grad = spec.eigenvectors @ (growth * spec.gammas) + spec.residual
    return AnalyticPerturbation(delta, grad, StepRegime(step_size, steps))


def perturbation_limit(spec: SpectralDecomposition, strength: float) -> AnalyticPerturbation:
    """Infinitesimal-step limit at fixed total strength (exp coefficients)."""
    if strength < 0.0:
        raise OracleError(f"strength must be >= 0, got {strength}")
    coef, growth = _limit_coefficients(spec.eigenvalues, strength)
    delta = spec.eigenvectors @ (coef * spec.gammas) + strength * spec.residual
    grad = spec.eigenvectors @ (growth * spec.gammas) + spec.residual
    return AnalyticPerturbation(delta, grad, LimitRegime(strength))


def perturbation_normalized(spec: SpectralDecomposition, strength: float, length: float) -> AnalyticPerturbation:
    """Limit perturbation rescaled to a fixed norm (normalized-attack model)."""
    if not length > 0.0:
        raise OracleError(f"length must be positive, got {length}")
    limit = perturbation_limit(spec, strength)
    norm = float(np.linalg.norm(limit.delta))
    if norm == 0.0:
        raise DegenerateDecomposition("limit perturbation vanished; cannot normalize")
    delta = (length / norm) * limit.delta
    # first-order prediction: gradient at x plus curvature times the move
    scale = length / norm
    coef, _ = _limit_coefficients(spec.eigenvalues, strength)
    grad = spec.eigenvectors @ ((1.0 + scale * spec.eigenvalues * coef) * spec.gammas) + spec.residual
    return AnalyticPerturbation(delta, grad, NormalizedRegime(strength, length))


def predicted_gradient(spec: SpectralDecomposition, regime: Regime) -> np.ndarray:
    """Attacked-input gradient predicted for a regime (dispatch convenience)."""
    if isinstance(regime, StepRegime):
        return perturbation_m_step(spec, regime.step_size, regime.steps).predicted_gradient
    if isinstance(regime, LimitRegime):
        return perturbation_limit(spec, regime.strength).predicted_gradient
    if isinstance(regime, NormalizedRegime):
        return perturbation_normalized(spec, regime.strength, regime.length).predicted_gradient
    raise OracleError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class FitReport:
    """Trimmed mean relative error between real and analytic vector sets."""

    kappa: float
    per_sample_errors: np.ndarray
    trim_fraction: float
    n_excluded: int

    @property
    def retained(self) -> int:
        return max(1, int(round(self.trim_fraction * self.per_sample_errors.size)))


def fit_report(real, analytic, trim: float = 1.0) -> FitReport:
    """kappa = mean of the ``trim`` fraction smallest relative errors
    ||real_i - analytic_i|| / ||real_i||.

    Samples whose real vector has zero norm are excluded and counted in
    ``n_excluded`` rather than poisoning the mean.
    """
    if not 0.0 < trim <= 1.0:
        raise OracleError(f"trim fraction must be in (0, 1], got {trim}")
    real = [np.asarray(r, dtype=np.float64) for r in real]
    analytic = [np.asarray(a, dtype=np.float64) for a in analytic]
    if len(real) != len(analytic) or not real:
        raise OracleError("real and analytic sets must be nonempty and aligned")
    errors = []
    excluded = 0
    for r, a in zip(real, analytic):
        if r.shape != a.shape:
            raise OracleError(f"sample shape mismatch: {r.shape} vs {a.shape}")
        norm = float(np.linalg.norm(r))
        if norm == 0.0:
            excluded += 1
            continue
        errors.append(float(np.linalg.norm(r - a)) / norm)
    if not errors:
        raise OracleError("no usable samples: all real vectors had zero norm")
    errors = np.asarray(errors)
    k = max(1, int(round(trim * errors.size)))
    kappa = float(np.mean(np.sort(errors)[:k]))
    return FitReport(kappa=kappa, per_sample_errors=errors, trim_fraction=trim, n_excluded=excluded)
