"""Guidance rules for probability-flow sampling.

Given the conditional and unconditional velocities ``v_c`` and ``v_u`` at a
state, classifier-free guidance (CFG) integrates
``v_u + scale * (v_c - v_u)``.  The projected rule treats the unit residual
``g = v_c - v_u`` geometrically instead: it splits ``g`` about the normal
direction ``n = a_t * x - v`` (which is proportional to the score of the
chosen velocity's marginal), damps the score-parallel part by
``parallel_scale`` and applies a time-decaying scale:

    update = scale(t) * (g_orth + parallel_scale * g_par)
           = scale(t) * (g + (parallel_scale - 1) * g_par)

The second form is used for the arithmetic because it makes
``parallel_scale = 1`` with a constant scale reproduce CFG bit for bit.

Fields built by the ``*_field`` constructors in this module carry exact
divergences and Jacobians derived from the Gaussian-mixture oracle, which
is what lets stochastic divergence estimators be calibrated against truth:

* velocity:    ``div v = dim * a_t - b_t * lap log p``
* residual:    ``div g = -b_t * (lap log p_c - lap log p_u)``
* parallel:    product rule on ``g_par = lam(x) n(x)`` with
               ``lam = <g, n> / ||n||^2`` and exact mixture Hessians.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mixture as mix
from . import schedule as sched
from .errors import (
    CapabilityError,
    ConfigurationError,
    DegenerateNormalError,
    ShapeError,
)


class GuidanceRule(enum.Enum):
    CFG = "cfg"
    PROJECTED = "projected"


class NormalSource(enum.Enum):
    """Which velocity defines the normal direction for the split."""

    CONDITIONAL = "conditional"
    UNCONDITIONAL = "unconditional"


@dataclass(frozen=True)
class GuidanceConfig:
    """Parameters of a guidance rule.

    ``guidance_scale`` is the CFG strength (and the ``t = 0`` value of the
    projected rule's schedule), ``min_scale`` its floor, ``decay_power``
    the exponent of the ``(1 - t) ** decay_power`` decay, and
    ``parallel_scale`` the damping applied to the score-parallel residual
    component.  ``parallel_scale`` may exceed 1 (amplification) to support
    sweeps.
    """

    rule: GuidanceRule = GuidanceRule.PROJECTED
    guidance_scale: float = 5.0
    min_scale: float = 1.0
    decay_power: float = 4.0
    parallel_scale: float = 0.1
    normal_source: NormalSource = NormalSource.CONDITIONAL

    def __post_init__(self):
        if not isinstance(self.rule, GuidanceRule):
            raise ConfigurationError(f"unknown guidance rule {self.rule!r}")
        if not isinstance(self.normal_source, NormalSource):
            raise ConfigurationError(f"unknown normal source {self.normal_source!r}")
        vals = (
            self.guidance_scale,
            self.min_scale,
            self.decay_power,
            self.parallel_scale,
        )
        if not all(np.isfinite(v) for v in vals):
            raise ConfigurationError(f"guidance parameters must be finite: {vals}")
        if self.guidance_scale <= 0.0:
            raise ConfigurationError(
                f"guidance_scale must be positive, got {self.guidance_scale}"
            )
        if self.min_scale < 0.0:
            raise ConfigurationError(
                f"min_scale must be nonnegative, got {self.min_scale}"
            )
        if self.min_scale > self.guidance_scale:
            raise ConfigurationError(
                f"min_scale ({self.min_scale}) must not exceed "
                f"guidance_scale ({self.guidance_scale})"
            )
        if self.decay_power < 0.0:
            raise ConfigurationError(
                f"decay_power must be nonnegative, got {self.decay_power}"
            )
        if self.parallel_scale < 0.0:
            raise ConfigurationError(
                f"parallel_scale must be nonnegative, got {self.parallel_scale}"
            )


@dataclass(frozen=True)
class GuidanceBreakdown:
    """Everything the guidance rule computed at one state.

    ``residual = parallel + orthogonal`` up to floating-point roundoff and
    ``orthogonal`` is orthogonal to ``normal``; ``update`` is the vector
    actually added to the unconditional velocity.
    """

    residual: np.ndarray
    parallel: np.ndarray
    orthogonal: np.ndarray
    normal: np.ndarray
    scale: float
    update: np.ndarray


@dataclass(frozen=True)
class VectorField:
    """A time-dependent vector field ``(x, t) -> R^dim``.

    ``fn`` must accept a single point ``(dim,)`` or a batch ``(n, dim)``
    and return the matching shape.  ``div_fn`` and ``jac_fn`` are optional
    single-point callables providing the exact divergence and Jacobian;
    fields without them can still be differentiated numerically.
    """

    fn: Callable[[np.ndarray, float], np.ndarray]
    dim: int
    div_fn: Optional[Callable[[np.ndarray, float], float]] = None
    jac_fn: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    label: str = field(default="")

    def __call__(self, x, t):
        return self.fn(np.asarray(x, dtype=float), float(t))

    @property
    def has_exact_divergence(self):
        return self.div_fn is not None

    def divergence(self, x, t):
        if self.div_fn is None:
            raise CapabilityError(
                f"field {self.label or '<anonymous>'} has no exact divergence"
            )
        return float(self.div_fn(np.asarray(x, dtype=float), float(t)))

    def jacobian(self, x, t):
        if self.jac_fn is None:
            raise CapabilityError(
                f"field {self.label or '<anonymous>'} has no exact Jacobian"
            )
        return self.jac_fn(np.asarray(x, dtype=float), float(t))


# -- elementary operations ---------------------------------------------------------


def cfg_velocity(v_uncond, v_cond, scale):
    """Classifier-free-guided velocity ``v_u + scale * (v_c - v_u)``."""
    v_uncond = np.asarray(v_uncond, dtype=float)
    v_cond = np.asarray(v_cond, dtype=float)
    return v_uncond + scale * (v_cond - v_uncond)


def normal_direction(velocity_value, x, state_coef):
    """Normal direction ``a_t * x - v`` implied by a velocity evaluation."""
    return state_coef * np.asarray(x, dtype=float) - np.asarray(velocity_value, float)


def degenerate_threshold(x):
    """Norm threshold below which the normal is treated as zero at ``x``."""
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    return 1e-12 * np.sqrt(dim) * (1.0 + np.linalg.norm(x, axis=-1))


def decompose(residual, normal, eps=0.0):
    """Split ``residual`` into components parallel and orthogonal to ``normal``.

    Raises DegenerateNormalError when ``||normal|| <= eps`` (or is exactly
    zero); the caller decides the fallback policy.  The projection is
    scale-free in ``normal``.
    """
    g = np.asarray(residual, dtype=float)
    n = np.asarray(normal, dtype=float)
    if g.shape != n.shape or g.ndim != 1:
        raise ShapeError(
            f"residual and normal must be equal-length vectors, "
            f"got {g.shape} and {n.shape}"
        )
    nn = float(n @ n)
    if nn == 0.0 or np.sqrt(nn) <= eps:
        raise DegenerateNormalError(
            f"normal direction has norm {np.sqrt(nn)} <= threshold {eps}"
        )
    par = ((g @ n) / nn) * n
    return par, g - par


def _split_with_policy(g, n, x):
    """Batched split; rows with a degenerate normal pass the residual through."""
    nn = np.sum(n * n, axis=-1)
    thresh = degenerate_threshold(x)
    ok = np.sqrt(nn) > thresh
    coef = np.where(ok, np.divide(np.sum(g * n, axis=-1), np.where(ok, nn, 1.0)), 0.0)
    par = coef[..., None] * n
    return par, g - par


def apply_guidance(v_uncond, v_cond, x, t, schedule, config) -> GuidanceBreakdown:
    """Evaluate the configured guidance rule at one state (or a batch).

    Returns the full breakdown; the sampler integrates
    ``v_uncond + breakdown.update``.  For ``GuidanceRule.CFG`` the update
    is ``guidance_scale * residual`` with the decomposition still recorded
    for diagnostics; for the projected rule it is
    ``scale(t) * (residual + (parallel_scale - 1) * parallel)``.
    """
    v_u = np.asarray(v_uncond, dtype=float)
    v_c = np.asarray(v_cond, dtype=float)
    x = np.asarray(x, dtype=float)
    g = v_c - v_u
    state_coef, _ = sched.coefficients(schedule, t)
    src = v_c if config.normal_source is NormalSource.CONDITIONAL else v_u
    n = normal_direction(src, x, state_coef)
    par, orth = _split_with_policy(g, n, x)
    if config.rule is GuidanceRule.CFG:
        scale = float(config.guidance_scale)
        update = scale * g
    else:
        scale = sched.guidance_scale_at(config, t)
        update = scale * (g + (config.parallel_scale - 1.0) * par)
    return GuidanceBreakdown(
        residual=g, parallel=par, orthogonal=orth, normal=n, scale=scale,
        update=update,
    )


# -- exact oracle fields -----------------------------------------------------------


def velocity_field(target, schedule, label="velocity"):
    """Exact marginal velocity of ``target`` as a VectorField."""

    def fn(x, t):
        return mix.velocity(target, schedule, t, x)

    def div_fn(x, t):
        a, b = sched.coefficients(schedule, t)
        return target.dim * a - b * mix.laplacian_log_density(target, schedule, t, x)

    def jac_fn(x, t):
        a, b = sched.coefficients(schedule, t)
        return a * np.eye(target.dim) - b * mix.hessian_log_density(
            target, schedule, t, x
        )

    return VectorField(fn=fn, dim=target.dim, div_fn=div_fn, jac_fn=jac_fn,
                       label=label)


def residual_field(conditional, unconditional, schedule, label="residual"):
    """Unit guidance residual ``v_c - v_u`` with exact divergence/Jacobian.

    The exact divergence uses the Laplacian route
    ``-b_t * (lap log p_c - lap log p_u)``; the exact Jacobian uses the
    mixture Hessians.  Those two come from different identities, which the
    test-suite exploits.
    """
    if conditional.dim != unconditional.dim:
        raise ShapeError("conditional and unconditional targets must share dim")

    def fn(x, t):
        return mix.velocity(conditional, schedule, t, x) - mix.velocity(
            unconditional, schedule, t, x
        )

    def div_fn(x, t):
        _, b = sched.coefficients(schedule, t)
        gap = mix.laplacian_log_density(
            conditional, schedule, t, x
        ) - mix.laplacian_log_density(unconditional, schedule, t, x)
        return -b * gap

    def jac_fn(x, t):
        _, b = sched.coefficients(schedule, t)
        return -b * (
            mix.hessian_log_density(conditional, schedule, t, x)
            - mix.hessian_log_density(unconditional, schedule, t, x)
        )

    return VectorField(fn=fn, dim=conditional.dim, div_fn=div_fn, jac_fn=jac_fn,
                       label=label)


def _pair_geometry(conditional, unconditional, schedule, t, x, normal_source):
    """Shared exact quantities for the parallel/projected fields at one point."""
    a, b = sched.coefficients(schedule, t)
    dim = conditional.dim
    src = conditional if normal_source is NormalSource.CONDITIONAL else unconditional
    h_c = mix.hessian_log_density(conditional, schedule, t, x)
    h_u = mix.hessian_log_density(unconditional, schedule, t, x)
    h_src = h_c if src is conditional else h_u
    s_c = mix.score(conditional, schedule, t, x)
    s_u = mix.score(unconditional, schedule, t, x)
    g = -b * (s_c - s_u)
    n = b * (s_c if src is conditional else s_u)
    jac_g = -b * (h_c - h_u)
    jac_n = b * h_src
    div_g = -b * (np.trace(h_c) - np.trace(h_u))
    div_n = b * np.trace(h_src)
    return a, b, dim, g, n, jac_g, jac_n, div_g, div_n


def _parallel_terms(conditional, unconditional, schedule, t, x, normal_source):
    """Value, gradient pieces, Jacobian and divergence of the parallel field."""
    (_, _, _, g, n, jac_g, jac_n, div_g, div_n) = _pair_geometry(
        conditional, unconditional, schedule, t, x, normal_source
    )
    nn = float(n @ n)
    if nn == 0.0:
        raise DegenerateNormalError("normal direction vanished at this point")
    lam = float(g @ n) / nn
    grad_lam = (jac_g.T @ n + jac_n.T @ g) / nn - (
        2.0 * float(g @ n) / (nn * nn)
    ) * (jac_n.T @ n)
    value = lam * n
    jac = np.outer(n, grad_lam) + lam * jac_n
    div = float(n @ grad_lam) + lam * div_n
    return value, jac, div, div_g, jac_g


def parallel_component_field(conditional, unconditional, schedule,
                             normal_source=NormalSource.CONDITIONAL,
                             label="parallel"):
    """Score-parallel part of the residual, with exact divergence/Jacobian.

    The exact divergence comes from the product rule on ``lam(x) n(x)``
    (a scalar formula), while the exact Jacobian is assembled as a matrix;
    ``trace(jacobian)`` therefore reaches the same number through different
    arithmetic.
    """
    v_c = velocity_field(conditional, schedule)
    v_u = velocity_field(unconditional, schedule)

    def fn(x, t):
        x = np.asarray(x, dtype=float)
        vc, vu = v_c(x, t), v_u(x, t)
        g = vc - vu
        state_coef, _ = sched.coefficients(schedule, t)
        src = vc if normal_source is NormalSource.CONDITIONAL else vu
        n = normal_direction(src, x, state_coef)
        par, _ = _split_with_policy(g, n, x)
        return par

    def div_fn(x, t):
        _, _, div, _, _ = _parallel_terms(
            conditional, unconditional, schedule, t, x, normal_source
        )
        return div

    def jac_fn(x, t):
        _, jac, _, _, _ = _parallel_terms(
            conditional, unconditional, schedule, t, x, normal_source
        )
        return jac

    return VectorField(fn=fn, dim=conditional.dim, div_fn=div_fn, jac_fn=jac_fn,
                       label=label)


def projected_update_field(conditional, unconditional, schedule, config,
                           label="projected-update"):
    """The projected rule's update vector as a field of ``(x, t)``.

    The exact divergence is the trace of the assembled exact Jacobian
    ``scale(t) * (J_g + (parallel_scale - 1) * J_par)`` -- deliberately a
    different arithmetic path from the scalar decomposition identity
    ``scale(t) * (div g - (1 - parallel_scale) * div g_par)``.
    """
    if config.rule is not GuidanceRule.PROJECTED:
        raise ConfigurationError("projected_update_field requires the projected rule")
    v_c = velocity_field(conditional, schedule)
    v_u = velocity_field(unconditional, schedule)

    def fn(x, t):
        x = np.asarray(x, dtype=float)
        vu, vc = v_u(x, t), v_c(x, t)
        return apply_guidance(vu, vc, x, t, schedule, config).update

    def jac_fn(x, t):
        _, jac_par, _, _, jac_g = _parallel_terms(
            conditional, unconditional, schedule, t, x, config.normal_source
        )
        scale = sched.guidance_scale_at(config, t)
        return scale * (jac_g + (config.parallel_scale - 1.0) * jac_par)

    def div_fn(x, t):
        return float(np.trace(jac_fn(x, t)))

    return VectorField(fn=fn, dim=conditional.dim, div_fn=div_fn, jac_fn=jac_fn,
                       label=label)


def score_rotation_field(target, schedule, scale=1.0, axes=(0, 1),
                         label="rotated-score"):
    """``scale * R @ score`` with ``R`` an antisymmetric plane generator.

    For any target the field is divergence-free in combination with the
    score (``div g = scale * tr(R H)`` vanishes for symmetric ``H`` and
    ``<R s, s> = 0``), i.e. it is an exactly conservative guidance field.
    """
    i, j = axes
    dim = target.dim
    if not (0 <= i < dim and 0 <= j < dim and i != j):
        raise ConfigurationError(f"rotation axes {axes} invalid for dim {dim}")
    rot = np.zeros((dim, dim))
    rot[i, j] = -1.0
    rot[j, i] = 1.0

    def fn(x, t):
        s = mix.score(target, schedule, t, x)
        return scale * (s @ rot.T)

    def div_fn(x, t):
        h = mix.hessian_log_density(target, schedule, t, x)
        return scale * float(np.sum(rot * h))

    def jac_fn(x, t):
        h = mix.hessian_log_density(target, schedule, t, x)
        return scale * (rot @ h)

    return VectorField(fn=fn, dim=dim, div_fn=div_fn, jac_fn=jac_fn, label=label)
