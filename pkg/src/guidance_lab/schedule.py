"""Interpolation schedule for the probability-flow ODE.

The noise-to-data path is ``x_t = alpha_t * x1 + sigma_t * x0`` with ``x0``
standard normal noise at ``t = 0`` and ``x1`` a data sample at ``t = 1``.
The only built-in schedule is the linear (rectified-flow) one,
``alpha_t = t``, ``sigma_t = 1 - t``.  Time always runs from noise to data;
there is no direction flag.

Velocities and scores are interchangeable along the path:

    v_t(x) = a_t * x - b_t * score_t(x)

with ``a_t = d_alpha / alpha`` and
``b_t = (d_sigma * sigma * alpha - d_alpha * sigma**2) / alpha``.
For the linear schedule ``b_t = -sigma_t / alpha_t``, which is negative, so
the outward normal ``a_t * x - v_t(x) = b_t * score`` is anti-parallel to
the score.

Evaluation times are clamped to ``[t_min, t_max]`` to keep ``a_t`` and the
score finite; asking for a time outside the clamp raises ``DomainError``
rather than silently projecting onto the boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigurationError, DomainError

DEFAULT_T_MIN = 1e-3
DEFAULT_T_MAX = 1.0 - 1e-3


class ScheduleKind(enum.Enum):
    """Supported interpolation paths."""

    LINEAR = "linear"


class SchedulePoint(NamedTuple):
    """Path coefficients and their time derivatives at one time."""

    alpha: float
    sigma: float
    d_alpha: float
    d_sigma: float


class PathCoefficients(NamedTuple):
    """Coefficients of the score-to-velocity conversion at one time.

    ``velocity = state_coef * x - score_coef * score``.
    """

    state_coef: float
    score_coef: float


@dataclass(frozen=True)
class Schedule:
    """An interpolation schedule together with its evaluation clamp."""

    kind: ScheduleKind = ScheduleKind.LINEAR
    t_min: float = DEFAULT_T_MIN
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        if not isinstance(self.kind, ScheduleKind):
            raise ConfigurationError(f"unknown schedule kind: {self.kind!r}")
        if not (0.0 < self.t_min < self.t_max < 1.0):
            raise ConfigurationError(
                f"clamp must satisfy 0 < t_min < t_max < 1, "
                f"got t_min={self.t_min}, t_max={self.t_max}"
            )


def _check_time(schedule: Schedule, t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t < schedule.t_min or t > schedule.t_max:
        raise DomainError(
            f"time {t} outside schedule clamp [{schedule.t_min}, {schedule.t_max}]"
        )
    return t


def evaluate(schedule: Schedule, t: float) -> SchedulePoint:
    """Return (alpha, sigma, d_alpha, d_sigma) at time ``t``.

    Raises DomainError if ``t`` lies outside ``[t_min, t_max]``.
    """
    t = _check_time(schedule, t)
    # Only the linear kind exists; keep the dispatch explicit so adding a
    # schedule forces a decision here.
    if schedule.kind is ScheduleKind.LINEAR:
        return SchedulePoint(alpha=t, sigma=1.0 - t, d_alpha=1.0, d_sigma=-1.0)
    raise ConfigurationError(f"unknown schedule kind: {schedule.kind!r}")


def coefficients(schedule: Schedule, t: float) -> PathCoefficients:
    """Coefficients (state_coef, score_coef) of ``v = a*x - b*score`` at ``t``.

    Computed from the generic schedule outputs so that any new kind
    inherits the conversion for free; for the linear schedule
    ``score_coef`` reduces to ``-sigma/alpha``.
    """
    alpha, sigma, d_alpha, d_sigma = evaluate(schedule, t)
    state_coef = d_alpha / alpha
    score_coef = (d_sigma * sigma * alpha - d_alpha * sigma * sigma) / alpha
    return PathCoefficients(state_coef=state_coef, score_coef=score_coef)


def guidance_scale_at(config, t: float) -> float:
    """Scheduled guidance scale ``max(min_scale, scale * (1-t)**decay)``.

    ``config`` is any object with ``guidance_scale``, ``min_scale`` and
    ``decay_power`` attributes (normally a ``guidance.GuidanceConfig``).
    The scale equals ``guidance_scale`` at ``t = 0`` and decays to the
    floor ``min_scale`` as ``t`` approaches 1.
    """
    scale = float(config.guidance_scale)
    floor = float(config.min_scale)
    decay = float(config.decay_power)
    if decay < 0.0:
        raise ConfigurationError(f"decay_power must be >= 0, got {decay}")
    if floor > scale:
        raise ConfigurationError(
            f"min_scale ({floor}) must not exceed guidance_scale ({scale})"
        )
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"guidance scale is defined on [0, 1], got t={t}")
    return max(floor, scale * (1.0 - t) ** decay)
