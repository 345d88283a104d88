"""Exponential-tilting primitives.

Every estimator here works on an empirical (possibly weighted) measure over
perturbations: ``losses[j]`` is the loss at the j-th perturbed point and the
optional ``weights`` are its probability masses (uniform when omitted). The
same code therefore serves the s-sample solver and dense quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TiltConfig",
    "LossSample",
    "TiltedAggregate",
    "log_mean_exp",
    "tilted_weights",
    "tilted_gradient",
    "tilted_aggregate",
    "t_weighted_mean",
    "t_weighted_second_moment",
    "t_weighted_variance",
]

SCHEDULES = ("constant", "linear")


@dataclass(frozen=True)
class TiltConfig:
    """Tilt scalar, sampler/aggregation split and an optional t-schedule.

    With ``schedule="linear"`` the tilt moves from ``t_start`` to ``t_end``
    over ``iterations`` steps; ``t`` is then only the nominal value used for
    reporting. ``delta_tilt`` is clipped to the scheduled t at each step so
    that ``0 <= delta <= t`` keeps holding; ``delta_fraction`` instead ties
    delta to a fixed fraction of the scheduled t.
    """

    t: float = 0.0
    delta_tilt: float = 0.0
    schedule: str = "constant"
    t_start: float = 0.0
    t_end: float = 0.0
    iterations: int = 1
    delta_fraction: float | None = None

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"t must be >= 0, got {self.t}")
        if not 0 <= self.delta_tilt <= self.t:
            raise ValueError(f"delta_tilt must lie in [0, t], got {self.delta_tilt} with t={self.t}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "linear":
            if self.t_start < 0 or self.t_end < 0:
                raise ValueError("linear schedule endpoints must be >= 0")
            if self.iterations < 1:
                raise ValueError("linear schedule needs iterations >= 1")
        if self.delta_fraction is not None and not 0 <= self.delta_fraction <= 1:
            raise ValueError("delta_fraction must lie in [0, 1]")

    @classmethod
    def half_split(cls, t: float) -> "TiltConfig":
        """Default recipe: sample with exponent t/2, aggregate with the rest."""
        return cls(t=t, delta_tilt=t / 2, delta_fraction=0.5)

    def t_at(self, step: int) -> float:
        if self.schedule == "constant":
            return self.t
        if self.iterations == 1:
            return self.t_start
        frac = min(max(step, 0), self.iterations - 1) / (self.iterations - 1)
        return self.t_start + frac * (self.t_end - self.t_start)

    def delta_at(self, step: int) -> float:
        if self.delta_fraction is not None:
            return self.delta_fraction * self.t_at(step)
        return min(self.delta_tilt, self.t_at(step))


@dataclass
class LossSample:
    loss: float
    gradient: np.ndarray

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=float)
        if not np.isfinite(self.loss):
            raise ValueError("non-finite loss")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("non-finite gradient")


@dataclass
class TiltedAggregate:
    value: float
    weights: np.ndarray
    gradient: np.ndarray


def _check_losses(losses, weights=None):
    v = np.asarray(losses, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite loss")
    if weights is None:
        return v, None
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != v.shape:
        raise ValueError(f"weights shape {w.shape} does not match losses shape {v.shape}")
    if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValueError("measure weights must be nonnegative with positive total")
    return v, w / w.sum()


def _check_t(t):
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t}")


def _mean(v, w):
    return float(v.mean()) if w is None else float(np.dot(w, v))


def log_mean_exp(losses, t: float, weights=None) -> float:
    """(1/t) log E[exp(t * loss)], exact mean at t = 0.

    The max loss is factored out before exponentiating, and the remaining
    log E[exp(t (loss - max))] is formed with expm1/log1p so that tiny t keeps
    full relative precision. Once t times the loss spread is below 1e-8 the
    two-term expansion mean + t var / 2 is exact to double precision, and it
    stays accurate where t itself is subnormal.
    """
    v, w = _check_losses(losses, weights)
    _check_t(t)
    if t == 0:
        return _mean(v, w)
    top = v.max()
    if t * (top - v.min()) < 1e-8:
        m = _mean(v, w)
        return float(m + 0.5 * t * _mean((v - m) ** 2, w))
    z = t * (v - top)
    if z.min() > -1.0:
        inner = np.log1p(_mean(np.expm1(z), w))
    else:
        inner = np.log(_mean(np.exp(z), w))
    return float(top + inner / t)


def tilted_weights(losses, t: float, weights=None) -> np.ndarray:
    """Normalized weights proportional to exp(t * loss) (times measure mass)."""
    v, w = _check_losses(losses, weights)
    _check_t(t)
    if t == 0:
        if w is None:
            return np.full(v.size, 1.0 / v.size)
        return w
    e = np.exp(t * (v - v.max()))
    if w is not None:
        e = e * w
    return e / e.sum()


def _stack_samples(samples):
    losses = np.array([s.loss for s in samples], dtype=float)
    grads = [np.asarray(s.gradient, dtype=float).ravel() for s in samples]
    if len({g.size for g in grads}) > 1:
        raise ValueError("mismatched gradient lengths")
    return losses, np.stack(grads)


def tilted_gradient(samples, t: float, delta_tilt: float = 0.0, weights=None) -> np.ndarray:
    """Aggregate perturbed gradients with weights exp((t - delta) * loss).

    ``samples`` is either a sequence of :class:`LossSample` or a
    ``(losses, gradients)`` pair of arrays.
    """
    if isinstance(samples, tuple):
        losses, grads = np.asarray(samples[0], dtype=float), np.atleast_2d(np.asarray(samples[1], dtype=float))
        if grads.shape[0] != losses.size:
            raise ValueError("mismatched gradient lengths")
    else:
        losses, grads = _stack_samples(samples)
    if not 0 <= delta_tilt <= t:
        raise ValueError(f"delta_tilt must lie in [0, t], got {delta_tilt} with t={t}")
    exponent = t - delta_tilt
    if exponent == 0 and weights is None:
        _check_losses(losses)
        return grads.mean(axis=0)
    w = tilted_weights(losses, exponent, weights)
    return w @ grads


def tilted_aggregate(losses, gradients, t: float, weights=None) -> TiltedAggregate:
    w = tilted_weights(losses, t, weights)
    return TiltedAggregate(
        value=log_mean_exp(losses, t, weights),
        weights=w,
        gradient=w @ np.atleast_2d(np.asarray(gradients, dtype=float)),
    )


def t_weighted_mean(values, t: float, weights=None) -> float:
    """E[e^{tX} X] / E[e^{tX}] over the empirical distribution of ``values``.

    Negative t is allowed here (it is a plain reweighting of moments).
    """
    v, w = _check_losses(values, weights)
    return float(_signed_weights(v, t, w) @ v)


def t_weighted_second_moment(values, t: float, weights=None) -> float:
    v, w = _check_losses(values, weights)
    return float(_signed_weights(v, t, w) @ (v * v))


def t_weighted_variance(values, t: float, weights=None) -> float:
    # centred form; clamps the tiny negative values cancellation can leave
    v, w = _check_losses(values, weights)
    p = _signed_weights(v, t, w)
    mean = p @ v
    return max(float(p @ (v - mean) ** 2), 0.0)


def _signed_weights(v, t, w):
    if t == 0:
        return np.full(v.size, 1.0 / v.size) if w is None else w
    z = t * v
    e = np.exp(z - z.max())
    if w is not None:
        e = e * w
    return e / e.sum()
