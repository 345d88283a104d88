"""ERM-SGD, SAM and tilted-SAM training loops."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .measures import PerturbationMeasure
from .quadrature import DenseTilt
from .samplers import PerturbationBatch, SamplerConfig, draw_batch, evaluate_batch
from .tilt import TiltConfig, tilted_gradient

__all__ = [
    "SGD",
    "TrainConfig",
    "TrajectoryRecord",
    "TrainingDiverged",
    "step_erm",
    "step_sam",
    "step_tsam",
    "train",
    "step_rng",
]

OPTIMIZERS = ("erm", "sam", "tsam")


class TrainingDiverged(RuntimeError):
    pass


class SGD:
    """theta <- theta - lr * v,  v <- momentum * v + (g + weight_decay * theta)."""

    def __init__(self, momentum: float = 0.0, weight_decay: float = 0.0):
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffer = None

    def step(self, theta, grad, lr):
        d = grad + self.weight_decay * theta if self.weight_decay else grad
        if self.momentum:
            self.buffer = d if self.buffer is None else self.momentum * self.buffer + d
            d = self.buffer
        return theta - lr * d


def _check_finite(g, what, step):
    if not np.all(np.isfinite(g)):
        raise TrainingDiverged(f"non-finite {what} at step {step}")


def step_erm(landscape, theta, lr, batch=None, sgd: SGD | None = None, step: int = 0):
    g = landscape.grad(theta, batch)
    _check_finite(g, "gradient", step)
    return (sgd or SGD()).step(theta, g, lr), g


def step_sam(landscape, theta, lr, rho, batch=None, sgd: SGD | None = None, step: int = 0):
    """Ascend rho along the normalised gradient, then descend with the gradient there.

    rho = 0 or a vanishing gradient falls back to the ERM step.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    g = landscape.grad(theta, batch)
    _check_finite(g, "gradient", step)
    norm = np.linalg.norm(g)
    if rho == 0 or norm < 1e-12:
        return (sgd or SGD()).step(theta, g, lr), g
    g_adv = landscape.grad(theta + rho * g / norm, batch)
    _check_finite(g_adv, "perturbed gradient", step)
    return (sgd or SGD()).step(theta, g_adv, lr), g_adv


def step_tsam(landscape, theta, lr, tilt: TiltConfig, sampler: SamplerConfig, measure: PerturbationMeasure,
              rng, batch=None, sgd: SGD | None = None, step: int = 0,
              previous: PerturbationBatch | None = None, dense: DenseTilt | None = None):
    """One tilted update. Returns ``(theta_new, direction, perturbations)``.

    For ``sampler.kind == "dense"`` the direction is the quadrature gradient
    of the tilted objective and ``perturbations`` is None. Otherwise s
    perturbations are drawn targeting exp(delta L) and aggregated with
    weights exp((t - delta) L). If every HMC proposal was rejected, the
    previous step's perturbations are re-evaluated at the current theta.
    """
    t = tilt.t_at(step)
    if sampler.kind == "dense":
        dense = dense or DenseTilt(landscape, measure, sampler.grid_points)
        g = dense.grad(theta, t, batch)
        _check_finite(g, "tilted gradient", step)
        return (sgd or SGD()).step(theta, g, lr), g, None
    delta = tilt.delta_at(step)
    if sampler.delta_tilt != delta:
        sampler = _with_delta(sampler, delta)
    pert = draw_batch(landscape, theta, sampler, measure, rng, batch)
    if sampler.kind == "hmc" and not pert.accepted.any() and previous is not None:
        pert = evaluate_batch(landscape, theta, previous.epsilons, np.zeros(len(previous), dtype=bool),
                              np.ones(len(previous), dtype=bool), batch)
    if not np.all(np.isfinite(pert.losses)):
        raise TrainingDiverged(f"non-finite perturbed loss at step {step}")
    g = tilted_gradient((pert.losses, pert.gradients), t, delta)
    _check_finite(g, "tilted gradient", step)
    return (sgd or SGD()).step(theta, g, lr), g, pert


def _with_delta(sampler, delta):
    from dataclasses import replace

    return replace(sampler, delta_tilt=delta)


@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    ``measure_kind`` with radius ``rho`` defines the perturbation measure for
    TSAM (``"point"`` gives the point mass at zero). ``batch_size=None``
    means full batch. ``record_every=0`` keeps only the final parameters.
    """

    optimizer: str = "erm"
    learning_rate: float = 0.01
    iterations: int = 100
    batch_size: int | None = None
    rho: float = 0.05
    tilt: TiltConfig = field(default_factory=TiltConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    measure_kind: str = "uniform_ball"
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    clamp: tuple | None = None
    record_every: int = 1

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def measure(self) -> PerturbationMeasure:
        if self.measure_kind == "point" or self.rho == 0:
            return PerturbationMeasure("point", 0.0)
        return PerturbationMeasure(self.measure_kind, self.rho)


@dataclass
class TrajectoryRecord:
    steps: np.ndarray
    t: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    wall_ms: np.ndarray
    snapshots: dict
    final_theta: np.ndarray
    reused_steps: int = 0

    COLUMNS = ("step", "t", "train_loss", "grad_norm", "theta0")

    def rows(self):
        """Trajectory CSV rows; ``theta0`` is the first coordinate where snapshotted."""
        for i, s in enumerate(self.steps):
            snap = self.snapshots.get(int(s))
            yield (int(s), float(self.t[i]), float(self.loss[i]), float(self.grad_norm[i]),
                   "" if snap is None else float(snap[0]))

    def same_as(self, other: "TrajectoryRecord") -> bool:
        return (
            np.array_equal(self.loss, other.loss)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.grad_norm, other.grad_norm)
            and np.array_equal(self.final_theta, other.final_theta)
            and self.snapshots.keys() == other.snapshots.keys()
            and all(np.array_equal(self.snapshots[k], other.snapshots[k]) for k in self.snapshots)
        )


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent stream for one step of one run."""
    return np.random.default_rng([seed, step])


def init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2**32 - 1])


def train(landscape, config: TrainConfig, theta0=None, progress=None) -> TrajectoryRecord:
    """Run ``config.iterations`` steps of the configured optimizer from ``theta0``.

    Without ``theta0`` the landscape's ``init(rng)`` is used (seeded from
    ``config.seed``), falling back to zeros.
    """
    if theta0 is None:
        theta0 = landscape.init(init_rng(config.seed)) if hasattr(landscape, "init") else np.zeros(landscape.dim)
    theta = landscape._param(theta0).copy()
    sgd = SGD(config.momentum, config.weight_decay)
    measure = config.measure
    dense = None
    if config.optimizer == "tsam" and config.sampler.kind == "dense":
        dense = DenseTilt(landscape, measure, config.sampler.grid_points)
    n = getattr(landscape, "n", None)
    T = config.iterations
    ts, losses, norms, wall = np.empty(T), np.empty(T), np.empty(T), np.empty(T)
    snapshots = {}
    previous = None
    reused = 0
    for i in range(T):
        start = time.perf_counter()
        rng = step_rng(config.seed, i)
        batch_rng, sampler_rng = rng.spawn(2)
        batch = None
        if n is not None and config.batch_size is not None and config.batch_size < n:
            batch = np.sort(batch_rng.choice(n, size=config.batch_size, replace=False))
        if config.record_every and i % config.record_every == 0:
            snapshots[i] = theta.copy()
        losses[i] = landscape.value(theta, batch)
        if not np.isfinite(losses[i]):
            raise TrainingDiverged(f"non-finite training loss at step {i}")
        ts[i] = config.tilt.t_at(i) if config.optimizer == "tsam" else 0.0
        if config.optimizer == "erm":
            theta, g = step_erm(landscape, theta, config.learning_rate, batch, sgd, i)
        elif config.optimizer == "sam":
            theta, g = step_sam(landscape, theta, config.learning_rate, config.rho, batch, sgd, i)
        else:
            theta, g, pert = step_tsam(landscape, theta, config.learning_rate, config.tilt, config.sampler,
                                       measure, sampler_rng, batch, sgd, i, previous, dense)
            if pert is not None:
                reused += int(pert.flagged.all() and not pert.accepted.any())
                previous = pert
        if config.clamp is not None:
            theta = np.clip(theta, config.clamp[0], config.clamp[1])
        norms[i] = np.linalg.norm(g)
        wall[i] = 1e3 * (time.perf_counter() - start)
        if progress is not None:
            progress(i, theta)
    return TrajectoryRecord(np.arange(T), ts, losses, norms, wall, snapshots, theta, reused)
