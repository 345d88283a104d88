"""Perturbation samplers: naive draws, normalized-ascent, and Euler HMC.

Each sampler returns a :class:`PerturbationBatch` with losses and gradients
evaluated at ``theta + eps_j``. Perturbation j always draws from its own
child stream ``rng.spawn(s)[j]``, so a batch does not depend on the order in
which its members are generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import PerturbationMeasure

__all__ = [
    "SamplerConfig",
    "PerturbationBatch",
    "HmcChain",
    "evaluate_batch",
    "sample_naive",
    "sample_ascent",
    "sample_hmc",
    "hmc_transition",
    "hmc_chain",
    "draw_batch",
]

SAMPLER_KINDS = ("naive", "ascent", "hmc", "dense")
GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``init_scale=None`` means rho/4 for the ascent sampler's initial offsets.
    ``hmc_rounds`` repeats propose/accept that many times per perturbation,
    each round starting from the previous state with fresh momentum.
    ``zero_momentum`` starts every round at p = 0 (the cheap one-step rule).
    ``grid_points`` only matters for ``kind="dense"``.
    """

    kind: str = "ascent"
    s: int = 3
    delta_tilt: float = 0.0
    hmc_steps: int = 1
    hmc_step_size: float = 0.05
    momentum_std: float = 1.0
    accept_reject: bool = False
    hmc_rounds: int = 1
    zero_momentum: bool = False
    init_kind: str = "gaussian"
    init_scale: float | None = None
    grid_points: int = 2001

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.delta_tilt < 0:
            raise ValueError("delta_tilt must be >= 0")
        if self.hmc_steps < 1 or self.hmc_rounds < 1:
            raise ValueError("hmc_steps and hmc_rounds must be >= 1")
        if not (self.hmc_step_size > 0 and self.momentum_std > 0):
            raise ValueError("hmc_step_size and momentum_std must be > 0")
        if self.init_kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown init_kind {self.init_kind!r}")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")


@dataclass
class PerturbationBatch:
    epsilons: np.ndarray
    losses: np.ndarray
    gradients: np.ndarray
    accepted: np.ndarray
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(len(self.losses), dtype=bool)

    def __len__(self):
        return len(self.losses)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.epsilons, axis=1)

    def as_rows(self):
        """Flat rows for the diagnostic CSV dump."""
        for j in range(len(self)):
            yield {
                "j": j,
                "eps_norm": float(self.norms[j]),
                "loss": float(self.losses[j]),
                "grad_norm": float(np.linalg.norm(self.gradients[j])),
                "accepted": int(self.accepted[j]),
            }


def evaluate_batch(landscape, theta, epsilons, accepted=None, flagged=None, batch=None) -> PerturbationBatch:
    theta = landscape._param(theta)
    epsilons = np.atleast_2d(np.asarray(epsilons, dtype=float))
    losses = np.empty(len(epsilons))
    grads = np.empty_like(epsilons)
    for j, eps in enumerate(epsilons):
        losses[j], grads[j] = landscape.value_and_grad(theta + eps, batch)
    if accepted is None:
        accepted = np.ones(len(epsilons), dtype=bool)
    return PerturbationBatch(epsilons, losses, grads, np.asarray(accepted, dtype=bool), flagged)


def sample_naive(measure: PerturbationMeasure, s: int, rng, landscape, theta, batch=None) -> PerturbationBatch:
    if s < 1:
        raise ValueError("s must be >= 1")
    dim = landscape.dim
    eps = np.concatenate([measure.sample(dim, 1, r) for r in rng.spawn(s)])
    return evaluate_batch(landscape, theta, eps, batch=batch)


def _initial_offset(config: SamplerConfig, measure: PerturbationMeasure, dim: int, rng) -> np.ndarray:
    scale = config.init_scale if config.init_scale is not None else measure.radius / 4
    if scale == 0:
        return np.zeros(dim)
    if config.init_kind == "gaussian":
        return scale * rng.normal(size=dim)
    return PerturbationMeasure("uniform_ball", scale).sample(dim, 1, rng)[0]


def sample_ascent(landscape, theta, config: SamplerConfig, measure: PerturbationMeasure, rng,
                  batch=None, offsets=None) -> PerturbationBatch:
    """eps_j = delta_j + rho * g_j / ||g_j|| with g_j the gradient at theta + delta_j.

    No projection back onto the ball. A vanishing gradient leaves
    eps_j = delta_j and marks the sample as not accepted.
    """
    theta = landscape._param(theta)
    rho = measure.radius
    if offsets is None:
        offsets = np.stack([_initial_offset(config, measure, landscape.dim, r) for r in rng.spawn(config.s)])
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    eps = offsets.copy()
    accepted = np.ones(len(eps), dtype=bool)
    for j, d in enumerate(offsets):
        g = landscape.grad(theta + d, batch)
        norm = np.linalg.norm(g)
        if norm < GRAD_FLOOR:
            accepted[j] = False
            continue
        eps[j] = d + rho * g / norm
    return evaluate_batch(landscape, theta, eps, accepted, batch=batch)


def _log_target(landscape, theta, eps, delta, measure, batch):
    return delta * landscape.value(theta + eps, batch) + measure.log_density(eps)[0]


def hmc_transition(landscape, theta, eps0, config: SamplerConfig, measure: PerturbationMeasure, rng,
                   batch=None, p0=None):
    """One Euler-HMC proposal from ``eps0`` plus the optional accept/reject.

    Returns ``(eps, accepted, flagged)``; on rejection ``eps`` is ``eps0``.
    """
    sigma2 = config.momentum_std**2
    delta = config.delta_tilt
    if p0 is None:
        p0 = np.zeros_like(eps0) if config.zero_momentum else config.momentum_std * rng.normal(size=eps0.shape)
    p, eps = p0.astype(float), eps0.astype(float)
    with np.errstate(all="ignore"):
        for _ in range(config.hmc_steps):
            force = delta * landscape.grad(theta + eps, batch) + measure.grad_log_density(eps)[0]
            p = p + config.hmc_step_size * force
            eps = eps + config.hmc_step_size * p / sigma2
    if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(p))):
        return eps0, False, True
    if not config.accept_reject:
        return eps, True, False
    with np.errstate(all="ignore"):
        new = _log_target(landscape, theta, eps, delta, measure, batch) - p @ p / (2 * sigma2)
        old = _log_target(landscape, theta, eps0, delta, measure, batch) - p0 @ p0 / (2 * sigma2)
    if np.isnan(new):
        return eps0, False, True
    log_ratio = min(0.0, new - old)
    if log_ratio == 0.0 or np.log(rng.uniform()) < log_ratio:
        return eps, True, False
    return eps0, False, False


def sample_hmc(landscape, theta, config: SamplerConfig, measure: PerturbationMeasure, rng,
               batch=None, init=None, momenta=None) -> PerturbationBatch:
    """s independent Euler-HMC perturbations targeting exp(delta * L(theta + eps)) mu(eps).

    ``init``/``momenta`` override the random eps_0/p_0 of the first round
    (shape ``(s, dim)``), mainly for hand-traced checks.
    """
    theta = landscape._param(theta)
    dim = landscape.dim
    streams = rng.spawn(config.s)
    eps_out = np.empty((config.s, dim))
    accepted = np.zeros(config.s, dtype=bool)
    flagged = np.zeros(config.s, dtype=bool)
    for j, r in enumerate(streams):
        eps = measure.sample(dim, 1, r)[0] if init is None else np.asarray(init[j], dtype=float)
        for k in range(config.hmc_rounds):
            p0 = None if (momenta is None or k > 0) else np.asarray(momenta[j], dtype=float)
            eps, ok, bad = hmc_transition(landscape, theta, eps, config, measure, r, batch, p0)
            accepted[j] |= ok
            flagged[j] |= bad
        eps_out[j] = eps
    return evaluate_batch(landscape, theta, eps_out, accepted, flagged, batch=batch)


@dataclass
class HmcChain:
    states: np.ndarray
    accepted: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())


def hmc_chain(landscape, theta, config: SamplerConfig, measure: PerturbationMeasure, rng,
              n_samples: int, burn_in: int = 500, thin: int = 1, batch=None) -> HmcChain:
    """A single long chain of Euler-HMC transitions, for checking the target."""
    theta = landscape._param(theta)
    eps = measure.sample(landscape.dim, 1, rng)[0]
    states, acc = [], []
    for i in range(burn_in + n_samples * thin):
        eps, ok, _ = hmc_transition(landscape, theta, eps, config, measure, rng, batch)
        if i >= burn_in and (i - burn_in) % thin == thin - 1:
            states.append(eps.copy())
            acc.append(ok)
    return HmcChain(np.array(states), np.array(acc))


def draw_batch(landscape, theta, config: SamplerConfig, measure: PerturbationMeasure, rng, batch=None):
    if config.kind == "naive":
        return sample_naive(measure, config.s, rng, landscape, theta, batch)
    if config.kind == "ascent":
        return sample_ascent(landscape, theta, config, measure, rng, batch)
    if config.kind == "hmc":
        return sample_hmc(landscape, theta, config, measure, rng, batch)
    raise ValueError(f"sampler kind {config.kind!r} does not draw a finite batch")
