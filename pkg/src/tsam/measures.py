"""Perturbation measures and deterministic quadrature rules over them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PerturbationMeasure", "quadrature_nodes", "uniform_ball"]

KINDS = ("uniform_ball", "gaussian", "uniform_cube", "point")


@dataclass(frozen=True)
class PerturbationMeasure:
    """Distribution of parameter perturbations.

    ``scale`` is the radius for ``uniform_ball``/``uniform_cube`` and the
    per-coordinate standard deviation for ``gaussian``. ``point`` is the
    point mass at zero (scale ignored), which turns every tilted objective
    back into the plain loss.
    """

    kind: str = "uniform_ball"
    scale: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "point" and not self.scale > 0:
            raise ValueError(f"measure scale must be > 0, got {self.scale}")

    @property
    def radius(self) -> float:
        return 0.0 if self.kind == "point" else self.scale

    def sample(self, dim: int, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "point":
            return np.zeros((size, dim))
        if self.kind == "gaussian":
            return self.scale * rng.normal(size=(size, dim))
        if self.kind == "uniform_cube":
            return rng.uniform(-self.scale, self.scale, size=(size, dim))
        # direction uniform on the sphere, radius rho * u^(1/dim)
        z = rng.normal(size=(size, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = self.scale * rng.uniform(size=(size, 1)) ** (1.0 / dim)
        return r * z

    def contains(self, eps) -> np.ndarray:
        eps = np.atleast_2d(eps)
        if self.kind == "uniform_ball":
            return np.linalg.norm(eps, axis=1) <= self.scale
        if self.kind == "uniform_cube":
            return np.all(np.abs(eps) <= self.scale, axis=1)
        if self.kind == "point":
            return np.all(eps == 0, axis=1)
        return np.ones(len(eps), dtype=bool)

    def log_density(self, eps) -> np.ndarray:
        """Log-density up to an additive constant; -inf outside the support."""
        eps = np.atleast_2d(eps)
        if self.kind == "gaussian":
            return -0.5 * np.sum(eps * eps, axis=1) / self.scale**2
        return np.where(self.contains(eps), 0.0, -np.inf)

    def grad_log_density(self, eps) -> np.ndarray:
        eps = np.atleast_2d(eps)
        if self.kind == "gaussian":
            return -eps / self.scale**2
        return np.zeros_like(eps)


def uniform_ball(rho: float) -> PerturbationMeasure:
    return PerturbationMeasure("uniform_ball", rho)


def quadrature_nodes(measure: PerturbationMeasure, dim: int, points: int = 2001, gaussian_width: float = 6.0):
    """Tensor-grid nodes and probability weights approximating ``measure``.

    Trapezoid weights per axis; for the ball the grid covers the bounding
    cube and nodes outside the ball get zero mass (they are dropped).
    Returns ``(nodes, weights)`` with ``weights.sum() == 1``.
    """
    if dim > 3:
        raise ValueError("quadrature is only supported for dim <= 3")
    if measure.kind == "point":
        return np.zeros((1, dim)), np.ones(1)
    half = gaussian_width * measure.scale if measure.kind == "gaussian" else measure.scale
    axis = np.linspace(-half, half, points)
    w1 = np.full(points, axis[1] - axis[0])
    w1[[0, -1]] *= 0.5
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w1] * dim), indexing="ij")]), axis=0)
    if measure.kind == "gaussian":
        weights *= np.exp(measure.log_density(nodes))
    elif measure.kind == "uniform_ball" and dim > 1:
        keep = measure.contains(nodes)
        nodes, weights = nodes[keep], weights[keep]
    return nodes, weights / weights.sum()
