"""Dense-perturbation (quadrature) evaluation of the tilted objective.

These are the "exact" references used by the toy-scale solver and by the
analysis suite in dimensions 1-3.
"""

from __future__ import annotations

import numpy as np

from .measures import PerturbationMeasure, quadrature_nodes
from .tilt import log_mean_exp, tilted_weights

__all__ = ["DenseTilt"]


class DenseTilt:
    """Tilted objective of ``landscape`` under a fixed quadrature of ``measure``."""

    def __init__(self, landscape, measure: PerturbationMeasure, points: int | None = None):
        self.landscape = landscape
        self.measure = measure
        if points is None:
            points = {1: 2001, 2: 201, 3: 41}.get(landscape.dim, 41)
        self.nodes, self.weights = quadrature_nodes(measure, landscape.dim, points)

    def _losses(self, theta, batch=None):
        theta = self.landscape._param(theta)
        return self.landscape.values(theta + self.nodes, batch)

    def value(self, theta, t: float, batch=None) -> float:
        return log_mean_exp(self._losses(theta, batch), t, self.weights)

    def grad(self, theta, t: float, batch=None) -> np.ndarray:
        theta = self.landscape._param(theta)
        pts = theta + self.nodes
        w = tilted_weights(self.landscape.values(pts, batch), t, self.weights)
        return w @ self.landscape.grads(pts, batch)

    def hessian(self, theta, t: float, batch=None):
        """Return ``(full, first_term)`` of the tilted Hessian.

        ``first_term`` is t times the weighted covariance of perturbed
        gradients; the remainder is the weighted mean of perturbed Hessians.
        """
        theta = self.landscape._param(theta)
        pts = theta + self.nodes
        w = tilted_weights(self.landscape.values(pts, batch), t, self.weights)
        G = self.landscape.grads(pts, batch)
        C = G - w @ G
        first = t * ((C * w[:, None]).T @ C)
        avg_hess = np.einsum("m,mij->ij", w, self.landscape.hessians(pts, batch))
        return first + avg_hess, first

    def loss_values(self, theta, batch=None):
        """Losses at every node, with the node probabilities."""
        return self._losses(theta, batch), self.weights
