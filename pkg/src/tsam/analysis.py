"""Neighborhood sharpness, flatness-preference checks, Hessians, smoothness and the generalization bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .landscapes import GlmLandscape
from .measures import PerturbationMeasure
from .quadrature import DenseTilt
from .tilt import log_mean_exp, t_weighted_mean, t_weighted_variance

__all__ = [
    "SharpnessReport",
    "SharpnessComparison",
    "GapReport",
    "HessianReport",
    "SmoothnessReport",
    "BoundReport",
    "DEFAULT_SIGMAS",
    "neighborhood_stats",
    "t_sharper",
    "t_sharpness_exact",
    "gap_monotonicity",
    "tsam_hessian_lowdim",
    "hessian_topk",
    "hvp",
    "smoothness_estimate",
    "hoeffding_term",
    "generalization_bound",
]

DEFAULT_SIGMAS = (0.01, 0.02, 0.05, 0.1)
MAX_EXCLUDED = 0.01


@dataclass
class SharpnessReport:
    sigmas: np.ndarray
    t_grid: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    t_mean: np.ndarray
    t_variance: np.ndarray
    n_probe: int
    excluded: np.ndarray

    COLUMNS = ("sigma", "t", "mean", "variance", "t_mean", "t_variance", "n_probe", "excluded")

    def rows(self):
        """One row per (sigma, t) cell."""
        for i, s in enumerate(self.sigmas):
            for k, t in enumerate(self.t_grid):
                yield (float(s), float(t), float(self.mean[i]), float(self.variance[i]),
                       float(self.t_mean[i, k]), float(self.t_variance[i, k]), self.n_probe,
                       int(self.excluded[i]))

    def variance_at(self, sigma: float) -> float:
        i = int(np.flatnonzero(np.isclose(self.sigmas, sigma))[0])
        return float(self.variance[i])


def _probe_losses(landscape, theta, eps, batch=None):
    with np.errstate(all="ignore"):
        losses = np.asarray(landscape.values(theta + eps, batch), dtype=float)
    ok = np.isfinite(losses)
    bad = int((~ok).sum())
    if bad > MAX_EXCLUDED * len(losses):
        raise ValueError(f"{bad} of {len(losses)} probe losses are non-finite (more than 1%)")
    return losses[ok], bad


def neighborhood_stats(landscape, theta, sigmas=DEFAULT_SIGMAS, n_probe: int = 10_000, t_grid=(0.0,),
                       rng=None, kind: str = "gaussian", batch=None) -> SharpnessReport:
    """Monte Carlo moments of L(theta + eps), eps ~ measure(kind, sigma), for each sigma.

    Non-finite probe losses are dropped and counted; more than 1% is an error.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be >= 100")
    rng = np.random.default_rng(0) if rng is None else rng
    theta = landscape._param(theta)
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    mean, var = np.empty(len(sigmas)), np.empty(len(sigmas))
    tm, tv = np.empty((len(sigmas), len(t_grid))), np.empty((len(sigmas), len(t_grid)))
    excluded = np.zeros(len(sigmas), dtype=int)
    for i, (s, r) in enumerate(zip(sigmas, rng.spawn(len(sigmas)))):
        eps = PerturbationMeasure(kind, s).sample(landscape.dim, n_probe, r)
        losses, excluded[i] = _probe_losses(landscape, theta, eps, batch)
        mean[i] = losses.mean()
        var[i] = losses.var()
        for k, t in enumerate(t_grid):
            tm[i, k] = t_weighted_mean(losses, t)
            tv[i, k] = t_weighted_variance(losses, t)
    return SharpnessReport(sigmas, t_grid, mean, var, tm, tv, n_probe, excluded)


@dataclass
class SharpnessComparison:
    sharper: bool
    margin: float
    stderr: float

    def __bool__(self):
        return self.sharper


def t_sharper(landscape, theta1, theta2, t: float, measure: PerturbationMeasure, n_probe: int = 10_000,
              rng=None, n_boot: int = 200, batch=None) -> SharpnessComparison:
    """Is theta1 t-sharper than theta2? Common random perturbations for both points.

    ``margin`` is the difference of t-weighted variances; ``stderr`` its
    bootstrap standard error over ``n_boot`` resamples of the perturbations.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be >= 100")
    rng = np.random.default_rng(0) if rng is None else rng
    draw_rng, boot_rng = rng.spawn(2)
    eps = measure.sample(landscape.dim, n_probe, draw_rng)
    with np.errstate(all="ignore"):
        l1 = np.asarray(landscape.values(landscape._param(theta1) + eps, batch), dtype=float)
        l2 = np.asarray(landscape.values(landscape._param(theta2) + eps, batch), dtype=float)
    ok = np.isfinite(l1) & np.isfinite(l2)
    if (~ok).sum() > MAX_EXCLUDED * n_probe:
        raise ValueError("more than 1% of probe losses are non-finite")
    l1, l2 = l1[ok], l2[ok]
    margin = t_weighted_variance(l1, t) - t_weighted_variance(l2, t)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = boot_rng.integers(0, len(l1), size=len(l1))
        boots[b] = t_weighted_variance(l1[idx], t) - t_weighted_variance(l2[idx], t)
    return SharpnessComparison(bool(margin > 0), float(margin), float(boots.std(ddof=1)))


def t_sharpness_exact(landscape, theta, t: float, measure: PerturbationMeasure, points=None) -> float:
    """t-weighted variance of L(theta + eps) by quadrature over the measure (dim <= 3)."""
    losses, w = DenseTilt(landscape, measure, points).loss_values(theta)
    return t_weighted_variance(losses, t, w)


@dataclass
class GapReport:
    t_grid: np.ndarray
    gap: np.ndarray
    slopes: np.ndarray
    sharper: np.ndarray
    precondition: bool
    status: str

    COLUMNS = ("t", "gap", "slope", "t_sharper")

    def rows(self):
        for t, g, s, ok in zip(self.t_grid, self.gap, self.slopes, self.sharper):
            yield float(t), float(g), float(s), int(ok)

    @property
    def min_slope(self) -> float:
        return float(self.slopes.min())


def gap_monotonicity(landscape: GlmLandscape, theta1, theta2, t_grid, measure: PerturbationMeasure,
                     points=None, subdivisions: int = 20) -> GapReport:
    """Gap g^t = L^t(theta1) - L^t(theta2) by quadrature, with slopes in t.

    Slopes are central differences on ``t_grid`` (one-sided at its ends).
    The flatness-preference result needs theta1 to be t'-sharper for every
    t' up to the largest t, so the precondition is checked on the grid and
    ``subdivisions`` points inside each grid interval. When it fails the
    status is ``"not t-sharper"`` and callers should skip the slope check.
    """
    if not isinstance(landscape, GlmLandscape):
        raise TypeError("gap_monotonicity needs a GlmLandscape")
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if len(t_grid) < 2:
        raise ValueError("t_grid needs at least two values")
    d1, w = DenseTilt(landscape, measure, points).loss_values(theta1)
    d2, _ = DenseTilt(landscape, measure, points).loss_values(theta2)
    gap = np.array([log_mean_exp(d1, t, w) - log_mean_exp(d2, t, w) for t in t_grid])
    slopes = np.gradient(gap, t_grid, edge_order=1)
    sharper = np.array([t_weighted_variance(d1, t, w) > t_weighted_variance(d2, t, w) for t in t_grid])
    dense = np.unique(np.concatenate([np.linspace(a, b, subdivisions + 2) for a, b in zip(t_grid[:-1], t_grid[1:])]))
    ok = all(t_weighted_variance(d1, t, w) > t_weighted_variance(d2, t, w) for t in dense)
    return GapReport(t_grid, gap, slopes, sharper, bool(ok), "ok" if ok else "not t-sharper")


def tsam_hessian_lowdim(landscape, theta, t: float, measure: PerturbationMeasure, points=None):
    """Hessian of the tilted objective by quadrature: ``(full, first_term)``."""
    if landscape.dim > 3:
        raise ValueError("tsam_hessian_lowdim supports dim <= 3 only")
    return DenseTilt(landscape, measure, points).hessian(theta, t)


def hvp(landscape, theta, v, batch=None) -> np.ndarray:
    """Hessian-vector product by central differences of gradients, h = 1e-4 / ||v||."""
    h = 1e-4 / np.linalg.norm(v)
    return (landscape.grad(theta + h * v, batch) - landscape.grad(theta - h * v, batch)) / (2 * h)


@dataclass
class HessianReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    tol: float = field(default=1e-6)

    @property
    def all_converged(self) -> bool:
        return bool(self.converged.all())


def hessian_topk(landscape, theta, k: int = 5, tol: float = 1e-6, max_iter: int = 1000, rng=None,
                 batch=None) -> HessianReport:
    """Top-k eigenpairs (largest algebraic value first) by power iteration with deflation.

    Each power iteration runs on H - sum_i lambda_i v_i v_i^T. Iterating on
    the plain deflated operator finds the largest-magnitude eigenvalue, so
    when that is negative we shift by it and iterate again to reach the top
    of the spectrum. A final Rayleigh-Ritz step on the span of the k vectors
    removes the error each deflation passes on to the next pair.
    Non-converged pairs are reported with ``converged=False``.
    """
    theta = landscape._param(theta)
    dim = landscape.dim
    if not 1 <= k <= dim:
        raise ValueError("k must lie in [1, dim]")
    rng = np.random.default_rng(0) if rng is None else rng
    inner_tol = 0.1 * tol
    vals, vecs, iters = [], [], []

    def H(v):
        return hvp(landscape, theta, v, batch)

    def deflated(v, shift):
        out = H(v) - shift * v
        for lam, u in zip(vals, vecs):
            out -= lam * (u @ v) * u
        for u in vecs:
            out -= (u @ out) * u
        return out

    def power(shift):
        v = rng.normal(size=dim)
        for u in vecs:
            v -= (u @ v) * u
        v /= np.linalg.norm(v)
        w = deflated(v, shift)
        for it in range(1, max_iter + 1):
            lam = float(v @ w)
            if np.linalg.norm(w - lam * v) <= inner_tol * max(abs(lam + shift), 1e-12):
                return lam + shift, v, it
            nw = np.linalg.norm(w)
            if nw == 0:
                return shift, v, it
            v = w / nw
            w = deflated(v, shift)
        return float(v @ w) + shift, v, max_iter

    for _ in range(k):
        lam, v, it = power(0.0)
        if lam < 0:
            lam, v, it2 = power(lam)
            it += it2
        vals.append(lam)
        vecs.append(v)
        iters.append(it)

    V, _ = np.linalg.qr(np.array(vecs).T)
    HV = np.stack([H(V[:, i]) for i in range(k)], axis=1)
    ritz, Y = np.linalg.eigh(0.5 * (V.T @ HV + HV.T @ V))
    order = np.argsort(ritz)[::-1]
    ritz, Y = ritz[order], Y[:, order]
    V, HV = V @ Y, HV @ Y
    res = np.linalg.norm(HV - V * ritz, axis=0)
    return HessianReport(
        ritz, V.T, np.array(iters), res, res <= tol * np.maximum(np.abs(ritz), 1e-12), tol,
    )


@dataclass
class SmoothnessReport:
    t_grid: np.ndarray
    beta: np.ndarray

    COLUMNS = ("t", "beta", "beta_over_t")

    @property
    def beta_over_t(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.t_grid > 0, self.beta / np.where(self.t_grid > 0, self.t_grid, 1), np.nan)

    def rows(self):
        for t, b, r in zip(self.t_grid, self.beta, self.beta_over_t):
            yield float(t), float(b), float(r)


def smoothness_estimate(landscape, t_grid, theta_grid, measure: PerturbationMeasure, points=None) -> SmoothnessReport:
    """beta(t) = max over adjacent theta pairs of |grad L^t(a) - grad L^t(b)| / |a - b| (1-D)."""
    if landscape.dim != 1:
        raise ValueError("smoothness_estimate needs a 1-D landscape")
    theta_grid = np.sort(np.asarray(theta_grid, dtype=float))
    dense = DenseTilt(landscape, measure, points)
    betas = []
    for t in t_grid:
        g = np.array([dense.grad([x], t)[0] for x in theta_grid])
        betas.append(np.max(np.abs(np.diff(g)) / np.diff(theta_grid)))
    return SmoothnessReport(np.asarray(t_grid, dtype=float), np.array(betas))


def hoeffding_term(M: float, n: int, delta_conf: float) -> float:
    return M * math.sqrt(math.log(2 / delta_conf) / (2 * n))


@dataclass
class BoundReport:
    M: float
    n: int
    delta_conf: float
    t: float
    hoeffding: float
    variance_term: float
    c: float
    lhs: float

    @property
    def rhs(self) -> float:
        return self.hoeffding + self.c - self.variance_term

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    def summary(self) -> dict:
        return {
            "M": self.M, "n": self.n, "delta_conf": self.delta_conf, "t": self.t,
            "hoeffding": self.hoeffding, "variance_term": self.variance_term, "c": self.c,
            "rhs": self.rhs, "lhs": self.lhs, "holds": self.holds,
        }


def generalization_bound(train, theta, measure: PerturbationMeasure, t: float, M: float, delta_conf: float,
                         heldout, n_eps: int = 2000, rng=None) -> BoundReport:
    """Terms of the population-vs-tilted-empirical risk bound, estimated over eps.

    lhs = heldout loss at theta (population proxy) - empirical tilted risk.
    rhs = hoeffding + c - var_eps(e^{t L}) / (2 t e^{2 t M}), with
    c = L(theta) - E_eps L(theta + eps). Losses must lie in [0, M].
    """
    if not M > 0:
        raise ValueError("M must be > 0")
    if not 0 < delta_conf < 1:
        raise ValueError("delta_conf must lie in (0, 1)")
    if t < 0:
        raise ValueError("t must be >= 0")
    rng = np.random.default_rng(0) if rng is None else rng
    theta = train._param(theta)
    eps = measure.sample(train.dim, n_eps, rng)
    losses = np.asarray(train.values(theta + eps), dtype=float)
    base = train.value(theta)
    pop = heldout.value(theta)
    for v in (losses.min(), losses.max(), base, pop):
        if not 0 <= v <= M:
            raise ValueError(f"bound precondition violated: loss {v} outside [0, {M}]")
    if t == 0:
        var_term = 0.0
    else:
        # var(e^{tL}) / e^{2tM} = var(e^{t(L - M)}), which cannot overflow
        var_term = float(np.var(np.exp(t * (losses - M)))) / (2 * t)
    return BoundReport(
        M, int(train.n), delta_conf, t,
        hoeffding_term(M, train.n, delta_conf), var_term, base - float(losses.mean()),
        pop - log_mean_exp(losses, t),
    )
