"""Differentiable objectives: 1-D toys, GLMs, logistic regression and a small MLP.

Every landscape maps a flat parameter vector to a scalar loss. Dataset-backed
landscapes take an optional ``batch`` (row indices) on each call instead of
holding an "active batch" attribute, so one instance can be shared by
concurrent runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Landscape",
    "Quadratic",
    "Linear",
    "Constant",
    "ToySine1D",
    "ToyPiecewise1D",
    "QuadraticLink",
    "LogisticLink",
    "GlmLandscape",
    "LogisticRegression",
    "MlpLandscape",
    "fd_grad",
    "fd_hessian",
]


class Landscape:
    """Base class. Subclasses implement ``value`` and ``grad``.

    ``values``/``grads`` evaluate a stack of parameter vectors (shape
    ``(m, dim)``); the defaults loop, vectorised subclasses override them.
    """

    dim: int = 1

    def _param(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = theta.reshape(1)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameter of length {self.dim}, got shape {theta.shape}")
        return theta

    def _params(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim == 1 and self.dim == 1:
            thetas = thetas[:, None]
        if thetas.ndim != 2 or thetas.shape[1] != self.dim:
            raise ValueError(f"expected parameters of shape (m, {self.dim}), got {thetas.shape}")
        return thetas

    def value(self, theta, batch=None) -> float:
        raise NotImplementedError

    def grad(self, theta, batch=None) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, theta, batch=None):
        return self.value(theta, batch), self.grad(theta, batch)

    def values(self, thetas, batch=None) -> np.ndarray:
        return np.array([self.value(th, batch) for th in self._params(thetas)])

    def grads(self, thetas, batch=None) -> np.ndarray:
        return np.stack([self.grad(th, batch) for th in self._params(thetas)])

    def hessian(self, theta, batch=None) -> np.ndarray:
        return fd_hessian(self, theta, batch=batch)

    def hessians(self, thetas, batch=None) -> np.ndarray:
        return np.stack([self.hessian(th, batch) for th in self._params(thetas)])


def fd_grad(landscape: Landscape, theta, h: float = 1e-5, batch=None) -> np.ndarray:
    """Central finite-difference gradient; test oracle only."""
    if not h > 0:
        raise ValueError("h must be > 0")
    theta = landscape._param(theta)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (landscape.value(theta + e, batch) - landscape.value(theta - e, batch)) / (2 * h)
    return out


def fd_hessian(landscape: Landscape, theta, h: float = 1e-5, batch=None) -> np.ndarray:
    theta = landscape._param(theta)
    d = theta.size
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[:, i] = (landscape.grad(theta + e, batch) - landscape.grad(theta - e, batch)) / (2 * h)
    return 0.5 * (H + H.T)


class Quadratic(Landscape):
    """0.5 (theta - c)^T H (theta - c) + offset."""

    def __init__(self, hessian, center=None, offset: float = 0.0):
        self.H = np.atleast_2d(np.asarray(hessian, dtype=float))
        self.dim = self.H.shape[0]
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float).reshape(self.dim)
        self.offset = float(offset)

    def value(self, theta, batch=None):
        r = self._param(theta) - self.center
        return float(0.5 * r @ self.H @ r + self.offset)

    def grad(self, theta, batch=None):
        return self.H @ (self._param(theta) - self.center)

    def values(self, thetas, batch=None):
        r = self._params(thetas) - self.center
        return 0.5 * np.einsum("mi,ij,mj->m", r, self.H, r) + self.offset

    def grads(self, thetas, batch=None):
        return (self._params(thetas) - self.center) @ self.H.T

    def hessian(self, theta, batch=None):
        return self.H.copy()

    def hessians(self, thetas, batch=None):
        return np.broadcast_to(self.H, (len(self._params(thetas)), self.dim, self.dim)).copy()


class Linear(Landscape):
    def __init__(self, slope, offset: float = 0.0):
        self.slope = np.atleast_1d(np.asarray(slope, dtype=float))
        self.dim = self.slope.size
        self.offset = float(offset)

    def value(self, theta, batch=None):
        return float(self.slope @ self._param(theta) + self.offset)

    def grad(self, theta, batch=None):
        self._param(theta)
        return self.slope.copy()

    def values(self, thetas, batch=None):
        return self._params(thetas) @ self.slope + self.offset

    def grads(self, thetas, batch=None):
        return np.tile(self.slope, (len(self._params(thetas)), 1))

    def hessian(self, theta, batch=None):
        return np.zeros((self.dim, self.dim))

    def hessians(self, thetas, batch=None):
        return np.zeros((len(self._params(thetas)), self.dim, self.dim))


class Constant(Linear):
    def __init__(self, c: float, dim: int = 1):
        super().__init__(np.zeros(dim), offset=c)


class ToySine1D(Landscape):
    """2 sin(4 pi x) / (2x) + 0.005 (x - 1)^2; the interesting region is x in (0.2, 2.5)."""

    dim = 1
    domain = (0.2, 2.5)
    clamp = (0.21, 2.49)

    @staticmethod
    def f(x):
        return 2 * np.sin(4 * np.pi * x) / (2 * x) + 0.005 * (x - 1) ** 2

    @staticmethod
    def df(x):
        w = 4 * np.pi
        return (w * x * np.cos(w * x) - np.sin(w * x)) / x**2 + 0.01 * (x - 1)

    @staticmethod
    def d2f(x):
        w = 4 * np.pi
        s, c = np.sin(w * x), np.cos(w * x)
        return -w * w * s / x - 2 * w * c / x**2 + 2 * s / x**3 + 0.01

    def value(self, theta, batch=None):
        return float(self.f(self._param(theta)[0]))

    def grad(self, theta, batch=None):
        return np.array([self.df(self._param(theta)[0])])

    def values(self, thetas, batch=None):
        return self.f(self._params(thetas)[:, 0])

    def grads(self, thetas, batch=None):
        return self.df(self._params(thetas))

    def hessian(self, theta, batch=None):
        return np.array([[self.d2f(self._param(theta)[0])]])

    def hessians(self, thetas, batch=None):
        return self.d2f(self._params(thetas))[:, :, None]


class ToyPiecewise1D(Landscape):
    """|x - 1| - 0.01 for x <= 2, (x - 3)^2 otherwise.

    Subgradient 0 at the kink x = 1; at x = 2 the left branch is used.
    """

    dim = 1

    @staticmethod
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 2, np.abs(x - 1) - 0.01, (x - 3) ** 2)

    @staticmethod
    def df(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 2, np.sign(x - 1), 2 * (x - 3))

    def value(self, theta, batch=None):
        return float(self.f(self._param(theta)[0]))

    def grad(self, theta, batch=None):
        return np.array([float(self.df(self._param(theta)[0]))])

    def values(self, thetas, batch=None):
        return self.f(self._params(thetas)[:, 0])

    def grads(self, thetas, batch=None):
        return self.df(self._params(thetas))

    def hessian(self, theta, batch=None):
        x = self._param(theta)[0]
        return np.array([[0.0 if x <= 2 else 2.0]])


class QuadraticLink:
    name = "quadratic"

    @staticmethod
    def value(theta):
        return 0.5 * np.sum(theta * theta, axis=-1)

    @staticmethod
    def grad(theta):
        return np.array(theta, dtype=float)

    @staticmethod
    def hess_diag(theta):
        return np.ones_like(theta)


class LogisticLink:
    name = "logistic"

    @staticmethod
    def value(theta):
        return np.sum(np.logaddexp(0.0, theta), axis=-1)

    @staticmethod
    def grad(theta):
        return 0.5 * (1 + np.tanh(0.5 * np.asarray(theta, dtype=float)))

    @staticmethod
    def hess_diag(theta):
        s = LogisticLink.grad(theta)
        return s * (1 - s)


LINKS = {"quadratic": QuadraticLink, "logistic": LogisticLink}


class GlmLandscape(Landscape):
    """A(theta) - theta^T t_bar with a separable convex log-partition A."""

    def __init__(self, link, t_bar):
        self.link = LINKS[link] if isinstance(link, str) else link
        self.t_bar = np.atleast_1d(np.asarray(t_bar, dtype=float))
        self.dim = self.t_bar.size

    @classmethod
    def from_statistics(cls, link, stats):
        """Build from per-sample sufficient statistics T(x_i), shape (n, dim)."""
        stats = np.atleast_2d(np.asarray(stats, dtype=float))
        return cls(link, stats.mean(axis=0))

    def value(self, theta, batch=None):
        th = self._param(theta)
        return float(self.link.value(th) - th @ self.t_bar)

    def grad(self, theta, batch=None):
        return self.link.grad(self._param(theta)) - self.t_bar

    def values(self, thetas, batch=None):
        th = self._params(thetas)
        return self.link.value(th) - th @ self.t_bar

    def grads(self, thetas, batch=None):
        return self.link.grad(self._params(thetas)) - self.t_bar

    def hessian(self, theta, batch=None):
        return np.diag(self.link.hess_diag(self._param(theta)))

    def hessians(self, thetas, batch=None):
        d = self.link.hess_diag(self._params(thetas))
        return d[:, :, None] * np.eye(self.dim)


class _DataLandscape(Landscape):
    def _rows(self, batch):
        if batch is None:
            return self.X, self.y
        return self.X[batch], self.y[batch]

    @property
    def n(self) -> int:
        return len(self.y)


class LogisticRegression(_DataLandscape):
    """Binary logistic loss on labels in {0, 1}, optionally clamped at ``clip``.

    Per-example losses are clamped (gradient zeroed where the clamp is
    active) so that 0 <= loss <= clip.
    """

    def __init__(self, X, y, clip: float | None = None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y).astype(int)
        self.dim = self.X.shape[1]
        self.sign = 2.0 * self.y - 1.0
        self.clip = clip

    def example_losses(self, theta, batch=None):
        X, _ = self._rows(batch)
        s = self.sign if batch is None else self.sign[batch]
        return np.logaddexp(0.0, -s * (X @ self._param(theta)))

    def clamp_fraction(self, theta, batch=None) -> float:
        if self.clip is None:
            return 0.0
        return float(np.mean(self.example_losses(theta, batch) > self.clip))

    def value(self, theta, batch=None):
        losses = self.example_losses(theta, batch)
        if self.clip is not None:
            losses = np.minimum(losses, self.clip)
        return float(losses.mean())

    def grad(self, theta, batch=None):
        X, _ = self._rows(batch)
        s = self.sign if batch is None else self.sign[batch]
        m = s * (X @ self._param(theta))
        coef = -s * 0.5 * (1 - np.tanh(0.5 * m))
        if self.clip is not None:
            coef = np.where(np.logaddexp(0.0, -m) > self.clip, 0.0, coef)
        return X.T @ coef / len(s)

    def values(self, thetas, batch=None):
        X, _ = self._rows(batch)
        s = self.sign if batch is None else self.sign[batch]
        losses = np.logaddexp(0.0, -(self._params(thetas) @ X.T) * s)
        if self.clip is not None:
            losses = np.minimum(losses, self.clip)
        return losses.mean(axis=1)

    def hessian(self, theta, batch=None):
        if self.clip is not None:
            return fd_hessian(self, theta, batch=batch)
        X, _ = self._rows(batch)
        p = 0.5 * (1 + np.tanh(0.5 * (X @ self._param(theta))))
        return (X * (p * (1 - p))[:, None]).T @ X / len(X)


class MlpLandscape(_DataLandscape):
    """Tanh MLP with softmax cross-entropy and label smoothing; manual backprop.

    Parameters are one flat vector laid out as W1, b1, W2, b2, ... with
    ``W_k`` stored (fan_in, fan_out) row-major.
    """

    def __init__(self, X, y, classes: int, hidden=(32, 32), label_smoothing: float = 0.1):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y).astype(int)
        self.classes = int(classes)
        self.widths = (self.X.shape[1], *hidden, self.classes)
        self.label_smoothing = float(label_smoothing)
        self.shapes = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.dim = sum(self.sizes)
        self._targets = self._smoothed(self.y)

    def with_data(self, X, y) -> "MlpLandscape":
        return MlpLandscape(X, y, self.classes, self.widths[1:-1], self.label_smoothing)

    def _smoothed(self, y):
        T = np.full((len(y), self.classes), self.label_smoothing / self.classes)
        T[np.arange(len(y)), y] += 1 - self.label_smoothing
        return T

    def unflatten(self, theta):
        out, i = [], 0
        for shape, size in zip(self.shapes, self.sizes):
            out.append(theta[..., i:i + size].reshape(theta.shape[:-1] + shape))
            i += size
        return out

    def init(self, rng) -> np.ndarray:
        parts = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def _forward(self, theta, X):
        params = self.unflatten(theta)
        acts = [X]
        h = X
        n_layers = len(params) // 2
        for k in range(n_layers):
            z = h @ params[2 * k] + params[2 * k + 1]
            h = np.tanh(z) if k < n_layers - 1 else z
            acts.append(h)
        return params, acts

    @staticmethod
    def _log_softmax(z):
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def logits(self, theta, X=None):
        X = self.X if X is None else X
        return self._forward(self._param(theta), X)[1][-1]

    def value(self, theta, batch=None):
        X, y = self._rows(batch)
        T = self._targets if batch is None else self._targets[batch]
        logp = self._log_softmax(self.logits(theta, X))
        return float(-(T * logp).sum(axis=1).mean())

    def grad(self, theta, batch=None):
        X, y = self._rows(batch)
        T = self._targets if batch is None else self._targets[batch]
        params, acts = self._forward(self._param(theta), X)
        logp = self._log_softmax(acts[-1])
        delta = (np.exp(logp) - T) / len(X)
        grads = []
        n_layers = len(params) // 2
        for k in reversed(range(n_layers)):
            grads.append(delta.sum(axis=0))
            grads.append(acts[k].T @ delta)
            if k > 0:
                delta = (delta @ params[2 * k].T) * (1 - acts[k] ** 2)
        return np.concatenate([g.ravel() for g in reversed(grads)])

    def values(self, thetas, batch=None, chunk: int = 64):
        thetas = self._params(thetas)
        X, _ = self._rows(batch)
        T = self._targets if batch is None else self._targets[batch]
        out = np.empty(len(thetas))
        for start in range(0, len(thetas), chunk):
            params = self.unflatten(thetas[start:start + chunk])
            h = np.broadcast_to(X, (len(params[0]),) + X.shape)
            n_layers = len(params) // 2
            for k in range(n_layers):
                z = h @ params[2 * k] + params[2 * k + 1][:, None, :]
                h = np.tanh(z) if k < n_layers - 1 else z
            logp = self._log_softmax(h)
            out[start:start + chunk] = -(T * logp).sum(axis=2).mean(axis=1)
        return out

    def accuracy(self, theta, X=None, y=None) -> float:
        X = self.X if X is None else X
        y = self.y if y is None else y
        return float(np.mean(self.logits(theta, X).argmax(axis=1) == y))
