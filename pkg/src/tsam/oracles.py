"""Independent high-precision reference values.

Each oracle recomputes a hand-derivable quantity from its defining formula
with ``mpmath`` (50 significant digits) or exact rationals, without calling
any of the package's numerical code. Tests compare the package against
these, and ``tsam oracle <name>`` prints them.
"""

from __future__ import annotations

from fractions import Fraction

import mpmath as mp

__all__ = ["ORACLES", "compute"]

mp.mp.dps = 50


def log_mean_exp():
    """(1/t) log mean exp(t v) for v = [0, 1], t = 1."""
    return {"value": mp.log((1 + mp.e) / 2)}


def tilted_weights():
    """e^{t v_j} / sum_k e^{t v_k} for v = [0, ln 2], t = 1."""
    e = [mp.exp(0), mp.exp(mp.log(2))]
    return {"w0": e[0] / sum(e), "w1": e[1] / sum(e)}


def tilted_gradient():
    """Weights of [0, ln 2] at t = 1 applied to gradients [1, 4]."""
    w = tilted_weights()
    return {"value": w["w0"] * 1 + w["w1"] * 4}


def _toy_sine(x):
    return 2 * mp.sin(4 * mp.pi * x) / (2 * x) + mp.mpf("0.005") * (x - 1) ** 2


def toy_sine():
    """Value and derivative of the sine toy at 0.5, derivative at 0.51."""
    x = mp.mpf("0.5")
    return {
        "value_at_0.5": _toy_sine(x),
        "grad_at_0.5": mp.diff(_toy_sine, x),
        "grad_at_0.51": mp.diff(_toy_sine, mp.mpf("0.51")),
    }


def toy_piecewise():
    f = lambda x: abs(x - 1) - mp.mpf("0.01") if x <= 2 else (x - 3) ** 2  # noqa: E731
    return {"value_at_1": f(mp.mpf(1)), "value_at_3": f(mp.mpf(3))}


def hoeffding():
    """M sqrt(log(2/delta) / (2n)) with M = 1, n = 100, delta = 0.05."""
    return {"value": mp.sqrt(mp.log(2 / mp.mpf("0.05")) / 200)}


def hmc_trace():
    """One Euler step on L = theta with eps0 = 0, p0 = 0, beta = 0.1, delta = 2, sigma = 1."""
    beta, delta, sigma = Fraction(1, 10), Fraction(2), Fraction(1)
    p = Fraction(0) + beta * delta * 1
    eps = Fraction(0) + beta * p / sigma**2
    return {"p": p, "eps": eps}


def momentum():
    """Second displacement of heavy-ball SGD (momentum 0.9) with two identical gradients, in units of lr * g."""
    mu = Fraction(9, 10)
    v1 = Fraction(1)
    v2 = mu * v1 + 1
    return {"second_step_over_lr_g": v2}


def sam_step():
    """SAM on 0.5 theta^2 at theta = 1, rho = 0.1, lr = 0.1."""
    theta, rho, lr = Fraction(1), Fraction(1, 10), Fraction(1, 10)
    eps = rho * (1 if theta > 0 else -1)
    return {"eps": eps, "theta_new": theta - lr * (theta + eps)}


def quadratic_probe():
    """Mean and variance of c eps^2 for eps ~ N(0, sigma^2), c = 1, sigma = 0.1."""
    s2 = mp.mpf("0.1") ** 2
    return {"mean": s2, "variance": 2 * s2**2}


def erm_decay():
    """|theta_100| for GD on 0.5 theta^2 from 1 with lr 0.1."""
    return {"value": mp.mpf("0.9") ** 100}


def small_t_ratio():
    """Leading-order ratio err(t/2) / err(t) of the mean-plus-variance expansion (third cumulant term)."""
    return {"value": mp.mpf(1) / 4}


ORACLES = {
    f.__name__: f
    for f in (
        log_mean_exp, tilted_weights, tilted_gradient, toy_sine, toy_piecewise, hoeffding, hmc_trace,
        momentum, sam_step, quadratic_probe, erm_decay, small_t_ratio,
    )
}


def compute(name: str) -> dict:
    """Named oracle as ``{field: float}``."""
    if name not in ORACLES:
        raise KeyError(f"unknown oracle {name!r}; available: {', '.join(sorted(ORACLES))}")
    return {k: float(v) for k, v in ORACLES[name]().items()}


def describe(name: str) -> list:
    """Printable lines ``name.field = value`` with full precision."""
    raw = ORACLES[name]()
    lines = []
    for k, v in raw.items():
        text = str(v) if isinstance(v, Fraction) else mp.nstr(v, 20)
        lines.append(f"{name}.{k} = {text}")
    return lines
