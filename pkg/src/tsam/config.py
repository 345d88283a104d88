"""Line-oriented ``key = value`` experiment configs with ``[section]`` headers.

Every key has a declared type, default and range check. Parsing collects all
problems (with line numbers) before failing, and :func:`serialize` writes a
fully resolved config that parses back to an equal object. See
``configs/FORMAT.md`` for the user-facing description.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENT_KINDS",
    "SCHEMA",
    "parse_config",
    "load_config",
    "serialize",
]

EXPERIMENT_KINDS = (
    "toy_trajectories",
    "train_compare",
    "sharpness_report",
    "gap_check",
    "bound_check",
    "smoothness_check",
    "sampler_bias",
)
LANDSCAPES = ("toy_sine", "toy_piecewise", "glm_logistic", "glm_quadratic", "logistic", "mlp")
OPTIMIZERS = ("erm", "sam", "tsam")
MEASURES = ("uniform_ball", "gaussian", "uniform_cube", "point")


class ConfigError(ValueError):
    """All problems found in one config, each prefixed with its line number."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class Key:
    type: str  # int, float, bool, str, choice, floats, ints, strs
    default: object
    check: object = None  # callable(value) -> error text or None
    choices: tuple = ()
    help: str = ""


def _ge(lo):
    return lambda v: None if v >= lo else f"must be >= {lo:g}"


def _gt(lo):
    return lambda v: None if v > lo else f"must be > {lo:g}"


def _in(lo, hi):
    return lambda v: None if lo <= v < hi else f"must lie in [{lo:g}, {hi:g})"


def _each(check):
    def run(values):
        for v in values:
            msg = check(v)
            if msg:
                return f"{msg} (got entry {v!r})"
        return None

    return run


def _nonempty(check=None):
    def run(values):
        if not values:
            return "must not be empty"
        return _each(check)(values) if check else None

    return run


def _choices_each(choices):
    return lambda values: None if values and all(v in choices for v in values) else f"entries must be from {', '.join(choices)}"


SCHEMA = {
    "experiment": {
        "kind": Key("choice", "toy_trajectories", choices=EXPERIMENT_KINDS),
        "seed": Key("int", 0, lambda v: None if 0 <= v < 2**64 else "must be a 64-bit unsigned integer"),
        "record_timing": Key("bool", False),
        "name": Key("str", ""),
    },
    "landscape": {
        "name": Key("choice", "toy_sine", choices=LANDSCAPES),
        "n_train": Key("int", 1000, _ge(1)),
        "n_val": Key("int", 200, _ge(1)),
        "n_test": Key("int", 500, _ge(1)),
        "dim": Key("int", 2, _ge(1)),
        "classes": Key("int", 4, _ge(2)),
        "noise": Key("float", 0.0, _in(0, 1)),
        "data_seed": Key("int", 0, _ge(0)),
        "hidden": Key("ints", [32, 32], _nonempty(_ge(1))),
        "label_smoothing": Key("float", 0.1, _in(0, 1)),
        "clip": Key("float", 0.0, _ge(0)),
        "t_bar": Key("floats", [0.5], _nonempty()),
        "write_data": Key("bool", False),
    },
    "train": {
        "optimizers": Key("strs", ["erm"], _choices_each(OPTIMIZERS)),
        "learning_rate": Key("float", 0.01, _gt(0)),
        "iterations": Key("int", 100, _ge(1)),
        "batch_size": Key("int", 0, _ge(0), help="0 means full batch"),
        "momentum": Key("float", 0.0, _in(0, 1)),
        "weight_decay": Key("float", 0.0, _ge(0)),
        "theta0": Key("floats", []),
        "clamp": Key("floats", [], lambda v: None if len(v) in (0, 2) and (not v or v[0] < v[1]) else "must be empty or 'low, high' with low < high"),
        "record_every": Key("int", 1, _ge(0)),
        "measure": Key("choice", "uniform_ball", choices=MEASURES),
    },
    "tilt": {
        "delta_rule": Key("choice", "half", choices=("half", "fixed")),
        "delta_tilt": Key("float", 0.0, _ge(0)),
        "schedule": Key("choice", "constant", choices=("constant", "linear")),
        "t_start": Key("float", 0.0, _ge(0)),
        "t_end": Key("float", 0.0, _ge(0)),
    },
    "sampler": {
        "kind": Key("choice", "ascent", choices=("naive", "ascent", "hmc", "dense")),
        "hmc_steps": Key("int", 1, _ge(1)),
        "hmc_step_size": Key("float", 0.05, _gt(0)),
        "momentum_std": Key("float", 1.0, _gt(0)),
        "accept_reject": Key("bool", False),
        "hmc_rounds": Key("int", 1, _ge(1)),
        "zero_momentum": Key("bool", False),
        "init_kind": Key("choice", "gaussian", choices=("gaussian", "uniform")),
        "init_scale": Key("float", 0.0, _ge(0), help="0 means rho / 4"),
        "grid_points": Key("int", 2001, _ge(3)),
    },
    "sweep": {
        "t": Key("floats", [0.0], _nonempty(_ge(0))),
        "rho": Key("floats", [0.05], _nonempty(_ge(0))),
        "s": Key("ints", [3], _nonempty(_ge(1))),
        "seeds": Key("ints", [], _each(_ge(0)), help="empty means [experiment.seed]"),
    },
    "analysis": {
        "sigmas": Key("floats", [0.01, 0.02, 0.05, 0.1], _nonempty(_gt(0))),
        "sharpness_sigma": Key("float", 0.05, _gt(0)),
        "n_probe": Key("int", 10_000, _ge(100)),
        "t_grid": Key("floats", [0.0], _nonempty(_ge(0))),
        "hessian_k": Key("int", 1, _ge(0), help="0 skips the Hessian"),
        "hessian_tol": Key("float", 1e-3, _gt(0)),
        "hessian_iters": Key("int", 300, _ge(1)),
    },
    "gap": {
        "instances": Key("int", 100, _ge(1)),
        "min_valid": Key("int", 20, _ge(0)),
        "dims": Key("ints", [1, 2], _nonempty(lambda v: None if v in (1, 2) else "must be 1 or 2")),
        "t_grid": Key("floats", [0.0, 0.5, 1.0, 2.0, 5.0], _nonempty(_ge(0))),
        "points_1d": Key("int", 10001, _ge(3)),
        "points_2d": Key("int", 201, _ge(3)),
    },
    "bound": {
        "tasks": Key("int", 200, _ge(1)),
        "n": Key("int", 100, _ge(1)),
        "t": Key("floats", [0.5, 1.0, 2.0], _nonempty(_ge(0))),
        "M": Key("float", 1.0, _gt(0)),
        "delta_conf": Key("float", 0.05, lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
        "rho": Key("float", 0.1, _gt(0)),
        "heldout": Key("int", 20_000, _ge(1)),
        "n_eps": Key("int", 2000, _ge(2)),
        "theta_box": Key("float", 0.28, _gt(0)),
        "min_fraction": Key("float", 0.95, _in(0, 1.0000001)),
    },
    "smoothness": {
        "t_grid": Key("floats", [0.0, 1.0, 10.0, 25.0, 50.0, 100.0], _nonempty(_ge(0))),
        "theta_min": Key("float", 0.4),
        "theta_max": Key("float", 2.3),
        "n_theta": Key("int", 5000, _ge(3)),
        "rho": Key("float", 0.2, _gt(0)),
    },
    "sampler_bias": {
        "rho": Key("float", 0.2, _gt(0)),
        "t": Key("float", 20.0, _ge(0)),
        "s": Key("int", 5, _ge(1)),
        "seeds": Key("int", 100, _ge(1)),
        "points": Key("floats", [], help="empty means 5 points around each of the 4 central basins"),
        "hmc_delta": Key("float", 5.0, _ge(0)),
        "hmc_theta": Key("float", 0.5),
        "hmc_samples": Key("int", 10_000, _ge(10)),
        "hmc_steps": Key("int", 10, _ge(1)),
        "hmc_step_size": Key("float", 0.005, _gt(0)),
        "burn_in": Key("int", 500, _ge(0)),
        "bins": Key("int", 40, _ge(2)),
    },
}


def _parse_scalar(kind, text):
    if kind == "int":
        return int(text, 10)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError("not a boolean")
    return text


_LIST_ITEM = {"floats": "float", "ints": "int", "strs": "str"}


def _parse_value(key: Key, text: str):
    if key.type in _LIST_ITEM:
        items = [p.strip() for p in text.split(",")] if text.strip() else []
        if any(p == "" for p in items):
            raise ValueError("empty list entry")
        return [_parse_scalar(_LIST_ITEM[key.type], p) for p in items]
    if key.type == "choice":
        if text not in key.choices:
            raise ValueError(f"expected one of {', '.join(key.choices)}")
        return text
    return _parse_scalar(key.type, text)


_TYPE_NAMES = {
    "int": "an integer", "float": "a number", "bool": "true or false", "str": "text",
    "floats": "a comma-separated list of numbers", "ints": "a comma-separated list of integers",
    "strs": "a comma-separated list of names", "choice": "one of the listed names",
}


class ExperimentConfig:
    """Fully resolved config: every section and key of :data:`SCHEMA` present."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def __repr__(self):
        return f"ExperimentConfig(kind={self.kind!r})"

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    @property
    def seeds(self) -> list:
        return self.values["sweep"]["seeds"] or [self.values["experiment"]["seed"]]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        values = {s: dict(kv) for s, kv in self.values.items()}
        values["experiment"]["seed"] = seed
        values["sweep"]["seeds"] = [seed]
        return ExperimentConfig(values)

    def content_hash(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _defaults():
    return {s: {k: (list(v.default) if isinstance(v.default, list) else v.default) for k, v in keys.items()}
            for s, keys in SCHEMA.items()}


def _cross_checks(values, lines):
    errs = []
    tilt, sweep, train = values["tilt"], values["sweep"], values["train"]

    def at(section, key):
        n = lines.get((section, key))
        return f"line {n}: " if n else ""

    if tilt["delta_rule"] == "fixed":
        for t in sweep["t"]:
            if tilt["delta_tilt"] > t:
                errs.append(f"{at('tilt', 'delta_tilt')}[tilt] delta_tilt = {tilt['delta_tilt']:g}: must be <= every swept t (got t = {t:g})")
                break
    kind = values["experiment"]["kind"]
    land = values["landscape"]["name"]
    if kind == "toy_trajectories" and land not in ("toy_sine", "toy_piecewise"):
        errs.append(f"{at('landscape', 'name')}[landscape] name = {land}: toy_trajectories needs a 1-D toy landscape")
    if kind in ("train_compare", "sharpness_report") and land not in ("logistic", "mlp"):
        errs.append(f"{at('landscape', 'name')}[landscape] name = {land}: {kind} needs a dataset landscape (logistic or mlp)")
    if land == "logistic" and values["landscape"]["classes"] != 2:
        errs.append(f"{at('landscape', 'classes')}[landscape] classes = {values['landscape']['classes']}: logistic needs classes = 2")
    if "tsam" in train["optimizers"] and values["sampler"]["kind"] == "dense" and land in ("logistic", "mlp"):
        errs.append(f"{at('sampler', 'kind')}[sampler] kind = dense: quadrature is only available for the 1-D toys")
    if values["smoothness"]["theta_min"] >= values["smoothness"]["theta_max"]:
        errs.append(f"{at('smoothness', 'theta_min')}[smoothness] theta_min must be < theta_max")
    return errs


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    values = _defaults()
    errors = []
    seen = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {n}: malformed section header {raw.strip()!r}")
                section = None
                continue
            name = line[1:-1].strip()
            if name not in SCHEMA:
                errors.append(f"line {n}: unknown section [{name}]; expected one of {', '.join(SCHEMA)}")
                section = None
                continue
            section = name
            continue
        if "=" not in line:
            errors.append(f"line {n}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if section is None:
            errors.append(f"line {n}: key {key!r} outside a known section")
            continue
        spec = SCHEMA[section].get(key)
        if spec is None:
            errors.append(f"line {n}: unknown key {key!r} in [{section}]")
            continue
        if (section, key) in seen:
            errors.append(f"line {n}: duplicate key {key!r} in [{section}] (first set on line {seen[(section, key)]})")
            continue
        seen[(section, key)] = n
        try:
            parsed = _parse_value(spec, val)
        except ValueError as exc:
            errors.append(f"line {n}: [{section}] {key} = {val}: type mismatch, expected {_TYPE_NAMES[spec.type]} ({exc})")
            continue
        msg = spec.check(parsed) if spec.check else None
        if msg:
            errors.append(f"line {n}: [{section}] {key} = {val}: {key} {msg}")
            continue
        values[section][key] = parsed
    if not errors:
        errors.extend(_cross_checks(values, seen))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(values)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    return str(v)


def serialize(config: ExperimentConfig) -> str:
    """Every section and key, in schema order."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            out.append(f"{key} = {_format(config.values[section][key])}")
        out.append("")
    return "\n".join(out)
