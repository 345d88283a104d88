"""Experiment orchestration: training sweeps, property checks and their CSV outputs.

:func:`run` executes one parsed config into an output directory, writing
per-run trajectory CSVs, a summary CSV and ``manifest.json``. All CSV content
is a deterministic function of the config (timings are written as ``NA``
unless ``record_timing`` is on), so a rerun reproduces the files byte for
byte. Independent runs of a sweep go to a process pool whose size comes from
the ``TSAM_WORKERS`` environment variable (default 1, in-process).
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    gap_monotonicity,
    generalization_bound,
    hessian_topk,
    neighborhood_stats,
    smoothness_estimate,
)
from .config import ExperimentConfig, serialize
from .datasets import inject_label_noise, make_synthetic_classification, write_split_csv
from .landscapes import (
    GlmLandscape,
    LINKS,
    LogisticLink,
    LogisticRegression,
    MlpLandscape,
    ToyPiecewise1D,
    ToySine1D,
)
from .measures import PerturbationMeasure, uniform_ball
from .optim import TrainConfig, train
from .quadrature import DenseTilt
from .samplers import SamplerConfig, hmc_chain, sample_ascent, sample_naive
from .tilt import TiltConfig, tilted_gradient

__all__ = [
    "SUMMARY_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "RunManifest",
    "run",
    "plan_runs",
    "basin_points",
    "sampler_bias_mse",
    "hmc_tv_distance",
    "workers_from_env",
]

SUMMARY_COLUMNS = (
    "optimizer", "t", "rho", "s", "seed", "final_train_loss", "val_loss", "test_metric",
    "sharpness_var_at_sigma", "top1_eig", "wall_ms",
)
TRAJECTORY_COLUMNS = ("step", "t", "train_loss", "grad_norm", "theta_0", "val_loss", "wall_ms")
NA = "NA"
WORKERS_ENV = "TSAM_WORKERS"


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else NA
    return str(v)


def _write_csv(path: Path, columns, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _write_summary_text(path: Path, fields: dict):
    with path.open("w", encoding="utf-8") as fh:
        for k, v in fields.items():
            fh.write(f"{k} = {_fmt(v)}\n")
    return path


@dataclass
class RunManifest:
    config_text: str
    config_hash: str
    kind: str
    seed: int
    out_dir: str
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "config": self.config_text,
                "outputs": self.outputs,
                "wall_clock_s": self.wall_clock_s,
                "version": __version__,
                "summary": {k: _fmt(v) for k, v in self.summary.items()},
            },
            indent=2,
        )


# ---------------------------------------------------------------- landscapes

def _dataset(land: dict, seed: int):
    ds = make_synthetic_classification(
        n=land["n_train"], d=land["dim"], classes=land["classes"], seed=land["data_seed"] + seed,
        n_val=land["n_val"], n_test=land["n_test"],
    )
    return inject_label_noise(ds, land["noise"], seed=land["data_seed"] + seed)


def build_landscapes(values: dict, seed: int):
    """``(train, validation, test, dataset)``; the last three are None for toys/GLMs."""
    land = values["landscape"]
    name = land["name"]
    if name == "toy_sine":
        return ToySine1D(), None, None, None
    if name == "toy_piecewise":
        return ToyPiecewise1D(), None, None, None
    if name in ("glm_logistic", "glm_quadratic"):
        return GlmLandscape(LINKS[name.split("_")[1]], land["t_bar"]), None, None, None
    ds = _dataset(land, seed)
    if name == "logistic":
        clip = land["clip"] or None
        make = lambda X, y: LogisticRegression(X, y, clip=clip)  # noqa: E731
    else:
        make = lambda X, y: MlpLandscape(X, y, land["classes"], tuple(land["hidden"]), land["label_smoothing"])  # noqa: E731
    return make(ds.X_train, ds.y_train), make(ds.X_val, ds.y_val), make(ds.X_test, ds.y_test), ds


def _test_metric(landscape, test):
    if test is None:
        return None
    if isinstance(landscape, MlpLandscape):
        return lambda th: landscape.accuracy(th, test.X, test.y)
    return lambda th: float(np.mean(((test.X @ th) > 0).astype(int) == test.y))


# ---------------------------------------------------------- training sweeps

@dataclass(frozen=True)
class Cell:
    optimizer: str
    t: float | None
    rho: float | None
    s: int | None

    @property
    def label(self) -> str:
        parts = [self.optimizer]
        if self.t is not None:
            parts.append(f"t{self.t:g}")
        if self.rho is not None:
            parts.append(f"rho{self.rho:g}")
        if self.s is not None:
            parts.append(f"s{self.s}")
        return "_".join(parts)


def plan_runs(config: ExperimentConfig):
    """Cells of a training sweep in output order, and the seeds to run each with."""
    sweep, train_ = config["sweep"], config["train"]
    dense = config["sampler"]["kind"] == "dense"
    cells = []
    for opt in train_["optimizers"]:
        if opt == "erm":
            cells.append(Cell("erm", None, None, None))
        elif opt == "sam":
            cells.extend(Cell("sam", None, r, None) for r in sweep["rho"])
        else:
            for t in sweep["t"]:
                for r in sweep["rho"]:
                    for s in ([None] if dense else sweep["s"]):
                        cells.append(Cell("tsam", t, r, s))
    seen, unique = set(), []
    for c in cells:
        if c not in seen:
            seen.add(c)
            unique.append(c)
    return unique, config.seeds


def _tilt(values: dict, t: float, iterations: int) -> TiltConfig:
    tilt = values["tilt"]
    frac = 0.5 if tilt["delta_rule"] == "half" else None
    if tilt["schedule"] == "linear":
        top = max(tilt["t_start"], tilt["t_end"])
        return TiltConfig(t=top, delta_tilt=0.0 if frac else min(tilt["delta_tilt"], top), schedule="linear",
                          t_start=tilt["t_start"], t_end=tilt["t_end"], iterations=iterations, delta_fraction=frac)
    if frac is not None:
        return TiltConfig(t=t, delta_tilt=t * frac, delta_fraction=frac)
    return TiltConfig(t=t, delta_tilt=tilt["delta_tilt"])


def train_config(values: dict, cell: Cell, seed: int) -> TrainConfig:
    tr, sm = values["train"], values["sampler"]
    sampler = SamplerConfig(
        kind=sm["kind"], s=cell.s or 1, hmc_steps=sm["hmc_steps"], hmc_step_size=sm["hmc_step_size"],
        momentum_std=sm["momentum_std"], accept_reject=sm["accept_reject"], hmc_rounds=sm["hmc_rounds"],
        zero_momentum=sm["zero_momentum"], init_kind=sm["init_kind"], init_scale=sm["init_scale"] or None,
        grid_points=sm["grid_points"],
    )
    return TrainConfig(
        optimizer=cell.optimizer,
        learning_rate=tr["learning_rate"],
        iterations=tr["iterations"],
        batch_size=tr["batch_size"] or None,
        rho=cell.rho or 0.0,
        tilt=_tilt(values, cell.t or 0.0, tr["iterations"]),
        sampler=sampler,
        measure_kind=tr["measure"],
        momentum=tr["momentum"],
        weight_decay=tr["weight_decay"],
        seed=seed,
        clamp=tuple(tr["clamp"]) if tr["clamp"] else None,
        record_every=tr["record_every"],
    )


def _run_cell(args):
    values, cell, seed, out_dir, timing, extra_reports = args
    start = time.perf_counter()
    land, val, test, _ = build_landscapes(values, seed)
    cfg = train_config(values, cell, seed)
    theta0 = values["train"]["theta0"] or None
    rec = train(land, cfg, theta0=theta0)
    theta = rec.final_theta
    an = values["analysis"]
    stem = f"{cell.label}_seed{seed}"
    out_dir = Path(out_dir)
    files = []

    traj_rows = []
    for i, s in enumerate(rec.steps):
        snap = rec.snapshots.get(int(s))
        v = val.value(snap) if (val is not None and snap is not None) else None
        traj_rows.append((int(s), rec.t[i], rec.loss[i], rec.grad_norm[i],
                          None if snap is None else snap[0], v, rec.wall_ms[i] if timing else None))
    traj_rows.append((len(rec.steps), rec.t[-1] if len(rec.t) else 0.0, land.value(theta), None, theta[0],
                      val.value(theta) if val is not None else None, None))
    files.append(_write_csv(out_dir / f"traj_{stem}.csv", TRAJECTORY_COLUMNS, traj_rows))

    probe_rng, hess_rng = np.random.default_rng([seed, 0x5A]).spawn(2)
    sigmas = sorted(set(an["sigmas"]) | {an["sharpness_sigma"]})
    report = neighborhood_stats(land, theta, sigmas, an["n_probe"], an["t_grid"], probe_rng)
    eig = None
    if an["hessian_k"] > 0:
        k = min(an["hessian_k"], land.dim)
        hrep = hessian_topk(land, theta, k, an["hessian_tol"], an["hessian_iters"], hess_rng)
        eig = float(hrep.eigenvalues[0])
        if extra_reports:
            files.append(_write_csv(
                out_dir / f"hessian_{stem}.csv", ("rank", "eigenvalue", "iterations", "residual", "converged"),
                [(i + 1, hrep.eigenvalues[i], hrep.iterations[i], hrep.residuals[i], bool(hrep.converged[i]))
                 for i in range(k)]))
    if extra_reports:
        files.append(_write_csv(out_dir / f"sharpness_{stem}.csv", report.COLUMNS, report.rows()))
    metric = _test_metric(land, test)
    row = {
        "optimizer": cell.optimizer,
        "t": cell.t,
        "rho": cell.rho,
        "s": cell.s,
        "seed": seed,
        "final_train_loss": land.value(theta),
        "val_loss": val.value(theta) if val is not None else None,
        "test_metric": metric(theta) if metric else None,
        "sharpness_var_at_sigma": report.variance_at(an["sharpness_sigma"]),
        "top1_eig": eig,
        "wall_ms": 1e3 * (time.perf_counter() - start) if timing else None,
    }
    return row, [str(f.name) for f in files], theta.tolist()


def _aggregate(rows, cells):
    """Per cell: the seed rows, then a ``mean`` and a ``std`` row over seeds."""
    out = []
    numeric = SUMMARY_COLUMNS[5:]
    for cell in cells:
        mine = [r for r in rows if (r["optimizer"], r["t"], r["rho"], r["s"]) == (cell.optimizer, cell.t, cell.rho, cell.s)]
        out.extend(mine)
        for stat in ("mean", "std"):
            agg = {"optimizer": cell.optimizer, "t": cell.t, "rho": cell.rho, "s": cell.s, "seed": stat}
            for col in numeric:
                vals = [r[col] for r in mine if r[col] is not None]
                if len(vals) != len(mine) or not vals:
                    agg[col] = None
                else:
                    agg[col] = float(np.mean(vals)) if stat == "mean" else float(np.std(vals))
            out.append(agg)
    return out


def _best_t(rows):
    """Best swept t for TSAM by mean validation loss (test metric reported alongside)."""
    means = [r for r in rows if r["optimizer"] == "tsam" and r["seed"] == "mean" and r["val_loss"] is not None]
    if not means:
        return {}
    best = min(means, key=lambda r: (r["val_loss"], r["t"]))
    return {"best_t": best["t"], "best_t_rho": best["rho"], "best_t_s": best["s"],
            "best_t_val_loss": best["val_loss"], "best_t_test_metric": best["test_metric"]}


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _run_training(config: ExperimentConfig, out_dir: Path, workers: int, extra_reports: bool):
    cells, seeds = plan_runs(config)
    timing = config["experiment"]["record_timing"]
    tasks = [(config.values, c, s, str(out_dir), timing, extra_reports) for c in cells for s in seeds]
    results = _map(_run_cell, tasks, workers)
    rows = [r[0] for r in results]
    files = [f for r in results for f in r[1]]
    land = config["landscape"]
    if land["write_data"] and land["name"] in ("logistic", "mlp"):
        for seed in seeds:
            ds = _dataset(land, seed)
            for split in ("train", "validation", "test"):
                files.append(write_split_csv(ds, split, out_dir / f"data_seed{seed}_{split}.csv").name)
    table = _aggregate(rows, cells)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, ([r[c] for c in SUMMARY_COLUMNS] for r in table))
    files.append("summary.csv")
    summary = {"runs": len(rows)}
    summary.update(_best_t(table))
    final = {f"final_theta_{t[0].label}_seed{t[1]}": r[2][0] for t, r in zip([(c, s) for c in cells for s in seeds], results)}
    if config["landscape"]["name"] in ("toy_sine", "toy_piecewise"):
        summary.update(final)
    return files, summary


# -------------------------------------------------------------- property checks

def _random_glm(rng, dim):
    t_bar = rng.uniform(0.1, 0.9, size=dim)
    return GlmLandscape(LogisticLink, t_bar), rng.normal(0, 1, size=dim), rng.normal(0, 3, size=dim), rng.uniform(0.2, 1.0)


def _run_gap(config: ExperimentConfig, out_dir: Path, workers: int):
    g = config["gap"]
    rng = np.random.default_rng([config["experiment"]["seed"], 0x6A9])
    rows, valid, min_slope = [], 0, math.inf
    for i in range(g["instances"]):
        dim = g["dims"][i % len(g["dims"])]
        land, th1, th2, rho = _random_glm(rng, dim)
        points = g["points_1d"] if dim == 1 else g["points_2d"]
        rep = gap_monotonicity(land, th1, th2, g["t_grid"], uniform_ball(rho), points=points)
        if rep.precondition:
            valid += 1
            min_slope = min(min_slope, rep.min_slope)
        for t, gap, slope, sharper in rep.rows():
            rows.append((i, dim, rho, t, gap, slope, sharper, int(rep.precondition)))
    _write_csv(out_dir / "gap.csv", ("instance", "dim", "rho", "t", "gap", "slope", "t_sharper", "precondition"), rows)
    ok = valid >= g["min_valid"] and min_slope >= -1e-8
    summary = {"instances": g["instances"], "valid_instances": valid,
               "min_slope": min_slope if valid else None, "pass": ok}
    return ["gap.csv"], summary


def _unit_disk(rng, n):
    z = rng.normal(size=(n, 2))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * np.sqrt(rng.uniform(size=(n, 1)))


def bound_task(seed: int, task: int, n: int, heldout: int, box: float, M: float):
    """One bounded-loss logistic task: features in the unit disk, weights boxed.

    With ||x|| <= 1 and ||theta + eps|| <= sqrt(2) box + rho the margin is
    below 1/2, so every per-example loss is under log(1 + e^0.5) < 1.
    Returns ``(train, heldout, theta)`` with theta fitted by boxed ERM.
    """
    rng = np.random.default_rng([seed, task])
    w = rng.normal(size=2)
    w *= 3 / np.linalg.norm(w)

    def draw(m):
        X = _unit_disk(rng, m)
        y = (rng.uniform(size=m) < 1 / (1 + np.exp(-X @ w))).astype(int)
        return X, y

    tr, ho = LogisticRegression(*draw(n), clip=M), LogisticRegression(*draw(heldout), clip=M)
    cfg = TrainConfig(optimizer="erm", learning_rate=0.5, iterations=200, clamp=(-box, box), record_every=0)
    return tr, ho, train(tr, cfg, theta0=np.zeros(2)).final_theta


def _run_bound(config: ExperimentConfig, out_dir: Path, workers: int):
    b = config["bound"]
    seed = config["experiment"]["seed"]
    rows = []
    held = {t: 0 for t in b["t"]}
    clamp_active = 0.0
    for k in range(b["tasks"]):
        tr, ho, theta = bound_task(seed, k, b["n"], b["heldout"], b["theta_box"], b["M"])
        clamp_active = max(clamp_active, tr.clamp_fraction(theta), ho.clamp_fraction(theta))
        for j, t in enumerate(b["t"]):
            rep = generalization_bound(tr, theta, uniform_ball(b["rho"]), t, b["M"], b["delta_conf"], ho,
                                       n_eps=b["n_eps"], rng=np.random.default_rng([seed, k, j]))
            held[t] += rep.holds
            rows.append((k, t, rep.hoeffding, rep.variance_term, rep.c, rep.rhs, rep.lhs, rep.holds))
    _write_csv(out_dir / "bound.csv", ("task", "t", "hoeffding", "variance_term", "c", "rhs", "lhs", "holds"), rows)
    summary = {"tasks": b["tasks"], "max_clamp_fraction": clamp_active}
    for t, h in held.items():
        summary[f"fraction_holds_t{t:g}"] = h / b["tasks"]
    summary["pass"] = all(h / b["tasks"] >= b["min_fraction"] for h in held.values())
    return ["bound.csv"], summary


def _run_smoothness(config: ExperimentConfig, out_dir: Path, workers: int):
    sm = config["smoothness"]
    grid = np.linspace(sm["theta_min"], sm["theta_max"], sm["n_theta"])
    rep = smoothness_estimate(ToySine1D(), sm["t_grid"], grid, uniform_ball(sm["rho"]),
                              points=config["sampler"]["grid_points"])
    _write_csv(out_dir / "smoothness.csv", rep.COLUMNS, rep.rows())
    summary = {f"beta_t{t:g}": b for t, b in zip(rep.t_grid, rep.beta)}
    return ["smoothness.csv"], summary


def basin_points(offsets=np.linspace(-0.04, 0.04, 5)) -> np.ndarray:
    """Points around the four central local minima of ToySine1D (near 0.36, 0.87, 1.37, 1.87)."""
    f = ToySine1D.f
    mins = []
    for c in (0.375, 0.875, 1.375, 1.875):
        x = np.linspace(c - 0.1, c + 0.1, 200_001)
        mins.append(x[np.argmin(f(x))])
    return np.concatenate([np.asarray(mins) + u for u in offsets])


def sampler_bias_mse(points, rho: float, t: float, s: int, seeds: int, base_seed: int = 0):
    """Mean squared error of naive and ascent tilted-gradient estimates against quadrature.

    The naive estimate aggregates uniform-ball draws with weights e^{tL};
    the ascent estimate uses the split delta = t/2 (draw with the ascent sampler, weight
    with e^{(t - delta)L}). Returns ``{"naive": [...], "ascent": [...]}``
    holding per-point MSEs.
    """
    land = ToySine1D()
    measure = uniform_ball(rho)
    dense = DenseTilt(land, measure)
    cfg = SamplerConfig(kind="ascent", s=s, delta_tilt=t / 2)
    out = {"naive": [], "ascent": []}
    for i, th in enumerate(points):
        ref = dense.grad([th], t)[0]
        err_n, err_a = [], []
        for k in range(seeds):
            rn, ra = np.random.default_rng([base_seed, i, k]).spawn(2)
            bn = sample_naive(measure, s, rn, land, [th])
            ba = sample_ascent(land, [th], cfg, measure, ra)
            err_n.append((tilted_gradient((bn.losses, bn.gradients), t, 0.0)[0] - ref) ** 2)
            err_a.append((tilted_gradient((ba.losses, ba.gradients), t, t / 2)[0] - ref) ** 2)
        out["naive"].append(float(np.mean(err_n)))
        out["ascent"].append(float(np.mean(err_a)))
    return out


def hmc_tv_distance(theta: float, delta: float, rho: float, n_samples: int, hmc_steps: int, step_size: float,
                    burn_in: int, bins: int, rng, grid_points: int = 10_001):
    """Total-variation distance between an HMC chain's histogram and e^{delta L} on [-rho, rho].

    Returns ``(tv, acceptance_rate)``. The reference bin masses come from a
    trapezoid CDF on ``grid_points`` nodes.
    """
    land = ToySine1D()
    grid = np.linspace(-rho, rho, grid_points)
    logd = delta * land.values(theta + grid)
    dens = np.exp(logd - logd.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    edges = np.linspace(-rho, rho, bins + 1)
    p = np.diff(np.interp(edges, grid, cdf))
    cfg = SamplerConfig(kind="hmc", delta_tilt=delta, hmc_steps=hmc_steps, hmc_step_size=step_size, accept_reject=True)
    chain = hmc_chain(land, [theta], cfg, uniform_ball(rho), rng, n_samples, burn_in=burn_in)
    h, _ = np.histogram(chain.states[:, 0], edges)
    return 0.5 * float(np.abs(h / h.sum() - p).sum()), chain.acceptance_rate


def _run_sampler_bias(config: ExperimentConfig, out_dir: Path, workers: int):
    sb = config["sampler_bias"]
    seed = config["experiment"]["seed"]
    points = np.asarray(sb["points"]) if sb["points"] else basin_points()
    mse = sampler_bias_mse(points, sb["rho"], sb["t"], sb["s"], sb["seeds"], seed)
    rows = [(p, mse["naive"][i], mse["ascent"][i]) for i, p in enumerate(points)]
    _write_csv(out_dir / "sampler_mse.csv", ("theta", "naive_mse", "ascent_mse"), rows)
    tv, acc = hmc_tv_distance(sb["hmc_theta"], sb["hmc_delta"], sb["rho"], sb["hmc_samples"], sb["hmc_steps"],
                              sb["hmc_step_size"], sb["burn_in"], sb["bins"], np.random.default_rng([seed, 0x4C]))
    summary = {
        "naive_mse": float(np.mean(mse["naive"])),
        "ascent_mse": float(np.mean(mse["ascent"])),
        "hmc_tv": tv,
        "hmc_acceptance": acc,
        "pass": float(np.mean(mse["ascent"])) < float(np.mean(mse["naive"])) and tv <= 0.1,
    }
    return ["sampler_mse.csv"], summary


# ----------------------------------------------------------------------- run

def run(config: ExperimentConfig, out_dir, workers: int | None = None) -> RunManifest:
    """Execute ``config`` into ``out_dir`` and write ``manifest.json``.

    Files this call created are removed again if it fails.
    """
    out_dir = Path(out_dir)
    workers = workers_from_env() if workers is None else workers
    existed = set(out_dir.iterdir()) if out_dir.exists() else None
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    start = time.perf_counter()
    kind = config.kind
    try:
        if kind in ("toy_trajectories", "train_compare", "sharpness_report"):
            files, summary = _run_training(config, out_dir, workers, extra_reports=kind == "sharpness_report")
        elif kind == "gap_check":
            files, summary = _run_gap(config, out_dir, workers)
        elif kind == "bound_check":
            files, summary = _run_bound(config, out_dir, workers)
        elif kind == "smoothness_check":
            files, summary = _run_smoothness(config, out_dir, workers)
        else:
            files, summary = _run_sampler_bias(config, out_dir, workers)
        _write_summary_text(out_dir / "summary.txt", summary)
        files.append("summary.txt")
        manifest = RunManifest(serialize(config), config.content_hash(), kind, config["experiment"]["seed"],
                               str(out_dir), sorted(files), time.perf_counter() - start, summary)
        (out_dir / "manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")
        return manifest
    except BaseException:
        _cleanup(out_dir, existed)
        raise


def _cleanup(out_dir: Path, existed):
    if not out_dir.exists():
        return
    for p in out_dir.iterdir():
        if existed is None or p not in existed:
            if p.is_file():
                p.unlink()
    if existed is None:
        try:
            out_dir.rmdir()
        except OSError:
            pass
