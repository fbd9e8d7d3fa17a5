"""Experiment harness: flat key=value configs in, deterministic artifacts out.

Subcommands
-----------
simulate   run SGD and store the trajectory
diagnose   run SGD and tabulate loss / gradient / noise / sharpness per iterate
measure    time-average observables and test the vanishing-change statistic
theorem    run a mechanical checker: compact | bn | smallerstep | celemma
sweep      repeat a sub-experiment along one axis (seed | eta | sample_size)
gen-data   write a synthetic blobs dataset CSV
plot       one SVG per numeric column of a diagnostics CSV

Every run writes a ``metadata.json`` echoing the raw config verbatim
plus any command-line overrides, so the artifact directory is enough to
reproduce the run exactly.  No timestamps are embedded anywhere and CSV
floats carry 17 significant digits, so identical config and seed means
byte-identical CSV/JSON artifacts.

Exit codes: 0 on success (including a not-applicable theorem verdict),
1 on runtime failure (divergence, theorem FAIL), 2 on configuration or
precondition rejection.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, load_csv, make_blobs, save_csv
from .diagnostics import (diagnose, epoch_losses, plot_csv,
                          write_diagnostics_csv, write_epoch_csv)
from .dynamics import Schedule, UpdateMap, run_trajectory, save_trajectory
from .measures import (build_measure, coordinate_observable,
                       grad_norm_observable, invariance_residual,
                       loss_observable, time_average, vanishing_change,
                       vanishing_change_sweep)
from .objectives import BatchNormMlpObjective, MlpObjective, MlpSpec, SinProduct
from .theorems import (DEFAULT_C_GRID, PreconditionError, check_bn_bounds,
                       check_ce_lemma, check_compact_domain,
                       check_smaller_step, detect_invariance, write_report)

__all__ = ["ConfigError", "main", "parse_config", "run_config"]


class ConfigError(Exception):
    """The config file or command line cannot be turned into a run."""


# ---------------------------------------------------------------------------
# config parsing: flat key=value, one per line, '#' comments


def _parse_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ConfigError(f"expected true or false, got {s!r}")


def _parse_pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise ConfigError(f"expected a positive integer, got {s!r}")
    return v


def _parse_nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise ConfigError(f"expected a non-negative integer, got {s!r}")
    return v


def _parse_pos_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise ConfigError(f"expected a positive number, got {s!r}")
    return v


def _parse_nonneg_float(s: str) -> float:
    v = float(s)
    if v < 0:
        raise ConfigError(f"expected a non-negative number, got {s!r}")
    return v


def _parse_unit_float(s: str) -> float:
    v = float(s)
    if not 0 < v < 1:
        raise ConfigError(f"expected a number in (0, 1), got {s!r}")
    return v


def _parse_widths(s: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in s.split("-"))
    except ValueError:
        raise ConfigError(f"widths must look like 2-16-16-4, got {s!r}")
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"widths must be at least two positive sizes, got {s!r}")
    return widths


def _parse_int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v != ""]


def _parse_float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v != ""]


def _parse_choice(*choices):
    def parse(s: str) -> str:
        if s not in choices:
            raise ConfigError(f"expected one of {', '.join(choices)}, got {s!r}")
        return s
    return parse


_PARSERS = {
    "kind": str,
    "seed": _parse_nonneg_int,
    "out_dir": str,
    "objective": _parse_choice("sin_product", "mlp", "bn_mlp"),
    "amplitude": _parse_pos_float,
    "dataset": str,
    "widths": _parse_widths,
    "activations": str,
    "bn_eps": _parse_pos_float,
    "eta0": _parse_pos_float,
    "schedule": str,
    "gamma": _parse_nonneg_float,
    "batch_size": _parse_pos_int,
    "sampling": _parse_choice("iid", "epoch_shuffle"),
    "steps": _parse_pos_int,
    "stride": _parse_pos_int,
    "w_init": _parse_pos_float,
    "save_iterates": _parse_bool,
    "sample_size": _parse_pos_int,
    "compute_sharpness": _parse_bool,
    "epoch_csv": _parse_bool,
    "burn_in": _parse_nonneg_int,
    "observable": str,
    "delta": _parse_unit_float,
    "mode": _parse_choice("resample", "shift"),
    "seeds": _parse_int_list,
    "c_sigma": _parse_pos_float,
    "window": _parse_pos_int,
    "tol": _parse_pos_float,
    "c_grid": _parse_float_list,
    "samples": _parse_pos_int,
    "dims": _parse_int_list,
    "trials": _parse_pos_int,
    "c_max": _parse_pos_float,
    "axis": _parse_choice("seed", "eta", "sample_size"),
    "values": str,
    "workers": _parse_pos_int,
    "sub_kind": _parse_choice("simulate", "diagnose", "measure"),
}

_COMMON = {"kind", "seed", "out_dir"}
_MODEL = {"objective", "amplitude", "dataset", "widths", "activations", "bn_eps"}
_DYNAMICS = {"eta0", "schedule", "gamma", "batch_size", "sampling", "steps",
             "stride", "w_init"}

_KIND_KEYS = {
    "simulate": _COMMON | _MODEL | _DYNAMICS | {"save_iterates"},
    "diagnose": _COMMON | _MODEL | _DYNAMICS
                | {"sample_size", "compute_sharpness", "epoch_csv"},
    "measure": _COMMON | _MODEL | _DYNAMICS
               | {"burn_in", "observable", "delta", "mode", "seeds"},
    "theorem:compact": _COMMON | _MODEL | _DYNAMICS | {"seeds", "c_sigma"},
    "theorem:bn": _COMMON | _MODEL | _DYNAMICS | {"seeds"},
    "theorem:smallerstep": _COMMON | _MODEL | _DYNAMICS
                           | {"window", "tol", "c_grid", "samples", "burn_in"},
    "theorem:celemma": _COMMON | {"dims", "trials", "c_max"},
}
_SWEEP_KEYS = {"axis", "values", "workers", "sub_kind"}


def parse_config(path) -> dict[str, str]:
    """Read a flat key=value config file into an ordered string dict."""
    raw: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno} is not key=value: {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno} has an empty key")
        if key in raw:
            raise ConfigError(f"duplicate config key {key!r}")
        raw[key] = value
    return raw


def _coerce(raw: dict[str, str], kind_key: str) -> dict:
    allowed = _KIND_KEYS.get(kind_key)
    if allowed is None:
        raise ConfigError(f"unknown experiment kind {kind_key!r}")
    cfg = {}
    for key, value in raw.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        if key not in allowed:
            raise ConfigError(
                f"config key {key!r} is not used by {kind_key!r} runs")
        try:
            cfg[key] = _PARSERS[key](value)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}")
    return cfg


# ---------------------------------------------------------------------------
# builders


def _build_dataset(spec: str, cfg: dict) -> Dataset:
    if spec.startswith("blobs:"):
        params = {"separation": 3.0, "seed": 0}
        for item in spec[len("blobs:"):].split(","):
            if "=" not in item:
                raise ConfigError(f"blobs parameter must be key=value, got {item!r}")
            k, _, v = item.partition("=")
            if k in ("classes", "dim", "per_class", "seed"):
                params[k] = int(v)
            elif k == "separation":
                params[k] = float(v)
            else:
                raise ConfigError(f"unknown blobs parameter {k!r}")
        for need in ("classes", "dim", "per_class"):
            if need not in params:
                raise ConfigError(f"blobs dataset needs {need}=")
        return make_blobs(params["classes"], params["dim"],
                          params["per_class"], params["seed"],
                          params["separation"])
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {spec}")
    return load_csv(path)


def _parse_activations(spec: str | None, num_layers: int) -> tuple[str, ...]:
    if spec is None:
        return ("relu",) * (num_layers - 1) + ("identity",)
    names = tuple(a.strip() for a in spec.split(","))
    if len(names) == 1:
        return names * (num_layers - 1) + ("identity",)
    if len(names) != num_layers:
        raise ConfigError(
            f"expected {num_layers} activations, got {len(names)}: {spec!r}")
    return names


def _build_objective(cfg: dict):
    kind = cfg.get("objective")
    if kind is None:
        raise ConfigError("config needs an objective= entry")
    if kind == "sin_product":
        return SinProduct(amplitude=cfg.get("amplitude", 100.0))
    if "dataset" not in cfg:
        raise ConfigError(f"objective {kind!r} needs a dataset= entry")
    if "widths" not in cfg:
        raise ConfigError(f"objective {kind!r} needs a widths= entry")
    dataset = _build_dataset(cfg["dataset"], cfg)
    widths = cfg["widths"]
    acts = _parse_activations(cfg.get("activations"), len(widths) - 1)
    try:
        if kind == "mlp":
            return MlpObjective(MlpSpec(widths, acts), dataset)
        return BatchNormMlpObjective(widths, acts, dataset,
                                     eps=cfg.get("bn_eps", 1e-5))
    except ValueError as exc:
        raise ConfigError(str(exc))


def _build_schedule(cfg: dict) -> Schedule:
    if "eta0" not in cfg:
        raise ConfigError("config needs an eta0= entry")
    eta0 = cfg["eta0"]
    spec = cfg.get("schedule", "constant")
    name, _, args = spec.partition(":")
    try:
        if name == "constant":
            if args:
                raise ConfigError("constant schedule takes no arguments")
            return Schedule.constant(eta0)
        if name == "stage_decay":
            factor, period = args.split(",")
            return Schedule.stage_decay(eta0, float(factor), int(period))
        if name == "cosine":
            return Schedule.cosine(eta0, int(args))
    except (ValueError, TypeError):
        raise ConfigError(f"bad schedule spec {spec!r}")
    raise ConfigError(f"unknown schedule {name!r}")


def _build_update_map(cfg: dict, objective) -> UpdateMap:
    try:
        return UpdateMap(objective, _build_schedule(cfg),
                         gamma=cfg.get("gamma", 0.0),
                         batch_size=cfg.get("batch_size", 1),
                         sampling=cfg.get("sampling", "iid"),
                         seed=cfg.get("seed", 0))
    except ValueError as exc:
        raise ConfigError(str(exc))


def _init_kwargs(cfg: dict) -> dict:
    if "w_init" in cfg and cfg.get("objective") != "sin_product":
        return {"w_init": cfg["w_init"]}
    return {}


def _build_observable(cfg: dict, objective):
    spec = cfg.get("observable", "loss")
    if spec == "loss":
        return loss_observable(objective)
    if spec == "grad_norm":
        return grad_norm_observable(objective)
    if spec.startswith("coord:"):
        return coordinate_observable(int(spec[len("coord:"):]))
    raise ConfigError(f"unknown observable {spec!r}")


def _write_metadata(out: Path, raw: dict[str, str], kind: str,
                    overrides: dict, extra: dict | None = None) -> None:
    meta = {
        "kind": kind,
        "config": dict(raw),
        "overrides": dict(overrides),
        "versions": {"ergodyn": __version__, "numpy": np.__version__},
    }
    if extra:
        meta.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# experiment kinds


def _cmd_simulate(raw, cfg, out: Path, overrides) -> int:
    objective = _build_objective(cfg)
    um = _build_update_map(cfg, objective)
    traj = run_trajectory(um, num_steps=cfg.get("steps", 1000),
                          stride=cfg.get("stride", 1),
                          init_kwargs=_init_kwargs(cfg))
    if cfg.get("save_iterates", True):
        save_trajectory(traj, out / "trajectory")
    status = "diverged" if traj.diverged else "completed"
    _write_metadata(out, raw, "simulate", overrides, {
        "status": status,
        "divergence_reason": traj.divergence_reason,
        "num_steps_run": traj.num_steps,
    })
    return 1 if traj.diverged else 0


def _cmd_diagnose(raw, cfg, out: Path, overrides) -> int:
    objective = _build_objective(cfg)
    um = _build_update_map(cfg, objective)
    traj = run_trajectory(um, num_steps=cfg.get("steps", 1000),
                          stride=cfg.get("stride", 1),
                          init_kwargs=_init_kwargs(cfg))
    records = diagnose(traj, objective,
                       sample_size=cfg.get("sample_size"),
                       compute_sharpness=cfg.get("compute_sharpness", True),
                       seed=cfg.get("seed", 0))
    out.mkdir(parents=True, exist_ok=True)
    write_diagnostics_csv(records, out / "diagnostics.csv")
    if cfg.get("epoch_csv", False):
        write_epoch_csv(epoch_losses(traj, objective), out / "epochs.csv")
    status = "diverged" if traj.diverged else "completed"
    _write_metadata(out, raw, "diagnose", overrides, {
        "status": status,
        "divergence_reason": traj.divergence_reason,
        "num_steps_run": traj.num_steps,
    })
    return 1 if traj.diverged else 0


def _cmd_measure(raw, cfg, out: Path, overrides) -> int:
    if cfg.get("stride", 1) != 1:
        raise ConfigError("the vanishing-change statistic needs stride=1")
    objective = _build_objective(cfg)
    um = _build_update_map(cfg, objective)
    observable = _build_observable(cfg, objective)
    steps = cfg.get("steps", 1000)
    delta = cfg.get("delta", 0.1)
    out.mkdir(parents=True, exist_ok=True)

    if "seeds" in cfg:
        reports = vanishing_change_sweep(um, cfg["seeds"], steps, observable,
                                         delta=delta,
                                         init_kwargs=_init_kwargs(cfg))
        with open(out / "vanishing.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "n", "delta_n", "envelope", "contained"])
            for rep in reports:
                for n, dn, env, ok in zip(rep.n_grid, rep.delta_n,
                                          rep.envelope, rep.contained):
                    writer.writerow([rep.seed, int(n), "%.17g" % dn,
                                     "%.17g" % env, int(ok)])
        contained = np.array([rep.all_contained for rep in reports])
        slopes = np.array([rep.slope for rep in reports])
        summary = {
            "reports": [rep.to_dict() for rep in reports],
            "containment_fraction": float(contained.mean()),
            "median_slope": float(np.median(slopes[np.isfinite(slopes)]))
            if np.isfinite(slopes).any() else float("nan"),
        }
        (out / "measure_report.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
        _write_metadata(out, raw, "measure", overrides, {"status": "completed"})
        return 0

    traj = run_trajectory(um, num_steps=steps, stride=1,
                          init_kwargs=_init_kwargs(cfg))
    if traj.diverged:
        _write_metadata(out, raw, "measure", overrides, {
            "status": "diverged",
            "divergence_reason": traj.divergence_reason,
            "num_steps_run": traj.num_steps,
        })
        return 1
    rep = vanishing_change(traj, um, observable, delta=delta,
                           mode=cfg.get("mode", "resample"))
    measure = build_measure(traj, burn_in=cfg.get("burn_in", 0))
    residual, stderr = invariance_residual(measure, um, observable)
    loss_obs = loss_observable(objective)
    grad_obs = grad_norm_observable(objective)
    with open(out / "vanishing.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "delta_n", "envelope", "contained"])
        for n, dn, env, ok in zip(rep.n_grid, rep.delta_n, rep.envelope,
                                  rep.contained):
            writer.writerow([int(n), "%.17g" % dn, "%.17g" % env, int(ok)])
    summary = rep.to_dict()
    summary.update({
        "invariance_residual": residual,
        "residual_stderr": stderr,
        "burn_in": cfg.get("burn_in", 0),
        "time_average_loss": time_average(measure, loss_obs),
        "time_average_grad_norm": time_average(measure, grad_obs),
    })
    (out / "measure_report.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_metadata(out, raw, "measure", overrides, {"status": "completed"})
    return 0


_THEOREM_EXIT = {"pass": 0, "not_applicable": 0, "fail": 1}


def _cmd_theorem(sub: str, raw, cfg, out: Path, overrides) -> int:
    seed = cfg.get("seed", 0)
    extra: dict = {}
    if sub == "celemma":
        report = check_ce_lemma(cfg.get("dims", [2, 10]),
                                cfg.get("trials", 10_000),
                                c_max=cfg.get("c_max", 20.0), seed=seed)
    elif sub == "compact":
        if cfg.get("objective") != "mlp":
            raise ConfigError("the compact-domain check needs objective=mlp")
        objective = _build_objective(cfg)
        if "gamma" not in cfg or "eta0" not in cfg:
            raise ConfigError("the compact-domain check needs gamma= and eta0=")
        report = check_compact_domain(
            objective, cfg["gamma"], cfg["eta0"],
            steps=cfg.get("steps", 1000), seed=cfg.get("seeds", [seed]),
            batch_size=cfg.get("batch_size", 1),
            sampling=cfg.get("sampling", "iid"), w_init=cfg.get("w_init"),
            c_sigma=cfg.get("c_sigma", 1.0))
    elif sub == "bn":
        if cfg.get("objective") != "bn_mlp":
            raise ConfigError("the bn check needs objective=bn_mlp")
        objective = _build_objective(cfg)
        if "gamma" not in cfg or "eta0" not in cfg:
            raise ConfigError("the bn check needs gamma= and eta0=")
        report = check_bn_bounds(
            objective, cfg["gamma"], cfg["eta0"],
            steps=cfg.get("steps", 1000), seed=cfg.get("seeds", [seed]),
            batch_size=cfg.get("batch_size", 4),
            w_init=cfg.get("w_init", 1.0))
    elif sub == "smallerstep":
        objective = _build_objective(cfg)
        um = _build_update_map(cfg, objective)
        traj = run_trajectory(um, num_steps=cfg.get("steps", 1000), stride=1,
                              init_kwargs=_init_kwargs(cfg))
        if traj.diverged:
            _write_metadata(out, raw, "theorem:smallerstep", overrides,
                            {"status": "diverged"})
            return 1
        found = detect_invariance(traj, objective,
                                  window=cfg.get("window", 200),
                                  tol=cfg.get("tol"))
        burn_in = found.step if found.reached else cfg.get(
            "burn_in", traj.num_steps // 2)
        extra["invariance"] = {"reached": found.reached, "step": found.step,
                               "stat": found.stat, "tol": found.tol,
                               "burn_in_used": burn_in}
        measure = build_measure(traj, burn_in=burn_in)
        report = check_smaller_step(
            measure, um, c_grid=tuple(cfg.get("c_grid", DEFAULT_C_GRID)),
            samples=cfg.get("samples", 200), seed=seed,
            window=found.window, tol=found.tol)
    else:
        raise ConfigError(f"unknown theorem {sub!r}")

    write_report(report, out)
    print(report.summary_line())
    extra["status"] = report.verdict
    _write_metadata(out, raw, f"theorem:{sub}", overrides, extra)
    return _THEOREM_EXIT[report.verdict]


# ---------------------------------------------------------------------------
# sweep


def _axis_values(axis: str, values: str) -> list:
    try:
        if axis == "eta":
            parsed = [float(v) for v in values.split(",") if v != ""]
            if any(not v > 0 for v in parsed):
                raise ValueError
        else:
            parsed = [int(v) for v in values.split(",") if v != ""]
            if axis == "sample_size" and any(v < 1 for v in parsed):
                raise ValueError
    except ValueError:
        raise ConfigError(f"bad {axis} sweep values {values!r}")
    if not parsed:
        raise ConfigError("sweep values must be non-empty")
    return parsed


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _run_sub(job) -> tuple[str, str]:
    """One sweep sub-run; returns (value label, status).  Top level so a
    process pool can ship it to a worker."""
    raw, kind, out_dir, label = job
    try:
        code = run_config(raw, kind, Path(out_dir), overrides={})
    except ConfigError as exc:
        return label, f"config_error: {exc}"
    except PreconditionError as exc:
        return label, f"precondition: {exc}"
    except Exception as exc:
        return label, f"error: {type(exc).__name__}"
    return label, ("ok" if code == 0 else "diverged")


def _diagnostics_summary(sub_out: Path) -> dict[str, str]:
    """Tail statistics of a sub-run's diagnostics.csv for the sweep table."""
    path = sub_out / "diagnostics.csv"
    empty = {"final_loss": "", "final_grad_norm": "", "tail_mean_loss": "",
             "tail_mean_grad_norm": "", "tail_mean_noise": "", "tail_mean_g2": ""}
    if not path.exists():
        return empty
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return empty
    tail = rows[-max(1, len(rows) // 4):]

    def col(rows_, name):
        vals = np.array([float(r[name]) for r in rows_])
        vals = vals[np.isfinite(vals)]
        return "%.17g" % vals.mean() if vals.size else ""

    return {
        "final_loss": "%.17g" % float(rows[-1]["loss"]),
        "final_grad_norm": "%.17g" % float(rows[-1]["grad_norm"]),
        "tail_mean_loss": col(tail, "loss"),
        "tail_mean_grad_norm": col(tail, "grad_norm"),
        "tail_mean_noise": col(tail, "noise"),
        "tail_mean_g2": col(tail, "g2"),
    }


def _cmd_sweep(raw, out: Path, overrides, workers: int) -> int:
    for need in ("axis", "values"):
        if need not in raw:
            raise ConfigError(f"sweep config needs {need}=")
    axis = _PARSERS["axis"](raw["axis"])
    values = _axis_values(axis, raw["values"])
    sub_kind = _PARSERS["sub_kind"](raw.get("sub_kind", "diagnose"))
    if axis == "sample_size" and sub_kind != "diagnose":
        raise ConfigError("a sample_size sweep needs sub_kind=diagnose")
    if "workers" in raw:
        workers = max(workers, _PARSERS["workers"](raw["workers"]))

    jobs = []
    for v in values:
        sub_raw = {k: val for k, val in raw.items()
                   if k not in _SWEEP_KEYS and k != "kind"}
        sub_raw["kind"] = sub_kind
        if axis == "seed":
            sub_raw["seed"] = str(v)
        elif axis == "eta":
            sub_raw["eta0"] = _format_value(v)
        else:
            sub_raw["sample_size"] = str(v)
        label = _format_value(v)
        sub_out = out / f"{axis}={label}"
        sub_raw["out_dir"] = str(sub_out)
        jobs.append((sub_raw, sub_kind, str(sub_out), label))

    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            statuses = dict(pool.map(_run_sub, jobs))
    else:
        statuses = dict(_run_sub(job) for job in jobs)

    out.mkdir(parents=True, exist_ok=True)
    columns = ["axis", "value", "seed", "status", "final_loss",
               "final_grad_norm", "tail_mean_loss", "tail_mean_grad_norm",
               "tail_mean_noise", "tail_mean_g2"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for (sub_raw, _, sub_out, label), v in zip(jobs, values):
            stats = _diagnostics_summary(Path(sub_out))
            writer.writerow([axis, label, sub_raw.get("seed", "0"),
                             statuses[label]] + [stats[c] for c in columns[4:]])
    _write_metadata(out, raw, "sweep", overrides, {
        "statuses": {label: statuses[label] for _, _, _, label in jobs}})
    return 0


# ---------------------------------------------------------------------------
# dispatch


def run_config(raw: dict[str, str], kind: str, out: Path,
               overrides: dict) -> int:
    """Validate a raw config for the given kind and execute it."""
    if "kind" in raw and raw["kind"] != kind:
        raise ConfigError(
            f"config says kind={raw['kind']!r} but the command is {kind!r}")
    kind_key = kind if kind in _KIND_KEYS else None
    if kind_key is None:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    cfg = _coerce({k: v for k, v in raw.items() if k != "kind"}, kind_key)
    if kind == "simulate":
        return _cmd_simulate(raw, cfg, out, overrides)
    if kind == "diagnose":
        return _cmd_diagnose(raw, cfg, out, overrides)
    if kind == "measure":
        return _cmd_measure(raw, cfg, out, overrides)
    sub = kind.split(":", 1)[1]
    return _cmd_theorem(sub, raw, cfg, out, overrides)


def _load_raw(args) -> tuple[dict[str, str], dict]:
    if args.config is None:
        raise ConfigError("this command needs --config <path>")
    raw = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return raw, overrides


def _resolve_out(raw: dict, overrides: dict) -> Path:
    out = overrides.get("out_dir", raw.get("out_dir"))
    if out is None:
        raise ConfigError("no output directory: set out_dir= or pass --out")
    return Path(out)


def _apply_overrides(raw: dict, overrides: dict) -> dict:
    effective = dict(raw)
    if "seed" in overrides:
        effective["seed"] = str(overrides["seed"])
    if "out_dir" in overrides:
        effective["out_dir"] = overrides["out_dir"]
    return effective


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ergodyn",
        description="stationary-regime analysis of SGD training dynamics")
    parser.add_argument("--version", action="version",
                        version=f"ergodyn {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--workers", type=int, default=1,
                        help="concurrent sweep sub-runs")

    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "diagnose", "measure"):
        subs.add_parser(name, parents=[common])
    p_theorem = subs.add_parser("theorem", parents=[common])
    p_theorem.add_argument("which",
                           choices=("compact", "bn", "smallerstep", "celemma"))
    subs.add_parser("sweep", parents=[common])
    p_gen = subs.add_parser("gen-data", parents=[common])
    p_gen.add_argument("--classes", type=int, required=True)
    p_gen.add_argument("--dim", type=int, required=True)
    p_gen.add_argument("--per-class", type=int, required=True)
    p_gen.add_argument("--separation", type=float, default=3.0)
    p_plot = subs.add_parser("plot", parents=[common])
    p_plot.add_argument("csv", help="diagnostics CSV to plot")

    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            if args.out is None:
                raise ConfigError("gen-data needs --out <file.csv>")
            dataset = make_blobs(args.classes, args.dim, args.per_class,
                                 args.seed if args.seed is not None else 0,
                                 args.separation)
            save_csv(dataset, args.out)
            print(args.out)
            return 0
        if args.command == "plot":
            if args.out is None:
                raise ConfigError("plot needs --out <dir>")
            for name in plot_csv(args.csv, args.out):
                print(name)
            return 0

        raw, overrides = _load_raw(args)
        out = _resolve_out(raw, overrides)
        effective = _apply_overrides(raw, overrides)
        if args.command == "sweep":
            if "kind" in effective and effective["kind"] != "sweep":
                raise ConfigError(
                    f"config says kind={effective['kind']!r} but the "
                    f"command is 'sweep'")
            return _cmd_sweep(effective, out, overrides, args.workers)
        kind = (f"theorem:{args.which}" if args.command == "theorem"
                else args.command)
        if "kind" in effective and args.command == "theorem" \
                and effective["kind"] in ("theorem", kind):
            effective = dict(effective)
            effective["kind"] = kind
        return run_config(effective, kind, out, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"precondition rejected: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
