"""Command-line interface: ``elmax infer``, ``elmax simulate``, ``elmax timing``, ``elmax replay``."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from elmax import __version__
from elmax.calibration import METHODS, infer_lower_bound
from elmax.errors import DegenerateCovarianceError, ElmaxError
from elmax.kernel import RngStream, ScoreMatrix, summarize
from elmax.simlab import ExperimentConfig, per_draw_scaling, run_experiment, timing_experiment

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

CONFIG_PREFIX = "# config: "

SIM_COLUMNS = (
    "experiment", "n", "J", "k", "rho", "method", "coverage", "mean_shortfall",
    "mean_critical_value", "reps", "B", "seed", "mean_active_size", "tau0", "tau0_se",
)

SCALING_GRID = ((2000, 10), (2000, 20), (4000, 10), (4000, 20), (8000, 10), (8000, 20))


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 64."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ formatting


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_value(obj: Any, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_json_value(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_document(doc: dict) -> str:
    """JSON with every float printed to 17 significant digits."""
    return _json_value(doc, 0) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ------------------------------------------------------------ score files


def read_scores(path: str) -> tuple[ScoreMatrix, list[str]]:
    """Parse a ``policy_1,...,policy_J`` CSV; errors carry the offending line number."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: cannot read score file: {exc}") from exc
    if not rows:
        raise InputError(f"{path}:1: empty file, expected header policy_1,...,policy_J")
    header = [h.strip() for h in rows[0]]
    expected = [f"policy_{j}" for j in range(1, len(header) + 1)]
    if header != expected:
        raise InputError(f"{path}:1: header must be {','.join(expected)}")
    J = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            raise InputError(f"{path}:{lineno}: blank line")
        if len(row) != J:
            raise InputError(f"{path}:{lineno}: expected {J} fields, found {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"{path}:{lineno}: missing or non-finite value")
        values.append(vals)
    if len(values) < 2:
        raise InputError(f"{path}: need at least 2 observations, found {len(values)}")
    return ScoreMatrix(np.array(values)), header


def write_scores(path: str | os.PathLike, scores) -> None:
    X = np.asarray(scores.values if isinstance(scores, ScoreMatrix) else scores, dtype=float)
    buf = io.StringIO()
    buf.write(",".join(f"policy_{j}" for j in range(1, X.shape[1] + 1)) + "\n")
    for row in X:
        buf.write(",".join(fmt_float(v) for v in row) + "\n")
    _write(Path(path), buf.getvalue())


# ------------------------------------------------------------ commands


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


def run_infer(cfg: dict) -> str:
    _check(0.0 < cfg["alpha"] < 1.0, "--alpha must lie in (0, 1)")
    _check(cfg["boot_draws"] >= 1, "--boot-draws must be at least 1")
    _check(0 <= cfg["seed"] < 2**64, "--seed must be a 64-bit unsigned integer")
    X, names = read_scores(cfg["scores"])
    summary = summarize(X)
    bound = infer_lower_bound(
        X,
        alpha=cfg["alpha"],
        method=cfg["method"],
        B=cfg["boot_draws"],
        multiplier=cfg["multiplier"],
        stream=RngStream(cfg["seed"]),
        smooth=cfg["smooth"],
        summary=summary,
    )
    diag = bound.diagnostics
    active = diag.get("active_set")
    doc = {
        "tool": "elmax",
        "version": __version__,
        "lower_bound": bound.lower,
        "level": bound.level,
        "method": bound.method.value,
        "critical_value": bound.critical_value,
        "active_set": None if active is None else [names[j] for j in active],
        "kappa": diag.get("kappa"),
        "weights": {names[j]: float(w) for j, w in enumerate(bound.weights)},
        "face": [names[j] for j in bound.face],
        "bootstrap": diag.get("draws"),
        "duality_gap": diag.get("duality_gap"),
        "n": X.n,
        "J": X.J,
        "seed": cfg["seed"],
        "config": {"command": "infer", **cfg},
    }
    return dump_document(doc)


def _cells(cfg: dict) -> list[ExperimentConfig]:
    experiment = "semiparametric" if cfg["experiment"] == "semi" else cfg["experiment"]
    out = []
    for n, J, k, rho in itertools.product(cfg["n"], cfg["J"], cfg["k"], cfg["rho"]):
        out.append(
            ExperimentConfig(
                experiment=experiment,
                n=n, J=J, k=k, rho=rho,
                reps=cfg["reps"],
                B=cfg["boot_draws"],
                alpha=cfg["alpha"],
                multiplier=cfg["multiplier"],
                master_seed=cfg["seed"],
                methods=tuple(cfg["methods"] or ()),
                mc_draws=cfg["mc_draws"],
            )
        )
    return out


def run_simulate(cfg: dict, workers: int = 1) -> str:
    _check(workers >= 1, "--workers must be at least 1")
    try:
        cells = _cells(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    buf = io.StringIO()
    buf.write(CONFIG_PREFIX + json.dumps({"command": "simulate", "version": __version__, **cfg}, sort_keys=True) + "\n")
    buf.write(",".join(SIM_COLUMNS) + "\n")
    for cell in cells:
        res = run_experiment(cell, workers=workers)
        for method, s in res.methods.items():
            row = [
                cell.experiment, cell.n, cell.J, cell.k, fmt_float(cell.rho), method,
                fmt_float(s.coverage), fmt_float(s.mean_shortfall), fmt_float(s.mean_critical_value),
                s.reps, cell.B, cell.master_seed, fmt_float(s.mean_active_size),
                fmt_float(res.tau0), fmt_float(res.tau0_se),
            ]
            buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue()


def run_timing(cfg: dict) -> tuple[str, str | None]:
    _check(cfg["n"] >= 10, "--n must be at least 10")
    _check(cfg["j"] >= 1, "--j must be at least 1")
    _check(cfg["boot_draws"] >= 1, "--boot-draws must be at least 1")
    _check(cfg["reps"] >= 1, "--reps must be at least 1")
    _check(0 <= cfg["seed"] < 2**64, "--seed must be a 64-bit unsigned integer")
    stream = RngStream(cfg["seed"])
    rep = timing_experiment(cfg["n"], cfg["j"], cfg["boot_draws"], cfg["reps"], stream)
    header = CONFIG_PREFIX + json.dumps({"command": "timing", "version": __version__, **cfg}, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(header)
    buf.write("arm,n,J,B,reps,seconds,per_draw_seconds,ratio\n")
    for arm, sec in (("score_level", rep.score_level_seconds), ("refit", rep.refit_seconds)):
        buf.write(
            f"{arm},{rep.n},{rep.J},{rep.B},{rep.reps},{fmt_float(sec)},"
            f"{fmt_float(sec / rep.B)},{fmt_float(rep.ratio)}\n"
        )
    scaling = None
    if cfg["scaling"]:
        res = per_draw_scaling(SCALING_GRID, cfg["boot_draws"], stream.child(7))
        s = io.StringIO()
        s.write(header)
        s.write("n,J,per_draw_seconds,fitted_seconds\n")
        for n, J, c in res["cells"]:
            s.write(f"{n},{J},{fmt_float(c)},{fmt_float(res['slope'] * n * J)}\n")
        s.write(f"# max_deviation: {fmt_float(res['max_deviation'])}\n")
        scaling = s.getvalue()
    return buf.getvalue(), scaling


def run_replay(path: str, workers: int = 1) -> tuple[str, str]:
    """Re-run from the configuration embedded in a previous output file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if text.startswith(CONFIG_PREFIX):
        cfg = json.loads(text.splitlines()[0][len(CONFIG_PREFIX):])
    else:
        try:
            cfg = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise InputError(f"{path}:1: no embedded configuration found") from None
    cfg = dict(cfg)
    command = cfg.pop("command")
    cfg.pop("version", None)
    if command == "infer":
        return "result.json", run_infer(cfg)
    if command == "simulate":
        return f"simulate_{cfg['experiment']}.csv", run_simulate(cfg, workers)
    raise UsageError(f"replay of {command!r} output is not supported")


# ------------------------------------------------------------ parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elmax", description="Lower confidence bounds for the best policy value.")
    p.add_argument("--version", action="version", version=f"elmax {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    inf = sub.add_parser("infer", help="lower bound from a score file")
    inf.add_argument("--scores", required=True, help="CSV with header policy_1,...,policy_J")
    inf.add_argument("--alpha", type=float, default=0.05)
    inf.add_argument("--method", choices=METHODS, default="auto")
    inf.add_argument("--boot-draws", type=int, default=1000)
    inf.add_argument("--multiplier", choices=("gaussian", "rademacher"), default="gaussian")
    inf.add_argument("--smooth", choices=("chi2", "ordinary"), default="chi2",
                     help="calibration used by --method auto when one policy is active")
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--out", required=True, help="output directory")

    sim = sub.add_parser("simulate", help="Monte Carlo coverage experiments")
    sim.add_argument("--experiment", choices=("dimension", "ties", "correlation", "semi"), required=True)
    sim.add_argument("--n", type=_int_list, default=None, help="sample sizes, comma separated")
    sim.add_argument("--J", "--j", dest="J", type=_int_list, default=None, help="policy counts")
    sim.add_argument("--k", type=_int_list, default=None, help="tie multiplicities")
    sim.add_argument("--rho", type=_float_list, default=None, help="tied-block correlations")
    sim.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=None)
    sim.add_argument("--reps", type=int, default=300)
    sim.add_argument("--boot-draws", type=int, default=1000)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--multiplier", choices=("gaussian", "rademacher"), default="gaussian")
    sim.add_argument("--mc-draws", type=int, default=2_000_000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--out", required=True)

    tim = sub.add_parser("timing", help="score-level bootstrap against refit-per-resample")
    tim.add_argument("--n", type=int, default=2000)
    tim.add_argument("--j", type=int, default=10)
    tim.add_argument("--boot-draws", type=int, default=200)
    tim.add_argument("--reps", type=int, default=1)
    tim.add_argument("--seed", type=int, default=0)
    tim.add_argument("--scaling", action="store_true", help="also time the per-draw cost over an (n, J) grid")
    tim.add_argument("--out", required=True)

    rep = sub.add_parser("replay", help="re-run from the configuration embedded in an output file")
    rep.add_argument("path")
    rep.add_argument("--workers", type=int, default=1)
    rep.add_argument("--out", required=True)
    return p


SIM_DEFAULTS = {
    "dimension": dict(n=[500], J=[5, 10, 20], k=[1], rho=[0.0]),
    "ties": dict(n=[1000], J=[10], k=[1, 2, 4], rho=[0.0]),
    "correlation": dict(n=[1000], J=[10], k=[3], rho=[0.0, 0.2, 0.5, 0.8]),
    "semi": dict(n=[1000], J=[20], k=[5], rho=[0.0]),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "infer":
            cfg = {
                "scores": args.scores, "alpha": args.alpha, "method": args.method,
                "boot_draws": args.boot_draws, "multiplier": args.multiplier,
                "smooth": args.smooth, "seed": args.seed,
            }
            _write(out / "result.json", run_infer(cfg))
            print(out / "result.json")
        elif args.command == "simulate":
            defaults = SIM_DEFAULTS[args.experiment]
            cfg = {
                "experiment": args.experiment,
                "n": args.n or defaults["n"],
                "J": args.J or defaults["J"],
                "k": args.k or defaults["k"],
                "rho": args.rho if args.rho is not None else defaults["rho"],
                "methods": args.methods,
                "reps": args.reps, "boot_draws": args.boot_draws, "alpha": args.alpha,
                "multiplier": args.multiplier, "mc_draws": args.mc_draws, "seed": args.seed,
            }
            path = out / f"simulate_{args.experiment}.csv"
            _write(path, run_simulate(cfg, workers=args.workers))
            print(path)
        elif args.command == "timing":
            cfg = {
                "n": args.n, "j": args.j, "boot_draws": args.boot_draws,
                "reps": args.reps, "seed": args.seed, "scaling": args.scaling,
            }
            table, scaling = run_timing(cfg)
            _write(out / "timing.csv", table)
            if scaling is not None:
                _write(out / "timing_scaling.csv", scaling)
            print(out / "timing.csv")
        else:
            _check(args.workers >= 1, "--workers must be at least 1")
            name, text = run_replay(args.path, args.workers)
            _write(out / name, text)
            print(out / name)
    except UsageError as exc:
        print(f"elmax: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"elmax: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DegenerateCovarianceError as exc:
        print(f"elmax: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ElmaxError as exc:
        print(f"elmax: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
