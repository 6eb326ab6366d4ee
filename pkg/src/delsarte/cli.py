"""Command-line driver: run verification scenarios and write machine-readable reports.

Usage::

    delsarte <subcommand> [--config FILE] [--grid NX[,NT[,NY]]] [--box A,B]
                          [--tol-scale S] [--out DIR] [--seed N] [--debug-first-order]

Subcommands: ``adjoint``, ``lagrangian``, ``closedness``, ``stokes``,
``dress``, ``kdv`` (``--n N``), ``zs``, ``all`` and ``sweep SUBCOMMAND``
(``--levels K``).

Every run writes ``report.json`` plus one CSV per check into ``--out``.
Exit status: 0 when every check passes, 2 when any check fails, 1 on a
configuration error (one diagnostic line on stderr, nothing written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .diffop import load_operator
from .expr import ExpressionError, parse

__all__ = ["main", "build_parser", "load_config", "make_report", "refine_sweep", "ConfigError"]

SCHEMA = 1
SUBCOMMANDS = ("adjoint", "lagrangian", "closedness", "stokes", "dress", "kdv", "zs", "all")
_CONFIG_KEYS = {"name", "operator", "operators", "family", "potential", "grid", "box",
                "tol_scale", "seed", "out", "tolerances"}


class ConfigError(ValueError):
    """Invalid command line or scenario configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _ints(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NX[,NT[,NY]], got {text!r}") from None
    if not 1 <= len(vals) <= 3 or min(vals) < 3:
        raise argparse.ArgumentTypeError(f"expected 1-3 node counts >= 3, got {text!r}")
    return vals


def _box(text: str) -> tuple:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A,B, got {text!r}") from None
    if not a < b:
        raise argparse.ArgumentTypeError(f"box needs A < B, got {text!r}")
    return a, b


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario JSON file")
    common.add_argument("--grid", type=_ints, help="node counts NX[,NT[,NY]]")
    common.add_argument("--box", type=_box, help="spatial interval A,B")
    common.add_argument("--tol-scale", type=float, help="multiplier for every tolerance")
    common.add_argument("--out", type=Path, help="output directory (default: delsarte-out)")
    common.add_argument("--seed", type=int, help="test-battery seed")
    common.add_argument("--debug-first-order", action="store_true",
                        help="use first-order stencils (convergence-order self-test)")
    p = _Parser(prog="delsarte", description="Verify transmutation-operator identities on grids.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    for name in SUBCOMMANDS:
        sp_ = sub.add_parser(name, parents=[common], help=f"run the {name} checks")
        if name in ("kdv", "all"):
            sp_.add_argument("--n", type=int, default=1, help="number of solitons (default 1)")
    sw = sub.add_parser("sweep", parents=[common], help="refinement ladder with fitted orders")
    sw.add_argument("target", choices=SUBCOMMANDS[:-1])
    sw.add_argument("--levels", type=int, default=3, help="rungs h, h/2, ... ending at the default grid")
    sw.add_argument("--n", type=int, default=1, help="number of solitons for kdv")
    return p


# ---------------------------------------------------------------------------
# configuration

def load_config(path: Path | None) -> dict:
    """Read and validate a scenario file; relative paths resolve against its folder."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
    base = Path(path).parent
    cfg = dict(data)
    ops = data.get("operators", [])
    if "operator" in data:
        ops = [data["operator"]] + list(ops)
    loaded = []
    for item in ops:
        f = base / item
        try:
            loaded.append((Path(item).stem, load_operator(f)))
        except OSError:
            raise ConfigError(f"operator file {f} does not exist or is unreadable") from None
        except (ValueError, KeyError, TypeError, ExpressionError) as exc:
            raise ConfigError(f"operator file {f}: {exc}") from None
    cfg["operators"] = tuple(loaded)
    if "family" in data:
        f = base / data["family"]
        try:
            fam = json.loads(f.read_text())
        except OSError:
            raise ConfigError(f"family file {f} does not exist or is unreadable") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"family file {f} is not valid JSON: {exc.msg}") from None
        if not isinstance(fam, dict) or "entries" not in fam or "x0" not in fam:
            raise ConfigError(f"family file {f} needs 'entries' and 'x0'")
        for e in fam["entries"]:
            for key in ("psi", "phi"):
                spec = e.get(key)
                if isinstance(spec, dict) and "csv" in spec and not (f.parent / spec["csv"]).exists():
                    raise ConfigError(f"family file {f}: {key} data {spec['csv']} does not exist")
        cfg["family"] = str(f)
    if "potential" in data:
        try:
            parse(str(data["potential"]), 1)
        except ExpressionError as exc:
            raise ConfigError(f"potential {data['potential']!r}: {exc}") from None
    tols = data.get("tolerances", {})
    for k, v in tols.items():
        if k not in sc.CONSTANTS:
            raise ConfigError(f"unknown tolerance constant {k!r}; known: {sorted(sc.CONSTANTS)}")
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"tolerance constant {k!r} must be positive, got {v!r}")
    if "tol_scale" in data and not (isinstance(data["tol_scale"], (int, float)) and data["tol_scale"] > 0):
        raise ConfigError("tol_scale must be positive")
    if "grid" in data:
        try:
            cfg["grid"] = _ints(",".join(str(v) for v in data["grid"]))
        except (argparse.ArgumentTypeError, TypeError) as exc:
            raise ConfigError(f"config grid: {exc}") from None
    if "box" in data:
        try:
            cfg["box"] = _box(",".join(str(v) for v in data["box"]))
        except (argparse.ArgumentTypeError, TypeError) as exc:
            raise ConfigError(f"config box: {exc}") from None
    if "out" in data:
        cfg["out"] = base / data["out"]
    return cfg


def _settings(args, cfg: dict) -> sc.Settings:
    def pick(flag, key, default):
        v = getattr(args, flag)
        return v if v is not None else cfg.get(key, default)

    tol_scale = float(pick("tol_scale", "tol_scale", 1.0))
    if not tol_scale > 0:
        raise ConfigError("--tol-scale must be positive")
    return sc.Settings(
        grid=tuple(pick("grid", "grid", ())),
        box=pick("box", "box", None),
        tol_scale=tol_scale,
        seed=int(pick("seed", "seed", 0)),
        accuracy=1 if args.debug_first_order else 2,
        operators=cfg.get("operators", ()),
        family=cfg.get("family"),
        potential=cfg.get("potential"),
        constants=dict(cfg.get("tolerances", {})),
    )


# ---------------------------------------------------------------------------
# reports

def make_report(command: str, scenario: str, settings: sc.Settings, outcome: sc.Outcome,
                total: float) -> dict:
    """Report dictionary; everything but ``timing`` is deterministic."""
    return {
        "schema": SCHEMA,
        "subcommand": command,
        "scenario": scenario,
        "settings": {
            "grid": list(settings.grid),
            "box": list(settings.box) if settings.box else None,
            "tol_scale": settings.tol_scale,
            "seed": settings.seed,
            "accuracy": settings.accuracy,
            "constants": {**sc.CONSTANTS, **settings.constants},
        },
        "records": [r.to_json() for r in outcome.records],
        "overall": "pass" if outcome.passed else "fail",
        "timing": {"total_seconds": total, "checks": outcome.timing},
    }


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _safe_name(name: str) -> str:
    return name.replace(":", "_").replace("/", "_")


def write_outputs(out: Path, files: dict) -> None:
    """Write every file into a scratch folder first, then rename into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        for name, content in files.items():
            text = content if isinstance(content, str) else _dumps(content)
            (scratch / _safe_name(name)).write_text(text)
        for name in files:
            os.replace(scratch / _safe_name(name), out / _safe_name(name))
    finally:
        for leftover in scratch.iterdir():
            leftover.unlink()
        scratch.rmdir()


def _table(records) -> str:
    width = max((len(r.check) for r in records), default=5)
    lines = [f"{'check':<{width}}  {'residual':>11}    {'tolerance':>11}  result"]
    for r in records:
        lines.append(f"{r.check:<{width}}  {r.residual:11.3e} {r.comparison:>2} {r.tolerance:11.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# refinement sweeps

def _fit_order(residuals) -> float | str:
    r = np.asarray(residuals, dtype=float)
    if np.all(r == 0):
        return "exact"
    if np.any(r <= 0):
        return "n/a"
    k = np.arange(len(r))
    slope = np.polyfit(k, np.log2(r), 1)[0]
    return float(-slope)


def refine_sweep(command: str, settings: sc.Settings, levels: int = 3, n: int = 1,
                 echo=print) -> dict:
    """Run ``command`` on ``levels`` grids (spacing halving, finest = default) and fit orders.

    Only grid-scaled checks (records with a constant ``C``) get an order;
    fitted orders below 1.5 are flagged ``suspicious``.
    """
    if levels < 2:
        raise ConfigError("--levels must be at least 2")
    kw = {"n": n} if command == "kdv" else {}
    rungs = [replace(settings, level=lv) for lv in range(-(levels - 1), 1)]
    for i, s in enumerate(rungs):
        shapes = sc.plan(command, s, n)
        total = sum(int(np.prod(sh)) for _, sh in shapes)
        echo(f"rung {i}: " + ", ".join(f"{lab} {'x'.join(map(str, sh))}" for lab, sh in shapes)
             + f"  ({total} nodes)")
    outcomes = [sc.run(command, s, **kw) for s in rungs]
    table = []
    names = [r.check for r in outcomes[0].records]
    for name in names:
        recs = [next((r for r in o.records if r.check == name), None) for o in outcomes]
        if any(r is None for r in recs):
            continue
        res = [r.residual for r in recs]
        scaled = recs[0].constant is not None and recs[0].comparison == "<="
        order = _fit_order(res) if scaled else "n/a"
        pairwise = [float(math.log2(a / b)) if a > 0 and b > 0 else None for a, b in zip(res, res[1:])]
        flag = isinstance(order, float) and order < 1.5
        table.append({"check": name, "residuals": res, "pairwise_orders": pairwise,
                      "order": order, "suspicious": flag})
    return {"schema": SCHEMA, "subcommand": "sweep", "target": command,
            "grids": [[list(sh) for _, sh in sc.plan(command, s, n)] for s in rungs],
            "table": table, "overall": "fail" if any(t["suspicious"] for t in table) else "pass"}


def _sweep_table(report) -> str:
    lines = []
    for row in report["table"]:
        res = "  ".join(f"{v:10.3e}" for v in row["residuals"])
        order = row["order"] if isinstance(row["order"], str) else f"{row['order']:.2f}"
        lines.append(f"{row['check']:<28} {res}  order {order}{'  SUSPICIOUS' if row['suspicious'] else ''}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        settings = _settings(args, cfg)
        out = args.out if args.out is not None else Path(cfg.get("out", "delsarte-out"))
        scenario = str(cfg.get("name", "default"))
        n = getattr(args, "n", 1)
        if n < 0:
            raise ConfigError("--n must be non-negative")
        t0 = time.perf_counter()
        if args.command == "sweep":
            report = refine_sweep(args.target, settings, args.levels, n)
            print(_sweep_table(report))
            write_outputs(out, {"sweep.json": report})
            return 0 if report["overall"] == "pass" else 2
        kw = {"n": n} if args.command in ("kdv", "all") else {}
        outcome = sc.run(args.command, settings, **kw)
        report = make_report(args.command, scenario, settings, outcome, time.perf_counter() - t0)
        files = {f"{k}" if "." in k else f"{k}.csv": v for k, v in outcome.artifacts.items()}
        files["report.json"] = report
    except ConfigError as exc:
        print(f"delsarte: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, ArithmeticError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"delsarte: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(_table(outcome.records))
    print(f"overall: {report['overall'].upper()}  ({len(outcome.records)} checks)")
    write_outputs(out, files)
    return 0 if outcome.passed else 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
