"""Command-line front end.

Every subcommand writes ``<command>.csv``, a ``<command>.json`` summary
(validated against ``schemas/summary.schema.json``) and a
``<command>.manifest.json`` run manifest holding the wall time.  The CSV and
summary depend only on the configuration, seed and worker count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .config import config_from_mapping, config_to_mapping, load_schema
from .errors import EntswapError
from .experiments import (
    ExperimentConfig,
    Runner,
    minimal_fidelity,
    run_hom,
    run_rates,
    run_source_test,
    run_swapping,
    run_teleportation,
    sweep_mu,
    sweep_rep_rate,
    validate,
)

OUT_DIR_ENV = "ENTSWAP_OUT_DIR"

COMMAND_SETUP = {
    "source-test": "source_test",
    "hom": "hom",
    "teleport": "teleport",
    "swap": "swap",
}
DEFAULT_SETUP = {"rates": "source_test", "validate": "hom", "sweep": "hom"}

CURVE_COLUMNS = [
    "curve", "abscissa_name", "abscissa", "raw", "b1", "b2", "net",
    "raw_err", "net_err", "raw_se", "net_se", "raw_cps",
]

log = logging.getLogger("entswap")


# -- formatting -------------------------------------------------------------------


def fmt(value) -> str:
    """Integers verbatim, other numbers with 6 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.6g}"
    return str(value)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) or math.isinf(x) else x
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def curve_label(fixed: dict) -> str:
    return ";".join(f"{k}={fmt(v)}" for k, v in fixed.items())


def curve_rows(curves):
    for c in curves:
        for x, p in zip(c.abscissa, c.points):
            yield [
                curve_label(c.fixed), c.abscissa_name, x, p.raw, p.b1, p.b2, p.net,
                p.raw_error, p.net_error, p.raw_se, None if p.raw_se is None else p.net_sim_error,
                p.rate(),
            ]


# -- commands --------------------------------------------------------------------------


def cmd_source_test(cfg, args):
    curves = run_source_test(cfg)
    return CURVE_COLUMNS, list(curve_rows(curves)), {"curves": [c.summary() for c in curves]}


def cmd_hom(cfg, args):
    curve = run_hom(cfg)
    return CURVE_COLUMNS, list(curve_rows([curve])), {"curves": [curve.summary()]}


def cmd_teleport(cfg, args):
    runner = Runner(cfg)
    curves = [run_teleportation(cfg, t2, t3, runner) for t2, t3 in cfg.angle_pairs]
    return CURVE_COLUMNS, list(curve_rows(curves)), {"curves": [c.summary() for c in curves]}


def cmd_swap(cfg, args):
    curves = run_swapping(cfg)
    results = {
        "theta2": [c.fixed["theta2"] for c in curves],
        "v_raw": [c.v_raw for c in curves],
        "v_net": [c.v_net for c in curves],
        **minimal_fidelity(curves),
    }
    return CURVE_COLUMNS, list(curve_rows(curves)), {"curves": [c.summary() for c in curves], "results": results}


def cmd_rates(cfg, args):
    report = run_rates(cfg)
    rows = [[k, v, report["rates_cps"][k + "_err"]] for k, v in report["rates_cps"].items() if not k.endswith("_err")]
    return ["observable", "rate_cps", "rate_err_cps"], rows, {"results": report}


def cmd_validate(cfg, args):
    report = validate(cfg, n_pulses=args.pulses or 1_000_000)
    rows = [[r["observable"], r["exact"], r["estimate"], r["se"], r["z"]] for r in report["rows"]]
    return ["observable", "exact", "estimate", "se", "z"], rows, {"results": report}


def cmd_sweep(cfg, args):
    values = [float(v) for v in args.values.split(",")]
    if args.param == "mu":
        points = sweep_mu(cfg, values)
    else:
        points = sweep_rep_rate(cfg, values)
    rows = []
    for pt in points:
        v_raw, v_net = np.atleast_1d(pt["v_raw"]), np.atleast_1d(pt["v_net"])
        for i, (vr, vn) in enumerate(zip(v_raw, v_net)):
            rows.append([pt.get("rep_rate", cfg.rep_rate), pt["mu"], i, float(vr), float(vn)])
    return ["rep_rate", "mu", "curve", "v_raw", "v_net"], rows, {"results": points}


COMMANDS = {
    "source-test": cmd_source_test,
    "hom": cmd_hom,
    "teleport": cmd_teleport,
    "swap": cmd_swap,
    "rates": cmd_rates,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


# -- argument handling ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entswap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--preset", choices=["fig2", "fig3a", "fig3b", "fig3c", "fig4", "fig5a", "fig5b", "table1"])
        p.add_argument("--seed", type=int)
        p.add_argument("--pulses", type=int, help="Monte Carlo pulses")
        p.add_argument("--workers", type=int)
        p.add_argument("--estimator", choices=["expected", "sampled"])
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "validate":
            p.add_argument("--nmax", type=int, default=None, help="pairs per source in the enumeration (default 2)")
        if name == "sweep":
            p.add_argument("--param", choices=["mu", "rep_rate"], default="mu")
            p.add_argument("--values", default="0.025,0.05,0.1,0.2", help="comma-separated values")
    return parser


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise EntswapError(f"configuration file {str(path)!r} does not exist")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise EntswapError("configuration must be a mapping")
    wanted = COMMAND_SETUP.get(args.command)
    preset_setup = None
    preset = args.preset or data.get("preset")
    if preset:
        from .config import PRESETS

        preset_setup = PRESETS.get(preset, {}).get("setup")
    given = data.get("setup", preset_setup)
    if wanted and given and given != wanted:
        raise EntswapError(f"{args.command!r} cannot run a {given!r} configuration")
    if not given:
        data["setup"] = wanted or DEFAULT_SETUP[args.command]
    if args.command == "validate":
        data["n_max"] = args.nmax if args.nmax is not None else data.get("n_max") or 2
        data["n_pulses"] = None
    elif args.nmax if hasattr(args, "nmax") else False:
        raise EntswapError("--nmax applies to validate only")
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("estimator", "estimator")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    if args.pulses is not None and args.command != "validate":
        data["n_pulses"] = args.pulses
    return config_from_mapping(data, args.preset)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args)
        out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise EntswapError(f"output directory {str(out_dir)!r} is not writable")
        header, rows, payload = COMMANDS[args.command](cfg, args)
    except (EntswapError, OSError) as exc:
        print(f"entswap: error: {exc}", file=sys.stderr)
        return 2

    stem = args.command.replace("-", "_")
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    manifest_path = out_dir / f"{stem}.manifest.json"
    manifest = {
        "config": config_to_mapping(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": [csv_path.name, json_path.name],
        "manifest_file": manifest_path.name,
    }
    summary = jsonable({"command": args.command, "results": payload.get("results", {}), **payload, "manifest": manifest})
    try:
        jsonschema.validate(summary, load_schema("summary.schema.json"))
        write_csv(csv_path, header, rows)
        json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        wall = time.perf_counter() - t0
        full = dict(manifest, wall_time_s=wall)
        manifest_path.write_text(json.dumps(jsonable(full), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except (OSError, jsonschema.ValidationError) as exc:
        print(f"entswap: error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate" and not payload["results"]["passed"]:
        print(f"validation failed: max z = {payload['results']['max_z']:.3f}", file=sys.stderr)
        return 1
    print(f"wrote {csv_path} and {json_path}")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
