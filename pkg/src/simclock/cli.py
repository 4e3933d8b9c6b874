"""``simclock <preset>`` command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .engine import write_json, write_records_csv
from .errors import ConfigError, SimclockError
from .presets import PRESETS, SCHEMA_VERSION, run_preset


def build_parser():
    p = argparse.ArgumentParser(prog="simclock", description="Entanglement-assisted Ramsey clock simulator")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="INI file with [section] key = value entries")
    p.add_argument("--seed", type=int, help="master seed (overrides campaign.seed)")
    p.add_argument("--workers", type=int, help="worker processes (overrides campaign.workers)")
    p.add_argument("--out", help="output directory (default ./simclock-<preset>)")
    p.add_argument("--force", action="store_true", help="write into an existing output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one key, e.g. --set campaign.n_cycles=10")
    return p


def _clean(obj):
    """Replace non-finite floats by None so the JSON is strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_rows(rows, path):
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in
                        (r.get(k, "") for k in keys)])


def resolve_config(args):
    sets = list(args.set)
    if args.seed is not None:
        sets.append(f"campaign.seed={args.seed}")
    if args.workers is not None:
        sets.append(f"campaign.workers={args.workers}")
    return cfgmod.resolve(PRESETS[args.preset], args.config, sets)


def run(args):
    cfg = resolve_config(args)
    out = args.out or f"simclock-{args.preset}"
    if os.path.exists(out) and os.listdir(out) and not args.force:
        raise ConfigError(f"output directory {out!r} exists and is not empty (use --force)")
    result = run_preset(args.preset, cfg)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved_config.ini"), "w") as fh:
        fh.write(f"# preset: {args.preset}\n")
        fh.write(cfgmod.to_ini(cfg))
    if result.records:
        write_records_csv(result.records, os.path.join(out, "records.csv"))
    elif result.record_rows:
        _write_rows(result.record_rows, os.path.join(out, "records.csv"))
    if result.budget:
        _write_rows(result.budget, os.path.join(out, "budget.csv"))
    if result.sequence_text:
        with open(os.path.join(out, "sequence.txt"), "w") as fh:
            fh.write(result.sequence_text)
    summary = {"schema_version": SCHEMA_VERSION, "preset": args.preset, "seed": cfg["campaign.seed"],
               "results": result.summary}
    write_json(_clean(summary), os.path.join(out, "summary.json"))
    return summary


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = run(args)
    except ConfigError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except SimclockError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    res = summary["results"]
    if args.preset == "oracle-check":
        for row in res["posterior_variance"]:
            print(f"N={row['n_atoms']:5d} kappa^2={row['kappa_sq']:4.2f} "
                  f"rel_err={row['rel_error']:.2e} draws={row['rel_error_draws']:.2e} "
                  f"{'PASS' if row['pass'] else 'FAIL'}")
        for row in res["ear"]:
            print(f"EAR detuning={row['detuning']:g} Hz |dJz|={row['abs_error']:.1e} "
                  f"{'PASS' if row['pass'] else 'FAIL'}")
        return 0 if res["all_pass"] else 1
    headline = {k: v for k, v in res.items() if k.endswith("_db") or k.startswith(("tau", "sigma", "t_cross", "eta"))}
    print(json.dumps(_clean(headline), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
