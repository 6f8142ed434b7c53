"""Command line entry point: ``hapsgnss sim | rinex | dopmap``."""

import argparse
import json
import logging
import os
import sys

from .config import ScenarioConfig, load_config, with_environment
from .errors import ConfigError, GnssError
from .harness import SystemVariant, cdf_csv, dop_grid, dopgrid_csv, rows_csv, run_campaign, \
    run_rinex, summarize, summary_json
from .rinex import load_haps_sidecar, load_truth_trajectory, parse_nav, parse_obs


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("arguments", message)


def _seeds(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty seed list")
    return out


def _grid(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 5:
        raise ValueError("grid needs latmin,latmax,lonmin,lonmax,step")
    return tuple(vals)


def _write(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        fh.write(text)


def cmd_sim(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.environment:
        cfg = with_environment(cfg, args.environment)
    variants = [SystemVariant.parse(v) for v in args.variants.split(",")]
    results = run_campaign(cfg, variants, args.seeds)
    os.makedirs(args.out, exist_ok=True)
    for (name, seed), res in results.items():
        _write(args.out, f"epochs_{name}_{seed}.csv", rows_csv(res))
    for v in variants:
        errs = [e for (name, _), r in results.items() if name == v.name for e in r.errors]
        _write(args.out, f"cdf_{v.name}.csv", cdf_csv(errs))
    _write(args.out, "summary.json", summary_json(summarize(results, variants)))


def cmd_rinex(args):
    with open(args.obs) as fh:
        obs = parse_obs(fh)
    with open(args.nav) as fh:
        nav = parse_nav(fh)
    sidecar = truth = None
    if args.haps:
        with open(args.haps) as fh:
            sidecar = load_haps_sidecar(fh, [e.t for e in obs.epochs], obs.interval)
    if args.truth:
        with open(args.truth) as fh:
            truth = load_truth_trajectory(fh)
    res = run_rinex(obs, nav, sidecar, args.raim, truth)
    name = res.variant.name
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, f"epochs_{name}_0.csv", rows_csv(res))
    _write(args.out, f"cdf_{name}.csv", cdf_csv(res.errors))
    summary = summarize({(name, 0): res}, [res.variant])
    summary["parse"] = {
        "nav_errors": [str(e) for e in nav.errors],
        "obs_errors": [str(e) for e in obs.errors],
        "nav_skipped": dict(sorted(nav.skipped.items())),
        "obs_skipped": dict(sorted(obs.skipped.items())),
    }
    _write(args.out, "summary.json", summary_json(summary))


def cmd_dopmap(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    rows = dop_grid(cfg, args.grid, args.t, args.with_gps)
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "dopgrid.csv", dopgrid_csv(rows))


def build_parser():
    p = _Parser(prog="hapsgnss", description="HAPS-aided GPS positioning toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sim", help="run a simulation campaign")
    s.add_argument("--config", help="scenario TOML (defaults built in when omitted)")
    s.add_argument("--seeds", type=_seeds, default=[0], help="e.g. 0,1,2 or 0-19")
    s.add_argument("--variants", default="gps,gps+6haps", help="comma list, e.g. gps,gps+6haps+raim")
    s.add_argument("--environment", help="run every epoch in this environment")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sim)

    r = sub.add_parser("rinex", help="solve a RINEX observation file")
    r.add_argument("--obs", required=True)
    r.add_argument("--nav", required=True)
    r.add_argument("--haps", help="HAPS sidecar CSV")
    r.add_argument("--truth", help="truth trajectory CSV for error statistics")
    r.add_argument("--raim", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rinex)

    d = sub.add_parser("dopmap", help="HDOP/VDOP over a lat/lon grid")
    d.add_argument("--config")
    d.add_argument("--grid", type=_grid, required=True, help="latmin,latmax,lonmin,lonmax,step")
    d.add_argument("--t", type=float, default=0.0, help="seconds after the scenario start")
    d.add_argument("--with-gps", action="store_true", help="include the GPS constellation")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dopmap)
    return p


def _fail(kind, message, **extra):
    json.dump({"error": kind, "message": message, **extra}, sys.stderr)
    sys.stderr.write("\n")
    return 2


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail("ConfigError", exc.message, path=exc.path)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        return _fail("ConfigError", exc.message, path=exc.path)
    except GnssError as exc:
        return _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
