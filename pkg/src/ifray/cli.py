"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage,
3 calibration objective cannot be evaluated.
"""

from __future__ import annotations

import argparse
import collections
import glob
import json
import math
import os
import platform
import sys
import warnings

import numpy as np

from . import __version__
from .calibrate import (CalibrationConfig, EmptyObjectiveError, MeasurementReference,
                        average_pdp, fit_offsets, swap_materials)
from .channel import (UTResult, _fmt, aoa_spectrum, compute_pdp, coverage_map, empirical_cdf,
                      rms_delay_spread, run_p2mp, write_aoa_csv, write_cdf_csv, write_coverage_csv,
                      write_csv, write_pdp_csv, write_pgm)
from .em import Antenna, RadioConfig
from .geometry import (PAPER_BS, SceneError, build_paper_scene, clutter_density, dump_scene,
                       load_scene, paper_positions, scene_to_dict)
from .tracer import DEFAULT_RAYS, DEFAULT_TILE, InteractionBudget, MultipathComponent

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_EMPTY = 0, 1, 2, 3
PRESETS = ("paper-hall",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- argument helpers ---------------------------------------------------------------

def _point(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return vals


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _budget(text):
    try:
        InteractionBudget.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _radio_args(p):
    p.add_argument("--freq", type=_positive, default=3.7e9, help="carrier frequency (Hz)")
    p.add_argument("--bw", type=_positive, default=80e6, help="bandwidth (Hz)")
    p.add_argument("--tx-power", type=float, default=0.0, help="transmit power (dBm)")
    p.add_argument("--noise-floor", type=float, default=-145.0, help="noise floor (dBm)")
    p.add_argument("--antenna", choices=("isotropic", "dipole"), default="isotropic")


def _trace_args(p):
    p.add_argument("--scene", required=False, help="scene JSON")
    p.add_argument("--budget", type=_budget, default="2r1d1t", help="<R>r<D>d<T>t")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--diffuse", default=None, help="comma-separated surface labels")
    g.add_argument("--no-diffuse", action="store_true")
    p.add_argument("--tile", type=_positive, default=DEFAULT_TILE, help="diffuse tile size (m)")
    p.add_argument("--calib", default="none", help="'paper', 'none' or a calibration JSON")
    p.add_argument("--n-rays", type=int, default=DEFAULT_RAYS)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", help="JSON file with option defaults")
    _radio_args(p)


def _position_args(p):
    p.add_argument("--preset-positions", choices=("paper",), default=None)
    p.add_argument("--bs", type=_point, default=None, help="x,y,z")
    p.add_argument("--ut", type=_point, action="append", default=None, help="x,y,z (repeatable)")
    p.add_argument("--positions", help="JSON with 'bs' and 'uts'")


def build_parser():
    parser = _Parser(prog="ifray", description="Ray-launching channel simulator for factory halls")
    parser.add_argument("--version", action="version", version=f"ifray {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scene = sub.add_parser("scene", help="build or validate scene documents")
    ssub = scene.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = ssub.add_parser("build")
    b.add_argument("--preset", choices=PRESETS, required=True)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("-o", "--output", required=True)
    v = ssub.add_parser("validate")
    v.add_argument("path")

    t = sub.add_parser("trace", help="trace BS to UT links")
    _trace_args(t)
    _position_args(t)
    t.add_argument("-o", "--output", default="run")

    e = sub.add_parser("extract", help="derive CSV artifacts from traced MPCs")
    e.add_argument("what", choices=("pdp", "aoa", "ds-cdf"))
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="output directory of a trace run")
    src.add_argument("--mpcs", nargs="+", help="MPC JSONL files")
    e.add_argument("--bin", type=_positive, default=5.0, help="AoA bin width (deg)")
    e.add_argument("--bw", type=_positive, default=None)
    e.add_argument("--noise-floor", type=float, default=None)
    e.add_argument("-o", "--output", default=".")

    c = sub.add_parser("coverage", help="grid coverage map")
    _trace_args(c)
    c.add_argument("--bs", type=_point, default=list(PAPER_BS))
    c.add_argument("--res", type=float, default=2.0, help="grid resolution (m)")
    c.add_argument("--height", type=float, default=1.44)
    c.add_argument("--db-min", type=float, default=-120.0)
    c.add_argument("--db-max", type=float, default=-40.0)
    c.add_argument("-o", "--output", default="coverage")

    k = sub.add_parser("calibrate", help="fit class offsets to a reference")
    _trace_args(k)
    _position_args(k)
    k.add_argument("--reference", required=False)
    k.add_argument("--step", type=_positive, default=1.0)
    k.add_argument("--max-evals", type=int, default=200)
    k.add_argument("--diffraction-range", type=float, nargs=2, default=(-20.0, 0.0))
    k.add_argument("--diffuse-range", type=float, nargs=2, default=(0.0, 20.0))
    k.add_argument("-o", "--output", default="calibration.json")
    return parser


def _parse(argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    known = vars(args)
    bad = [k for k in doc if k.replace("-", "_") not in known or k.startswith("_")
           or k in ("command", "action", "config")]
    if bad:
        raise UsageError(f"unknown config key(s): {sorted(bad)}")
    # re-parse with file values as defaults so explicit flags still win
    sub_parser = _subparser(parser, args)
    sub_parser.set_defaults(**{k.replace("-", "_"): val for k, val in doc.items()})
    args = parser.parse_args(argv)
    args._argv = argv
    if isinstance(getattr(args, "budget", None), str):
        _budget(args.budget)
    for key in ("bs",):
        if isinstance(getattr(args, key, None), str):
            setattr(args, key, _point(getattr(args, key)))
    return args


def _subparser(parser, args):
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse has no public API
        return action.choices[args.command]
    raise UsageError("no subcommand")


# -- shared setup ----------------------------------------------------------------------

def _load_scene(path):
    if not path:
        raise UsageError("--scene is required")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read scene {path}: {exc}") from None
    return load_scene(text)


def _radio(args):
    ant = Antenna(args.antenna)
    try:
        return RadioConfig(args.freq, args.bw, args.tx_power, args.noise_floor, ant, ant)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _budget_of(args):
    diffuse = args.diffuse is not None and not args.no_diffuse
    surfaces = tuple(s for s in (args.diffuse or "").split(",") if s) or ("walls", "machines")
    return InteractionBudget.parse(args.budget, diffuse, surfaces)


def _calib(args):
    name = args.calib
    if name in (None, "none"):
        return None
    if name == "paper":
        return CalibrationConfig.paper()
    try:
        with open(name) as fh:
            return CalibrationConfig.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read calibration {name}: {exc}") from None


def _positions(args):
    if args.positions:
        try:
            with open(args.positions) as fh:
                doc = json.load(fh)
            return np.array(doc["bs"], float), np.array(doc["uts"], float).reshape(-1, 3)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read positions {args.positions}: {exc}") from None
    if args.preset_positions == "paper":
        bs, uts = paper_positions()
        if args.bs is not None:
            bs = np.array(args.bs, float)
        if args.ut:
            uts = np.array(args.ut, float)
        return bs, uts
    if args.bs is None or not args.ut:
        raise UsageError("give --preset-positions, --positions, or --bs with at least one --ut")
    return np.array(args.bs, float), np.array(args.ut, float)


def _versions():
    import numba
    import scipy
    return {"ifray": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _args_dict(args):
    out = {}
    for k, v in sorted(vars(args).items()):
        if k.startswith("_"):
            continue
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


# -- commands ------------------------------------------------------------------------------

def cmd_scene(args):
    if args.action == "build":
        scene = build_paper_scene(args.seed)
        try:
            with open(args.output, "w") as fh:
                fh.write(dump_scene(scene))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        counts = collections.Counter(b.label for b in scene.objects)
        print(f"wrote {args.output}")
        print(f"hall {scene.hall.length} x {scene.hall.width} x {scene.hall.height} m")
        print(f"clutter density {100 * clutter_density(scene):.2f} %")
        for label, n in sorted(counts.items()):
            print(f"  {label}: {n}")
        return EXIT_OK
    try:
        scene = _load_scene(args.path)
    except SceneError as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"ok: {len(scene.objects)} objects, {len(scene.facets)} facets, "
          f"clutter density {100 * clutter_density(scene):.2f} %")
    return EXIT_OK


def _prepare(args):
    scene = _load_scene(args.scene)
    calib = _calib(args)
    if calib is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scene = swap_materials(scene, calib)
    return scene, _radio(args), _budget_of(args), calib


def cmd_trace(args):
    scene, radio, budget, calib = _prepare(args)
    bs, uts = _positions(args)
    out = args.output
    os.makedirs(os.path.join(out, "mpcs"), exist_ok=True)
    results = run_p2mp(scene, bs, uts, radio, budget, calib, args.n_rays, args.tile, args.threads)
    rows = []
    failed = []
    for r in results:
        name = f"ut_{r.index + 1:03d}.jsonl"
        with open(os.path.join(out, "mpcs", name), "w") as fh:
            for m in r.mpcs:
                fh.write(json.dumps(m.to_record()) + "\n")
        if not r.ok:
            failed.append((r.index + 1, r.error))
            continue
        x, y, z = r.position
        rows.append((r.index + 1, x, y, z, r.los_class, r.params.total_power_dbm,
                     r.params.rms_ds * 1e9 if math.isfinite(r.params.rms_ds) else math.nan,
                     len(r.mpcs)))
    write_csv(os.path.join(out, "summary.csv"),
              ["ut", "x_m", "y_m", "z_m", "los_class", "total_power_dbm", "rms_ds_ns", "n_mpc"], rows)
    manifest = {
        "command": "trace",
        "argv": args._argv,
        "options": _args_dict(args),
        "resolved": {
            "bs": list(map(float, bs)), "uts": [list(map(float, u)) for u in uts],
            "budget": budget.label, "diffuse": budget.diffuse_enabled,
            "diffuse_surfaces": list(budget.diffuse_surfaces),
            "calibration": calib.to_dict() if calib else None,
            "radio": {"frequency": radio.frequency, "bandwidth": radio.bandwidth,
                      "tx_power_dbm": radio.tx_power_dbm,
                      "noise_floor_dbm": radio.noise_floor_dbm},
        },
        "scene": scene_to_dict(_load_scene(args.scene)),
        "scene_fingerprint": scene.fingerprint,
        "versions": _versions(),
        "failed": [{"ut": i, "error": e} for i, e in failed],
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"traced {len(results)} UT(s) into {out}; {len(failed)} failed")
    for i, e in failed:
        print(f"  UT {i}: {e}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _read_mpcs(path, noise_floor):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(MultipathComponent.from_record(json.loads(line), noise_floor))
    return out


def cmd_extract(args):
    bw, nf = args.bw, args.noise_floor
    if args.run:
        man_path = os.path.join(args.run, "manifest.json")
        if not os.path.isfile(man_path):
            raise UsageError(f"no manifest in {args.run}")
        with open(man_path) as fh:
            radio = json.load(fh)["resolved"]["radio"]
        bw = bw or radio["bandwidth"]
        nf = radio["noise_floor_dbm"] if nf is None else nf
        files = sorted(glob.glob(os.path.join(args.run, "mpcs", "ut_*.jsonl")))
    else:
        files = list(args.mpcs)
    bw = bw or 80e6
    nf = -145.0 if nf is None else nf
    missing = [f for f in files if not os.path.isfile(f)]
    if missing or not files:
        raise UsageError(f"missing MPC input(s): {missing or 'none found'}")
    radio = RadioConfig(bandwidth=bw, noise_floor_dbm=nf)
    sets = [_read_mpcs(f, nf) for f in files]
    os.makedirs(args.output, exist_ok=True)
    if args.what == "pdp":
        path = os.path.join(args.output, "pdp.csv")
        if len(sets) == 1:
            write_pdp_csv(path, compute_pdp(sets[0], radio))
        else:
            apdp = average_pdp([UTResult(i, (), "", s, None, compute_pdp(s, radio))
                                for i, s in enumerate(sets)])
            write_csv(path, ["delay_ns", "power_dbm"], [(d * 1e9, p) for d, p in apdp])
        print(f"wrote {path}")
    elif args.what == "aoa":
        try:
            specs = [aoa_spectrum(s, args.bin, nf) for s in sets]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        lin = np.mean([[10 ** (p / 10) for _, p in sp] for sp in specs], axis=0)
        with np.errstate(divide="ignore"):
            spec = [(a, float(10 * np.log10(v))) for (a, _), v in zip(specs[0], lin)]
        path = os.path.join(args.output, "aoa.csv")
        write_aoa_csv(path, spec)
        print(f"wrote {path} ({len(spec)} bins)")
    else:
        by_class = {"LoS": [], "NLoS": []}
        for f, s in zip(files, sets):
            kept = [m for m in s if m.power_dbm >= nf]
            if not kept:
                continue
            cls = "LoS" if any(m.mpc_class.value == "LoS" for m in kept) else "NLoS"
            by_class[cls].append(rms_delay_spread(kept, nf))
        for cls, vals in by_class.items():
            path = os.path.join(args.output, f"ds_cdf_{cls.lower()}.csv")
            write_cdf_csv(path, empirical_cdf(vals) if vals else [])
            print(f"wrote {path} ({len(vals)} UTs)")
    return EXIT_OK


def cmd_coverage(args):
    if not args.res > 0:
        raise UsageError("--res must be positive")
    if not args.db_max > args.db_min:
        raise UsageError("--db-max must exceed --db-min")
    scene, radio, budget, calib = _prepare(args)
    cov = coverage_map(scene, np.array(args.bs, float), radio, budget, args.res, calib,
                       args.n_rays, args.height, args.tile, args.threads)
    os.makedirs(args.output, exist_ok=True)
    write_coverage_csv(os.path.join(args.output, "coverage.csv"), cov)
    write_pgm(os.path.join(args.output, "coverage.pgm"), cov, args.db_min, args.db_max)
    _write_json(os.path.join(args.output, "manifest.json"), {
        "command": "coverage", "argv": args._argv, "options": _args_dict(args),
        "scene": scene_to_dict(_load_scene(args.scene)), "versions": _versions(),
        "grid": list(cov.shape),
    })
    finite = cov.power_dbm[np.isfinite(cov.power_dbm)]
    peak = _fmt(float(finite.max())) if finite.size else "n/a"
    print(f"coverage grid {cov.shape[0]} x {cov.shape[1]}, peak {peak} dBm -> {args.output}")
    return EXIT_OK


def cmd_calibrate(args):
    if not args.reference or not os.path.isfile(args.reference):
        raise UsageError(f"reference file not found: {args.reference}")
    try:
        with open(args.reference) as fh:
            ref = MeasurementReference.from_json(fh.read())
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid reference: {exc}") from None
    if ref.empty:
        print("reference holds no DS CDF, PDP or peak power", file=sys.stderr)
        return EXIT_EMPTY
    scene = _load_scene(args.scene)
    radio, budget = _radio(args), _budget_of(args)
    base = _calib(args) or CalibrationConfig.identity()
    bs, uts = _positions(args)
    try:
        fit = fit_offsets(scene, bs, uts, radio, budget, ref, tuple(args.diffraction_range),
                          tuple(args.diffuse_range), args.step, args.max_evals, base,
                          args.n_rays, args.tile, args.threads)
    except EmptyObjectiveError as exc:
        print(f"objective cannot be evaluated: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    doc = fit.config.to_dict()
    doc["score"] = fit.score
    doc["evaluations"] = fit.evaluations
    doc["log"] = [{"diffraction_offset_db": d, "diffuse_offset_db": s, "score": v}
                  for d, s, v in fit.log]
    _write_json(args.output, doc)
    print(f"best offsets: diffraction {fit.config.diffraction_offset_db:+g} dB, "
          f"diffuse {fit.config.diffuse_offset_db:+g} dB (score {fit.score:.4g}, "
          f"{fit.evaluations} evaluations) -> {args.output}")
    return EXIT_OK


COMMANDS = {"scene": cmd_scene, "trace": cmd_trace, "extract": cmd_extract,
            "coverage": cmd_coverage, "calibrate": cmd_calibrate}


def main(argv=None):
    try:
        args = _parse(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SceneError as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
