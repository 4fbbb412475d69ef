"""Command-line entry point: ``uwqkd <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .channel import PRESETS, load_presets, parse_water
from .decoy import ECMode, KeyRateParams, SourceParams, keyrate_curve, reference_point
from .pipeline import RunConfig, Seeds, StageError, distill, load_manifest, simulate

log = logging.getLogger("uwqkd")

CURVE_COLUMNS = ("water", "L_m", "attenuation_db", "Qu_bps", "Eu", "Q1_bps", "e1", "R_skr_bps")
RUN_FIELDS = {f.name for f in fields(RunConfig)}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    g.add_argument("--pulses", type=int)
    g.add_argument("--water", help="preset name or c=VALUE (1/m)")
    g.add_argument("--presets-file", dest="presets_file")
    g.add_argument("--length-m", dest="length_m", type=float)
    g.add_argument("--eta-opt-db", dest="eta_opt_db", type=float)
    g.add_argument("--total-db", dest="total_db", type=float,
                   help="total loss in dB; sets the length to match")
    g.add_argument("--u", type=float)
    g.add_argument("--v", type=float)
    g.add_argument("--rep-rate", dest="rep_rate", type=float)
    g.add_argument("--disclosure", type=float)
    g.add_argument("--q0-bps", dest="q0_bps", type=float)
    g.add_argument("--e-det", dest="e_det", type=float)
    g.add_argument("--epoch-frames", dest="epoch_frames", type=int)
    g.add_argument("--groups-per-pa", dest="groups_per_pa", type=int)
    g.add_argument("--transport", choices=("inproc", "socket"))
    g.add_argument("--capture", action="store_true", help="log link frames to link_capture.bin")


def _run_config(args, **required) -> RunConfig:
    over = {k: getattr(args, k) for k in RUN_FIELDS if getattr(args, k, None) is not None}
    over.update(required)
    if args.config:
        return RunConfig.from_json(args.config, **over)
    return RunConfig(**over)


def _summary(res) -> None:
    m = res.manifest
    print(f"run directory: {res.run_dir}")
    if "tallies" in m:
        t = m["tallies"]
        print(f"Qu={t['Qu']:.1f} bps  Qv={t['Qv']:.1f} bps  Q0={t['Q0']:.2f} bps  "
              f"Eu={t['Eu']:.4f}  Ev={t['Ev']:.4f}  E0={t['E0']:.4f}")
    print(f"groups ok/failed: {m['groups_ok']}/{m['groups_failed']}  "
          f"PA blocks: {len(m['blocks'])}  leaked bits: {m['leaked_bits']}")
    print(f"final key: {m['key_bits']} bits, alice/bob identical: {m['keys_identical']}")


def cmd_simulate(args) -> int:
    cfg = _run_config(args, seed=args.seed, **({"output_dir": args.output_dir}
                                                if args.output_dir else {}))
    try:
        res = simulate(cfg, capture=args.capture)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    _summary(res)
    if res.manifest.get("warning"):
        print(f"warning: {res.manifest['warning']}", file=sys.stderr)
    return 0 if res.manifest["keys_identical"] else 1


def cmd_distill(args) -> int:
    run = Path(args.run_dir)
    if (run / "manifest.json").exists() and args.seed is None:
        cfg, seeds = load_manifest(run)
        if args.transport:
            cfg = replace(cfg, transport=args.transport)
    elif args.seed is not None:
        cfg = _run_config(args, seed=args.seed, output_dir=str(run))
        seeds = Seeds.derive(args.seed)
    else:
        print("error: no manifest.json in run directory; pass --seed", file=sys.stderr)
        return 2
    try:
        res = distill(run, cfg, seeds, capture=args.capture)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    _summary(res)
    return 0 if res.manifest["keys_identical"] else 1


def cmd_keyrate_curve(args) -> int:
    presets = dict(PRESETS)
    if args.presets_file:
        presets.update(load_presets(args.presets_file))
    waters = [parse_water(w, presets) for w in (args.water or ["JerlovI"])]
    if args.kappa is not None:
        src = SourceParams(u=args.u, v=args.v, kappa=args.kappa)
    else:
        src = replace(reference_point().src, u=args.u, v=args.v)
    y0 = src.y0_from_rate(args.q0_bps)
    kp = KeyRateParams(ideal_f_ec=args.f_ec)
    mode = ECMode(args.mode)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for water in waters:
            for pt in keyrate_curve(water, args.L_min, args.L_max, args.step, src, kp,
                                    eta_opt_db=args.eta_opt_db, y0=y0, e_det=args.e_det,
                                    mode=mode):
                w.writerow((water.name, *(f"{x:.6g}" for x in pt.row())))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_tomography(args) -> int:
    from .tomography import read_counts_csv, tomography_table
    rows = tomography_table(read_counts_csv(args.counts))
    if not rows:
        print("error: no rows in counts file", file=sys.stderr)
        return 1
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if out is not sys.stdout:
            out.close()
    fids = [r["fidelity"] for r in rows if r["fidelity"] == r["fidelity"]]
    if fids:
        print(f"mean fidelity: {sum(fids) / len(fids):.4f}", file=sys.stderr)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest(seed=args.seed, fixture=args.fixture) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwqkd", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="photon simulation plus key distillation")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output-dir", dest="output_dir")
    _add_run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("distill", help="key distillation on a recorded run directory")
    p.add_argument("run_dir")
    p.add_argument("--seed", type=int, help="required when the directory has no manifest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("keyrate-curve", help="analytic key rate against distance (CSV)")
    p.add_argument("--water", action="append", help="repeatable; preset name or c=VALUE")
    p.add_argument("--presets-file")
    p.add_argument("--L-min", dest="L_min", type=float, default=0.0)
    p.add_argument("--L-max", dest="L_max", type=float, default=350.0)
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--mode", choices=[m.value for m in ECMode], default="ldpc")
    p.add_argument("--eta-opt-db", type=float, default=9.59)
    p.add_argument("--e-det", type=float, default=0.015)
    p.add_argument("--q0-bps", type=float, default=16.7)
    p.add_argument("--u", type=float, default=0.8)
    p.add_argument("--v", type=float, default=0.1)
    p.add_argument("--f-ec", type=float, default=1.16, help="inefficiency in ideal mode")
    p.add_argument("--kappa", type=float,
                   help="signal-pool factor; default fits Qu=1200.1 bps at 300 m Jerlov I")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_keyrate_curve)

    p = sub.add_parser("tomography", help="density matrices and fidelities from counts")
    p.add_argument("counts", help="CSV: state,n_H,n_V,n_P,n_M[,n_R,n_L]")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("selftest", help="fast oracle and invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixture", help="alternative LDPC base-matrix file")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
