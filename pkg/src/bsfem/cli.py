"""Command-line experiment runner.

`run` solves one configuration and writes its reports; `matrix` sweeps
the full pairing x case x mesh grid into one consolidated CSV.  CG
non-convergence is a recorded scientific outcome, so the exit status
stays 0 unless the pipeline itself fails.
"""

import argparse
import json
import os
import sys
import time
from multiprocessing import Pool

import numpy as np

from . import __version__
from .mesh import build_model, default_local_box, mesh_summary
from .solver import CgSettings, SizeLimitError
from .verify import (SERIES_COLUMNS, convergence_study, StudyConfig,
                     error_distribution_experiment, manufactured_case,
                     quadrature_policy, quadrature_sensitivity, run_point,
                     write_error_field_csv, write_sensitivity_csv,
                     write_series_csv)

PROPOSED_PAIRINGS = [("bspline", p, q) for p in (2, 3) for q in (1, 2, 3)]
CONVENTIONAL_PAIRINGS = [("lagrange", p, q) for p in (1, 2, 3)
                         for q in (1, 2, 3)]


def _parse_global_basis(text):
    try:
        family, order = text.split(":")
        order = int(order)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected FAMILY:ORDER (e.g. bspline:3), got {text!r}")
    if family not in ("bspline", "lagrange"):
        raise argparse.ArgumentTypeError(f"unknown family {family!r}")
    return family, order


def _parse_elems(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected integer list like 6,9,12, got {text!r}")


def _validate_method(args):
    family, order = args.global_basis
    if args.method == "proposed" and (family, order) not in \
            [(f, p) for f, p, _ in PROPOSED_PAIRINGS]:
        raise SystemExit(
            f"usage error: proposed method needs a B-spline global basis "
            f"of order 2 or 3, got {family}:{order}")
    if args.method == "conventional" and (family != "lagrange"
                                          or order not in (1, 2, 3)):
        raise SystemExit(
            f"usage error: conventional method needs a Lagrange global "
            f"basis of order 1-3, got {family}:{order}")
    if args.local_order not in (1, 2, 3):
        raise SystemExit(
            f"usage error: local order must be 1-3, got {args.local_order}")


def _tag(family, order, local_order, case, n_e):
    return f"{family}{order}_q{local_order}_case{case}_{n_e}"


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _run_one(task):
    """Worker body for one grid point; returns the CSV record."""
    family, order, local_order, case, n_e, options = task
    tag = _tag(family, order, local_order, case, n_e)
    out_dir = options["out"]
    record_path = os.path.join(out_dir, f"run_{tag}.json")
    if options.get("resume") and os.path.exists(record_path):
        with open(record_path) as fh:
            stored = json.load(fh)
        stored["resumed"] = True
        return stored["record"]

    t0 = time.perf_counter()
    try:
        record, result, err = run_point(
            family, order, local_order, case, n_e,
            quad_points=options.get("quad"), spd=options.get("spd", False),
            spd_dense_limit=options.get("spd_dense_limit", 25000))
    except SizeLimitError as exc:
        record = {"case": case, "global_family": family,
                  "global_order": order, "local_order": local_order,
                  "n_e": n_e, "error": str(exc)}
        _atomic_write(record_path, json.dumps({"record": record}, indent=2))
        return record

    payload = {
        "record": record,
        "mesh": mesh_summary(result.model),
        "solve": {
            "converged": result.report.converged,
            "iterations": result.report.iterations,
            "relative_residual": result.report.relative_residual,
            "breakdown": result.report.breakdown,
            "wall_time": result.report.wall_time,
            "assembly_time": result.assembly_time,
        },
        "error": {
            "l2_relative": err.error,
            "numerator_outside": err.numerator_outside,
            "numerator_inside": err.numerator_inside,
            "denominator": err.denominator,
        },
        "total_time": time.perf_counter() - t0,
    }
    if result.spd is not None:
        payload["spd"] = {
            "positive_definite": result.spd.positive_definite,
            "failing_index": result.spd.failing_index,
            "failing_pivot": result.spd.failing_pivot,
        }
    _atomic_write(record_path, json.dumps(payload, indent=2))

    if options.get("history"):
        result.report.write_history_csv(
            os.path.join(out_dir, f"residual_{tag}.csv"))
    if options.get("export_matrix"):
        from .assembly import assemble_system
        k, _, _ = assemble_system(result.model, manufactured_case(),
                                  result.quad_points)
        k.write_matrix_market(os.path.join(out_dir, f"matrix_{tag}.mtx"))
    return record


def _write_manifest(out_dir, args_dict, started, records):
    manifest = {
        "version": __version__,
        "config": args_dict,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "points": len(records),
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, default=str))


def cmd_run(args):
    _validate_method(args)
    family, order = args.global_basis
    if args.out is None:
        args.out = "out"
    os.makedirs(args.out, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    options = {"out": args.out, "quad": args.quad, "spd": args.spd,
               "history": args.history, "resume": args.resume,
               "export_matrix": args.export_matrix}
    records = []
    for n_e in args.elems:
        rec = _run_one((family, order, args.local_order, args.case, n_e,
                        options))
        records.append(rec)
        conv = rec.get("cg_converged", "n/a")
        print(f"{_tag(family, order, args.local_order, args.case, n_e)}: "
              f"l2_error={rec.get('l2_error', 'n/a')} "
              f"cg_converged={conv} spd={rec.get('spd', '')}")

    write_series_csv(os.path.join(args.out, "results.csv"), records)

    if args.sensitivity:
        table = quadrature_sensitivity(family, order, args.local_order,
                                       args.case, min(args.elems))
        write_sensitivity_csv(os.path.join(args.out, "sensitivity.csv"),
                              table)
        print(f"sensitivity stabilization order: "
              f"{table.stabilization_order}")
    if args.error_field:
        report, result = error_distribution_experiment(
            family, order, local_order=args.local_order,
            n_e=min(args.elems), ratio=(10, 3))
        write_error_field_csv(os.path.join(args.out, "error_field.csv"),
                              report, result.model.local_mesh)
        print(f"error field: max crossing {report.max_crossing:.3e}, "
              f"max non-crossing {report.max_noncrossing:.3e}")
    _write_manifest(args.out, vars(args) | {"global_basis": f"{family}:{order}"},
                    started, records)
    return 0


def cmd_matrix(args):
    if args.out is None:
        args.out = "out"
    if args.elems is None:
        args.elems = [6, 9, 12]
    if args.cases is None:
        args.cases = "A,B"
    if args.jobs is None:
        args.jobs = 1
    os.makedirs(args.out, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    pairings = PROPOSED_PAIRINGS + CONVENTIONAL_PAIRINGS
    cases = args.cases.split(",")
    options = {"out": args.out, "quad": args.quad, "spd": args.spd,
               "history": False, "resume": args.resume,
               "export_matrix": False}
    tasks = [(family, order, q, case, n_e, options)
             for family, order, q in pairings
             for case in cases
             for n_e in args.elems]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            records = pool.map(_run_one, tasks)
    else:
        records = []
        for task in tasks:
            rec = _run_one(task)
            records.append(rec)
            print(f"done: {_tag(*task[:5])}", flush=True)
    write_series_csv(os.path.join(args.out, "results.csv"), records)
    _write_manifest(args.out, vars(args), started, records)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bsfem",
        description="Superposed-mesh FEM experiments for the 3D Poisson "
                    "problem (B-spline or Lagrange global basis).")
    parser.add_argument("--config", help="JSON file with default options "
                                         "(flags override)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one configuration")
    run.add_argument("--method", choices=("proposed", "conventional"),
                     required=True)
    run.add_argument("--global-basis", type=_parse_global_basis,
                     required=True, metavar="FAMILY:ORDER",
                     help="e.g. bspline:3 or lagrange:2")
    run.add_argument("--local-order", type=int, required=True)
    run.add_argument("--case", choices=("A", "B"), required=True)
    run.add_argument("--elems", type=_parse_elems, required=True,
                     help="global elements per axis, single or comma list")
    run.add_argument("--quad", type=int, default=None,
                     help="override Gauss points per axis")
    run.add_argument("--spd", action="store_true",
                     help="run the Cholesky positive-definiteness test")
    run.add_argument("--sensitivity", action="store_true",
                     help="sweep assembly quadrature orders p+1..p+10")
    run.add_argument("--error-field", action="store_true",
                     help="run the extreme-ratio error-distribution "
                          "experiment at the coarsest mesh")
    run.add_argument("--history", action="store_true",
                     help="write CG residual history CSV")
    run.add_argument("--export-matrix", action="store_true",
                     help="write the assembled matrix in Matrix Market "
                          "format")
    run.add_argument("--out", default=None)
    run.add_argument("--resume", action="store_true")
    run.set_defaults(func=cmd_run)

    matrix = sub.add_parser("matrix",
                            help="sweep all 15 pairings over cases and "
                                 "meshes")
    matrix.add_argument("--elems", type=_parse_elems, default=None)
    matrix.add_argument("--cases", default=None)
    matrix.add_argument("--quad", type=int, default=None)
    matrix.add_argument("--spd", action="store_true")
    matrix.add_argument("--jobs", type=int, default=None)
    matrix.add_argument("--out", default=None)
    matrix.add_argument("--resume", action="store_true")
    matrix.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # Config supplies values only where the command line kept the
        # parser default; explicit flags always win.
        with open(args.config) as fh:
            file_defaults = json.load(fh)
        for key, value in file_defaults.items():
            attr = key.replace("-", "_")
            if getattr(args, attr, None) in (None, False):
                setattr(args, attr, value)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
