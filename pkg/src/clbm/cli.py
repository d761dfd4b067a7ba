"""Command-line front end: simulate | matrices | analyze | estimate | sweep.

Every output file embeds the hash of its run manifest so identical
invocations produce byte-identical, attributable artifacts.  Exit codes:
0 success, 2 configuration error, 3 capacity refusal, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .carleman import (
    CapacityError,
    IntegrationBlowup,
    assemble_first_order,
    assemble_streaming,
    block_census,
    convergence_window,
    norm_report,
)
from .instances import (
    catalog,
    derive_lattice,
    find_instance,
    instance_from_config,
    lattice_oracle,
    load_config,
)
from .lattice import GridSpec, AllFluid
from .lbm import SimConfig, run, snapshot_rows
from .qre import CostModelConfig, estimate_instance, fit_power_law, sweep

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4


@dataclass
class RunManifest:
    command: str
    instance: str
    overrides: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    seed: int = 0
    version: str = __version__

    def as_dict(self) -> dict:
        # outputs are recorded by basename so identical invocations into
        # different directories stay byte-identical
        return {
            "command": self.command,
            "instance": self.instance,
            "overrides": self.overrides,
            "outputs": sorted(os.path.basename(p) for p in self.outputs),
            "seed": self.seed,
            "version": self.version,
        }

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _write_json(path: str, payload: dict, manifest: RunManifest) -> None:
    payload = dict(payload)
    payload["manifest"] = manifest.as_dict()
    payload["manifest_hash"] = manifest.hash()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows, manifest: RunManifest) -> None:
    with open(path, "w") as fh:
        fh.write(f"# manifest_hash={manifest.hash()}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_simulate(args) -> int:
    try:
        if args.config:
            inst = instance_from_config(load_config(args.config))
        elif args.instance:
            inst = find_instance(args.instance)
        else:
            print("simulate: need --instance or --config", file=sys.stderr)
            return EXIT_CONFIG
        dx_rule = args.dx if args.dx is not None else "char_length_over_re"
        lattice = derive_lattice(inst, tau=args.tau, dx_rule=dx_rule)
        if lattice.grid.n > 64**3:
            print(
                f"simulate: grid {lattice.grid.shape()[::-1]} exceeds the desk-scale "
                "limit (~64^3 nodes); supply --dx for a coarser grid",
                file=sys.stderr,
            )
            return EXIT_CAPACITY
        oracle = lattice_oracle(inst, lattice)
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"simulate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cfg = SimConfig(tau=args.tau, initial_velocity=(lattice.lattice_velocity, 0.0, 0.0))
    out = _outdir(args)
    manifest = RunManifest(
        "simulate",
        inst.name,
        overrides={"tau": args.tau, "dx": args.dx, "steps": args.steps},
    )
    try:
        result = run(cfg, lattice.grid, oracle, args.steps, dx=lattice.dx, dt=lattice.dt)
    except FloatingPointError as exc:
        print(f"simulate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not all(np.isfinite(result.drag)):
        print("simulate: drag series contains non-finite values", file=sys.stderr)
        return EXIT_NUMERICAL

    drag_path = os.path.join(out, f"{inst.name}-drag.csv")
    manifest.outputs.append(drag_path)
    snap_path = os.path.join(out, f"{inst.name}-snapshot.csv")
    manifest.outputs.append(snap_path)
    _write_csv(
        drag_path,
        ["step", "drag_N", "total_mass", "max_density_deviation"],
        zip(result.steps, result.drag, result.mass, result.max_density_deviation),
        manifest,
    )
    final = result.snapshots[max(result.snapshots)]
    _write_csv(snap_path, ["x", "y", "z", "i", "f"], snapshot_rows(final), manifest)
    print(f"simulate: wrote {drag_path} and {snap_path}")
    return EXIT_OK


def cmd_matrices(args) -> int:
    try:
        dims = [int(v) for v in args.grid.split(",")]
        grid = GridSpec(*dims)
    except (ValueError, TypeError) as exc:
        print(f"matrices: bad grid spec {args.grid!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(args)
    manifest = RunManifest(
        "matrices", f"grid-{args.grid}", overrides={"variant": args.variant, "tau": args.tau, "cap": args.cap}
    )
    oracle = AllFluid()
    try:
        blocks = assemble_first_order(grid, oracle, args.tau, args.variant, cap=args.cap)
    except CapacityError as exc:
        print(f"matrices: {exc}", file=sys.stderr)
        return EXIT_CAPACITY

    paths = {}
    for name, triples in (("s_plus_f1", blocks.s_plus_f1), ("f2", blocks.f2), ("f3", blocks.f3)):
        path = os.path.join(out, f"{name}-{args.variant}.coo")
        paths[name] = path
        manifest.outputs.append(path)
        with open(path, "w") as fh:
            fh.write(f"# manifest_hash={manifest.hash()} shape={triples.shape}\n")
            for r, c, v in zip(triples.rows, triples.cols, triples.values):
                fh.write(f"{r} {c} {v!r}\n")

    census = {m: block_census(m, variant=args.variant).__dict__ for m in ("f1", "f2", "f3")}
    census_path = os.path.join(out, f"census-{args.variant}.json")
    manifest.outputs.append(census_path)
    _write_json(census_path, {"census": census, "grid": dims, "tau": args.tau}, manifest)
    print(f"matrices: wrote {', '.join(paths.values())} and {census_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        rep = norm_report(args.tau)
        window = convergence_window(args.phi0_inf, args.tau)
    except ValueError as exc:
        print(f"analyze: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(args)
    manifest = RunManifest("analyze", "norms", overrides={"tau": args.tau, "phi0_inf": args.phi0_inf})
    path = os.path.join(out, "analysis.json")
    manifest.outputs.append(path)
    payload = {
        "norms": rep.as_dict(),
        "spectral_bound_nearest_int": round(rep.spectral_bound),
        "convergence": window.as_dict(),
    }
    _write_json(path, payload, manifest)
    print(f"analyze: wrote {path}")
    return EXIT_OK


def _config_from_args(args) -> CostModelConfig:
    return CostModelConfig(tau=args.tau, encoding=args.encoding)


def cmd_estimate(args) -> int:
    try:
        inst = find_instance(args.instance)
        lattice = derive_lattice(inst, tau=args.tau)
        config = _config_from_args(args)
        est = estimate_instance(lattice, config)
    except (KeyError, ValueError) as exc:
        print(f"estimate: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(args)
    manifest = RunManifest(
        "estimate", inst.name, overrides={"tau": args.tau, "encoding": args.encoding}
    )
    path = os.path.join(out, f"{inst.name}-estimate.json")
    manifest.outputs.append(path)
    _write_json(path, est.as_dict(), manifest)
    print(f"estimate: wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        names = args.instances.split(",") if args.instances else [
            inst.name for inst in catalog() if inst.name.startswith("sphere")
        ]
        lattices = [derive_lattice(find_instance(n), tau=args.tau) for n in names]
        config = _config_from_args(args)
        rows = sweep(lattices, config)
        slope, intercept, residual = fit_power_law(
            [(r["reynolds"], r["product"]) for r in rows]
        )
    except (KeyError, ValueError) as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(args)
    manifest = RunManifest(
        "sweep", ",".join(names), overrides={"tau": args.tau, "encoding": args.encoding}
    )
    csv_path = os.path.join(out, "sweep.csv")
    fit_path = os.path.join(out, "sweep-fit.json")
    manifest.outputs.extend([csv_path, fit_path])
    _write_csv(
        csv_path,
        [
            "instance",
            "reynolds",
            "qubits",
            "t_gates",
            "product",
            "per_encoding_t_gates",
            "unstructured_over_bespoke",
            "model_id",
        ],
        (
            [
                r["instance"],
                r["reynolds"],
                r["qubits"],
                r["t_gates"],
                r["product"],
                r["per_encoding_t_gates"],
                r["unstructured_over_bespoke"],
                r["model_id"],
            ]
            for r in rows
        ),
        manifest,
    )
    _write_json(
        fit_path,
        {"slope": slope, "intercept": intercept, "residual": residual, "points": len(rows)},
        manifest,
    )
    print(f"sweep: wrote {csv_path} and {fit_path}; log-log slope {slope:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clbm",
        description=(
            "Lattice Boltzmann reference simulation, collision-matrix analysis and "
            "fault-tolerant resource estimation for drag-force problems. Advective "
            "time scales of the built-in hull records are stored at one significant "
            "figure; sphere instances keep full precision."
        ),
    )
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--format", choices=["json", "csv"], default="json", help="preferred report format")
    parser.add_argument("--tau", type=float, default=0.6, help="BGK relaxation parameter, (0.5, 1]")
    parser.add_argument(
        "--encoding", choices=["bespoke", "unstructured"], default="bespoke",
        help="block-encoding family used for collision matrices",
    )
    parser.add_argument("--config", help="instance config JSON path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the classical reference simulator")
    p.add_argument("--instance", help="catalog instance name")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--dx", type=float, help="override grid spacing in meters (desk-scale runs)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("matrices", help="assemble coordinate files and exact censuses")
    p.add_argument("--grid", default="1,1,1", help="comma separated nx,ny,nz")
    p.add_argument("--variant", choices=["dense", "sparse"], default="dense")
    p.add_argument("--cap", type=int, default=2048, help="explicit-assembly cap on nQ")
    p.set_defaults(func=cmd_matrices)

    p = sub.add_parser("analyze", help="norm bounds and convergence window report")
    p.add_argument("--phi0-inf", dest="phi0_inf", type=float, default=0.2958)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("estimate", help="resource estimate for one instance")
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="estimate across instances and fit the scaling")
    p.add_argument("--instances", help="comma separated names (default: all spheres)")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CLBM_LOG", "WARNING"))
    threads = os.environ.get("CLBM_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except IntegrationBlowup as exc:
        print(f"{args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
