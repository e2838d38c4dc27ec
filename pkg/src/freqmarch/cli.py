"""Command-line driver: ``freqmarch {phantom,simulate,reconstruct,evaluate,baseline}``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .harmonics import VolumeModel
from .sphgrid import build_grids

log = logging.getLogger("freqmarch")


class CliError(RuntimeError):
    pass


def _snr(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("snr must be positive or 'inf'")
    return v


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {p}")
    return p


def _writable(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise CliError(f"output directory does not exist: {p.parent}")
    return p


def _grids_for_model(model: VolumeModel):
    ks = model.ks
    dk = float(ks[1] - ks[0]) if len(ks) > 1 else float(ks[0])
    return build_grids(float(ks.max()), dk)


def _threads(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _print_config(args) -> None:
    for key, val in sorted(vars(args).items()):
        if key != "func":
            print(f"config {key}={val}")


# ------------------------------------------------------------------ commands

def cmd_phantom(args) -> None:
    from .phantom import PhantomSpec, blob_phantom, build_truth_model, parse_pdb

    out = _writable(args.out)
    if args.pdb:
        atoms = parse_pdb(_existing(args.pdb).read_text())
        print(f"parsed {atoms.count} atoms")
        spec = PhantomSpec.from_atoms(atoms, args.D, args.blur)
    else:
        spec = blob_phantom(args.blobs, seed=args.blob_seed, D=args.D)
        print(f"built {args.blobs} random blobs")
    radial, sphere = build_grids(args.kmax, args.dk)
    print(f"grids Nr={radial.nr} Ntheta={sphere.ntheta} Nphi={sphere.nphi}")
    model = build_truth_model(spec, radial, sphere)
    fileio.write_model(out, model)
    print(f"wrote {out}")
    if args.cube:
        from .phantom import density_on_cube

        fileio.write_cube(_writable(args.cube), density_on_cube(spec, args.n))
        print(f"wrote {args.cube}")


def cmd_simulate(args) -> None:
    from .simulate import simulate_stack

    model = fileio.read_model(_existing(args.model))
    out = _writable(args.out)
    radial, sphere = _grids_for_model(model)
    t0 = time.perf_counter()
    stack = simulate_stack(model, args.M, args.snr, args.seed, radial, sphere, npix=args.npix, D=args.D,
                           ctf=not args.no_ctf)
    fileio.write_stack(out, stack)
    print(f"wrote {len(stack)} images to {out} in {time.perf_counter() - t0:.1f} s")


def _load_stack(path, kmax, dk):
    from .simulate import image_to_polar, stack_ctfs

    stack = fileio.read_stack(_existing(path))
    radial, sphere = build_grids(kmax, dk)
    polar = image_to_polar(stack.pixels, radial.k_values, sphere.nphi)
    return stack, stack_ctfs(stack), polar, radial, sphere


def cmd_reconstruct(args) -> None:
    from .march import MarchConfig, MarchingError, frequency_march

    out, trace_path = _writable(args.out), _writable(args.trace)
    stack, ctfs, polar, radial, sphere = _load_stack(args.stack, args.kmax, args.dk)
    cfg = MarchConfig(k1=args.k1, f_rand=args.frand, seed=args.seed)
    print(f"marching over {radial.nr} shells with {len(stack)} images")
    try:
        model, trace = frequency_march(polar, ctfs, radial, sphere, cfg)
    except MarchingError as exc:
        if exc.trace is not None:
            trace_path.write_text(exc.trace.to_text())
        raise CliError(f"marching failed: {exc}") from exc
    trace_path.write_text(trace.to_text())
    fileio.write_model(out, model)
    print(f"wrote {out} and {trace_path}")


def cmd_baseline(args) -> None:
    from .march import known_angles_baseline

    out = _writable(args.out)
    stack, ctfs, polar, radial, sphere = _load_stack(args.stack, args.kmax, args.dk)
    if stack.orientations is None:
        raise CliError("true orientations absent from the stack")
    model, info = known_angles_baseline(polar, stack.orientations, ctfs, radial, sphere)
    fileio.write_model(out, model)
    print(f"CG iterations per shell: {info.iterations.tolist()}")
    print(f"wrote {out}")


def cmd_evaluate(args) -> None:
    from .evaluate import evaluate_reconstruction

    recon = fileio.read_model(_existing(args.recon))
    truth = fileio.read_model(_existing(args.truth))
    radial, sphere = _grids_for_model(truth)
    rep = evaluate_reconstruction(recon, truth, radial, sphere, n=args.n, seed=args.seed,
                                  align=not args.no_align)
    text = rep.to_text()
    print(text, end="")
    if args.report:
        _writable(args.report).write_text(text)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freqmarch", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="build a ground-truth model (FMC1)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pdb", help="PDB file")
    src.add_argument("--blobs", type=int, help="random Gaussian blobs instead of a PDB entry")
    p.add_argument("--blob-seed", type=int, default=0)
    p.add_argument("--D", type=float, required=True, help="Angstrom per unit length")
    p.add_argument("--blur", type=float, default=1.0, help="blur radius b in Angstrom")
    p.add_argument("--kmax", type=float, default=70.0)
    p.add_argument("--dk", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.add_argument("--cube", help="also write the real-space density (FMV1)")
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="synthesize a particle stack (FMS1)")
    p.add_argument("--model", required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--snr", type=_snr, default=math.inf)
    p.add_argument("--npix", type=int, default=100)
    p.add_argument("--D", type=float, default=70.0, help="Angstrom per unit length (CTF scale)")
    p.add_argument("--no-ctf", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="frequency marching from a stack")
    p.add_argument("--stack", required=True)
    p.add_argument("--kmax", type=float, default=70.0)
    p.add_argument("--dk", type=float, default=2.0)
    p.add_argument("--k1", type=float, default=2.0)
    p.add_argument("--frand", type=float, default=0.02)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("baseline", help="least squares at the true orientations")
    p.add_argument("--stack", required=True)
    p.add_argument("--kmax", type=float, default=70.0)
    p.add_argument("--dk", type=float, default=2.0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="relative L2 error against a truth model")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--report")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _print_config(args)
    try:
        with _threads(getattr(args, "threads", None)):
            args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
