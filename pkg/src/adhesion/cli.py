"""Command line interface.

    adhesion classify | thresholds | lattice | solve-star | construct | verify | report

Exit codes: 0 success, 1 verification failure, 2 usage or regime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io, lattice, model, pde, pipeline
from .errors import AdhesionError, MissingArtifacts, OutOfRange, RegimeError, WrongRegime

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _run_dir(args, cfg_dict: dict, command: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg_dict.get("output_dir"):
        return Path(cfg_dict["output_dir"])
    key = hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:10]
    return io.output_root() / f"{command}-{key}"


def _load_config(args) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    over = {k: getattr(args, k) for k in ("seed", "M0", "alpha", "beta")
            if getattr(args, k, None) is not None}
    return replace(cfg, **over) if over else cfg


# ------------------------------------------------------------ run directory

def _write_fields(run: pipeline.Run, out: Path, with_u: bool) -> list[str]:
    sf = run.sf
    x, t = sf.grid.x, sf.times
    emit = run.config.emit
    files = []
    bands = None
    if run.th is not None:
        p = run.config.params
        bands = (model.inverse_branch(p, run.th.r1, "minus"),
                 model.inverse_branch(p, run.th.r2, "plus"))
    named = [("u_star", sf.u_star)] + ([("u", run.u)] if with_u else [])
    for name, arr in named:
        if emit.get("csv", True):
            io.write_field_csv(out / "fields" / f"{name}.csv", arr, x, t, name,
                               alpha=run.config.alpha, beta=run.config.beta)
            files.append(f"fields/{name}.csv")
        if emit.get("svg", True):
            io.write_svg_heatmap(out / "plots" / f"{name}.svg", arr, x, t, bands=bands,
                                 title=f"{name}(x, t)")
            files.append(f"plots/{name}.svg")
    return files


def _write_surgery(run: pipeline.Run, out: Path) -> list[str]:
    files = []
    stages = []
    for st in run.stages:
        rel = f"surgery/stage_{st.stage}.npy"
        io.write_blocks(out / rel, pipeline.blocks_to_arrays(st.blocks))
        files.append(rel)
        stages.append(dict(stage=st.stage, file=rel, n_blocks=len(st.blocks), info=st.info))
    io.write_json(out / "surgery.json", dict(fields=list(pipeline.BLOCK_FIELDS),
                                             surgery=asdict(run.config.surgery_config()),
                                             stages=stages))
    files.append("surgery.json")
    return files


def write_run(run: pipeline.Run, out: Path, command: str, with_u: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", run.config.to_dict())
    files = ["config.json"] + _write_fields(run, out, with_u)
    if run.state is not None:
        files += _write_surgery(run, out)
    derived = pipeline.derived_constants(run)
    if run.classical:
        try:
            C, gam, r2 = pde.decay_fit(run.sf)
            derived["decay_fit"] = dict(C=C, gamma=gam, r2=r2)
        except AdhesionError as e:
            derived["decay_fit"] = dict(error=str(e))
    manifest = dict(command=command, code_version=code_version(), config=run.config.to_dict(),
                    derived=derived, files={f: io.sha256(out / f) for f in sorted(files)},
                    timings=run.timings)
    io.write_json(out / "manifest.json", manifest)
    return manifest


def load_run(out: Path):
    """(run, manifest) rebuilt from a run directory without re-packing."""
    manifest = io.read_json(out / "manifest.json")
    cfg = pipeline.RunConfig.from_dict(manifest["config"])
    blocks, info = [], []
    if (out / "surgery.json").exists():
        sj = io.read_json(out / "surgery.json")
        for s in sj["stages"]:
            blocks.append(pipeline.blocks_from_arrays(io.read_blocks(out / s["file"])))
            info.append(s["info"])
    run = pipeline.rebuild(cfg, blocks, info)
    return run, manifest


# ------------------------------------------------------------ commands

def cmd_classify(args) -> int:
    if args.sweep:
        n = args.sweep
        a = np.linspace(0.0, 1.0, n)
        rows = [(al, be, model.classify(model.FluxParams(al, be)).variant) for be in a for al in a]
        counts = {v: sum(r[2] == v for r in rows) for v in model.VARIANTS}
        text = "alpha,beta,variant\n" + "".join(f"{al:.17g},{be:.17g},{v}\n" for al, be, v in rows)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        print(json.dumps(dict(grid=n, counts=counts)), file=sys.stderr if not args.out else sys.stdout)
        return EXIT_OK
    if args.alpha is None or args.beta is None:
        print("classify needs --alpha and --beta, or --sweep N", file=sys.stderr)
        return EXIT_USAGE
    ec = model.classify(model.FluxParams(args.alpha, args.beta))
    print(json.dumps(dict(alpha=args.alpha, beta=args.beta, variant=ec.variant,
                          degenerate_points=sorted(ec.degenerate_points),
                          forward_intervals=ec.forward_intervals,
                          backward_intervals=ec.backward_intervals,
                          z_rho=sorted(ec.z_rho), z_sigma=sorted(ec.z_sigma)), default=float))
    return EXIT_OK


def cmd_thresholds(args) -> int:
    p = model.FluxParams(args.alpha, args.beta)
    th0 = model.thresholds(p)
    lo, hi = th0.rho_at_s0_plus, th0.r_star
    r1 = lo + args.r1_fraction * (hi - lo)
    r2 = lo + args.r2_fraction * (hi - lo)
    th = model.with_levels(p, th0, r1, r2)
    d = {k: v for k, v in asdict(th).items() if k != "extras"}
    print(json.dumps(d, indent=2))
    return EXIT_OK


def cmd_lattice(args) -> int:
    p = model.FluxParams(args.alpha, args.beta)
    levels = args.levels
    out = _run_dir(args, dict(cmd="lattice", alpha=args.alpha, beta=args.beta, L=args.L,
                              M0=args.M0, levels=levels, t_end=args.t_end), "lattice")
    files = {}
    for n in levels:
        st = lattice.LatticeState.from_profile(n, args.L, args.M0)
        traj = lattice.integrate(st, p, args.t_end, n_out=args.n_out)
        rel = f"lattice_n{n}.csv"
        io.write_trajectory_csv(out / rel, traj, alpha=args.alpha, beta=args.beta)
        files[rel] = io.sha256(out / rel)
    s = np.linspace(0.0, args.M0, 20001)
    forward = bool(np.all(model.sigma(p, s)[:-1] > 0))
    table = dict(levels=levels, t_end=args.t_end, forward=forward)
    if forward and args.t_end > 0 and not args.no_reference:
        cs = lattice.convergence_study(p, levels, args.L, args.M0, args.t_end)
        table.update(errors=cs.errors, monotone=cs.monotone, reference_nx=cs.reference_nx)
        for n, e in zip(levels, cs.errors):
            print(f"n={n}  sup error {e:.4e}")
    elif not forward:
        table["note"] = "backward diffusion reached: qualitative only, no reference"
    io.write_json(out / "convergence.json", table)
    io.write_json(out / "manifest.json", dict(command="lattice", code_version=code_version(),
                                              files=files, table=table))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve_star(args) -> int:
    cfg = _load_config(args)
    classical, th = pipeline.regime_check(cfg, allow_classical=True)
    t0 = time.perf_counter()
    run = pipeline.solve_classical(cfg, th) if classical else pipeline.prepare(cfg, th)
    run.timings["total"] = time.perf_counter() - t0
    out = _run_dir(args, cfg.to_dict(), "solve-star")
    write_run(run, out, "solve-star", with_u=False)
    print(f"{'classical' if classical else 'modified'} solve, T0 = {run.sf.T0}; wrote {out}")
    return EXIT_OK


def cmd_construct(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    run = pipeline.construct(cfg, allow_classical=args.classical)
    run.timings["total"] = time.perf_counter() - t0
    out = _run_dir(args, cfg.to_dict(), "construct")
    write_run(run, out, "construct", with_u=not run.classical)
    for st in run.stages:
        i = st.info
        print(f"stage {st.stage}: {i['n_blocks']} diamonds, uncovered {i['uncovered_fraction']:.3f}")
    print(f"wrote {out} in {run.timings['total']:.1f} s")
    return EXIT_OK


def verify_dir(out: Path, residuals: bool = True):
    run, manifest = load_run(out)
    bad = [f for f, h in manifest["files"].items()
           if not (out / f).exists() or io.sha256(out / f) != h]
    u_star, x, t, _ = io.read_field_csv(out / "fields" / "u_star.csv")
    if (out / "fields" / "u.csv").exists():
        u, _, _, _ = io.read_field_csv(out / "fields" / "u.csv")
    else:
        u = u_star
    if u.shape != run.sf.u_star.shape:
        raise MissingArtifacts("field files do not match the configured grid")
    rep = pipeline.verify_run(run, residuals=residuals, u_field=u, u_star_field=u_star)
    rep.add("artifacts: files matching the manifest", len(manifest["files"]) - len(bad),
            len(manifest["files"]), not bad, note=", ".join(bad))
    rebuilt = float(np.max(np.abs(u - run.u)))
    rep.add("u file equals the stored construction", rebuilt, 1e-12, rebuilt <= 1e-12)
    rep.data["manifest_command"] = manifest["command"]
    return rep


def cmd_verify(args) -> int:
    out = Path(args.run_dir)
    rep = verify_dir(out, residuals=not args.no_residuals)
    io.write_json(out / "report.json", json.loads(rep.to_json()))
    print(rep.summary())
    if "residual_max" in rep.data:
        print("max |R| per stage (u*, 1, 2, ...):",
              " ".join(f"{v:.4e}" for v in rep.data["residual_max"]))
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(args) -> int:
    out = Path(args.run_dir)
    manifest = io.read_json(out / "manifest.json")
    d = manifest.get("derived", {})
    print(f"run {out}  ({manifest['command']}, version {manifest['code_version']})")
    cfg = manifest.get("config", {})
    print(f"alpha={cfg.get('alpha')} beta={cfg.get('beta')} M0={cfg.get('M0')} "
          f"seed={cfg.get('seed')} variant={d.get('variant')} classical={d.get('classical')}")
    if "i0" in d:
        print(f"kappa0={d['kappa0']:.6g} ell0={d['ell0']:.6g} i0={d['i0']}")
    for s in d.get("stages", []):
        print(f"stage {s['stage']}: {s['n_blocks']} diamonds, covered area {s['covered_area']:.4g}"
              f", uncovered {s['uncovered_fraction']:.3f}, max diameter {s['max_diameter']:.4g}")
    for k, v in sorted(manifest.get("timings", {}).items()):
        print(f"time {k}: {v:.2f} s")
    rp = out / "report.json"
    if rp.exists():
        rep = io.read_json(rp)
        for c in rep["checks"]:
            res = "pass" if c["passed"] else ("FAIL" if c["hard"] else "warn")
            print(f"  {c['name']:<52} {c['value']:12.4e}  tol {c['tolerance']:10.3e}  {res}")
        print("PASS" if rep["passed"] else "FAIL")
        return EXIT_OK if rep["passed"] else EXIT_FAIL
    print("no report.json yet; run `adhesion verify` first")
    return EXIT_OK


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adhesion", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="equation type of (alpha, beta), or a phase-diagram sweep")
    c.add_argument("--alpha", type=float)
    c.add_argument("--beta", type=float)
    c.add_argument("--sweep", type=int, metavar="N", help="N x N sweep of the unit square")
    c.add_argument("--out", help="CSV file for the sweep (default stdout)")
    c.set_defaults(func=cmd_classify)

    c = sub.add_parser("thresholds", help="critical densities and flux levels")
    c.add_argument("--alpha", type=float, default=0.75)
    c.add_argument("--beta", type=float, default=0.9)
    c.add_argument("--r1-fraction", type=float, default=0.0)
    c.add_argument("--r2-fraction", type=float, default=1.0)
    c.set_defaults(func=cmd_thresholds)

    c = sub.add_parser("lattice", help="lattice trajectories and the continuum comparison")
    c.add_argument("--alpha", type=float, default=0.5)
    c.add_argument("--beta", type=float, default=1.0)
    c.add_argument("--L", type=float, default=1.0)
    c.add_argument("--M0", type=float, default=0.8)
    c.add_argument("--levels", type=int, nargs="+", default=[5, 6, 7, 8])
    c.add_argument("--t-end", type=float, default=0.02)
    c.add_argument("--n-out", type=int, default=10)
    c.add_argument("--no-reference", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_lattice)

    for name, func, hlp in (("solve-star", cmd_solve_star, "solve the (modified) problem only"),
                            ("construct", cmd_construct, "full construction")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("--config", help="RunConfig JSON (defaults: reference mixture run)")
        c.add_argument("--out")
        c.add_argument("--seed", type=int)
        c.add_argument("--M0", type=float)
        c.add_argument("--alpha", type=float)
        c.add_argument("--beta", type=float)
        if name == "construct":
            c.add_argument("--classical", action="store_true",
                           help="fall back to u* when no mixture is needed")
        c.set_defaults(func=func)

    c = sub.add_parser("verify", help="check a run directory, write report.json")
    c.add_argument("run_dir")
    c.add_argument("--no-residuals", action="store_true")
    c.set_defaults(func=cmd_verify)

    c = sub.add_parser("report", help="summarise a run directory")
    c.add_argument("run_dir")
    c.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (RegimeError, WrongRegime, OutOfRange) as e:
        print(f"regime error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifacts, ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
