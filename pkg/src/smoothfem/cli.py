"""Command-line entry point: ``smoothfem run|run-all|compare|verify|mesh-info``.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .assembly import METHODS
from .mesh import MeshError, TetMesh, extract_faces, read_mesh
from .solver import NewtonError, time_loop

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def run_scenario(cfg: sc.ScenarioConfig, out: Path, log=sys.stdout, vtk: bool = True) -> dict:
    """Run one scenario, writing ``curve.csv``, ``vtk/step_*.vtk`` and ``timing.json`` to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    prob = sc.build_problem(cfg)
    t_setup = time.perf_counter() - t0
    traj = time_loop(
        prob.disc,
        prob.steps,
        cfg.newton,
        prob.outputs(),
        output_interval=cfg.output_interval,
        output_origin=cfg.output_origin,
        state=prob.initial,
        log=log,
        keep_snapshots=vtk,
    )
    t_solve = time.perf_counter() - t0 - t_setup
    curve = sc.OutputCurve(np.array(traj.times), np.array(traj.outputs["avg_disp_mm"]))
    sc.write_curve_csv(curve, out / "curve.csv")
    if vtk:
        vdir = out / "vtk"
        vdir.mkdir(exist_ok=True)
        for i, s in enumerate(traj.snapshots):
            sc.write_vtk(s, prob.mesh, vdir / f"step_{i:04d}.vtk")
    timing = {
        "method": cfg.method,
        "kind": cfg.kind,
        "n_nodes": prob.mesh.n_nodes,
        "n_elems": prob.mesh.n_elems,
        "increments": len(traj.iterations),
        "newton_iterations": int(sum(traj.iterations)),
        "setup_s": round(t_setup, 3),
        "solve_s": round(t_solve, 3),
    }
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    return timing


def _cmd_run(args) -> int:
    cfg = sc.read_config(args.config, args.method)
    out = Path(args.out or f"out/{cfg.kind}_{cfg.method}")
    timing = run_scenario(cfg, out, log=None if args.quiet else sys.stdout, vtk=not args.no_vtk)
    print(f"wrote {out / 'curve.csv'} ({timing['solve_s']} s)")
    return EXIT_OK


def _cmd_run_all(args) -> int:
    # sequential: one process, methods written to separate directories
    base = Path(args.out or "out")
    status = EXIT_OK
    for m in args.methods:
        cfg = sc.read_config(args.config, m)
        try:
            timing = run_scenario(cfg, base / m, log=None, vtk=not args.no_vtk)
            print(f"{m}: {timing['solve_s']} s")
        except NewtonError as exc:
            print(f"{m}: failed: {exc}", file=sys.stderr)
            status = EXIT_NUMERICAL
    return status


def _cmd_compare(args) -> int:
    ref = sc.read_curve_csv(args.ref)
    test = sc.read_curve_csv(args.test)
    err, skipped = sc.relative_errors(test, ref)
    if skipped:
        print(f"excluded {skipped} sample(s) with reference below 1e-12 mm", file=sys.stderr)
    if err.size == 0:
        print("no comparable samples", file=sys.stderr)
        return EXIT_USAGE
    print(repr(float(err.mean())))
    return EXIT_OK


def _verify_volumes(mesh) -> list[str]:
    from .smoothing import build_face_domains, build_node_domains

    total = mesh.volumes.sum()
    failures = []
    for kind, doms in (("face", build_face_domains(mesh)), ("node", build_node_domains(mesh))):
        vk = sum(d.volume for d in doms)
        if abs(vk - total) > 1e-12 * total:
            failures.append(f"{kind} domains: sum {vk!r} != mesh volume {total!r}")
        # every element quarter used exactly four times per kind
        uses = np.zeros(mesh.n_elems, dtype=int)
        for d in doms:
            np.add.at(uses, list(d.adjacent_elems), 1)
        if np.any(uses != 4):
            failures.append(f"{kind} domains: element quarter audit failed")
    return failures


def _verify_patch(mesh) -> list[str]:
    from .smoothing import (
        build_face_domains,
        build_node_domains,
        element_deformation_gradients,
        smooth_deformation_gradient,
        smooth_electric_field,
    )

    rng = np.random.default_rng(0)
    A = 0.1 * rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    u = mesh.nodes @ A.T
    Fe = element_deformation_gradients(mesh, u)
    # linear potential in the current configuration: phi = c . x
    phi = (mesh.nodes + u) @ c
    failures = []
    for d in build_face_domains(mesh) + build_node_domains(mesh):
        F = smooth_deformation_gradient(d, u)
        if np.abs(F - np.eye(3) - A).max() > 1e-12 * max(1.0, np.abs(A).max()):
            failures.append(f"{d.kind} {d.key}: F not exact")
        E = smooth_electric_field(d, phi, Fe)
        if np.abs(E + c).max() > 1e-12 * np.abs(c).max() * 10:
            failures.append(f"{d.kind} {d.key}: E not exact")
    return failures


def _verify_tangents() -> list[str]:
    from .assembly import assemble, build_discretization
    from .constitutive import DielectricParams, MyocardiumParams

    rng = np.random.default_rng(1)
    failures = []
    for kind in ("tet", "hex"):
        mesh = sc.generate_cube_mesh(1.0, 2, kind)
        methods = ("hex",) if kind == "hex" else ("tet", "fs", "ns", "fsns")
        for m in methods:
            for mat in (DielectricParams(), MyocardiumParams()):
                def frames(pts):
                    return sc.fiber_frames(pts, 1.0)

                disc = build_discretization(m, mesh, mat, frames)
                st = disc.initial_state(-80.0 if isinstance(mat, MyocardiumParams) else 0.0)
                st.u = 0.05 * rng.standard_normal(st.u.shape)
                st.phi = st.phi + 20.0 * rng.standard_normal(st.phi.shape)
                x0 = st.x
                K = assemble(disc, st, 1.0).K.toarray()
                Kfd = np.zeros_like(K)
                h = 1e-7
                for j in range(len(x0)):
                    hj = h * max(1.0, abs(x0[j]))
                    for sgn in (1, -1):
                        s = st.copy()
                        x = x0.copy()
                        x[j] += sgn * hj
                        s.set_x(x)
                        Kfd[:, j] -= sgn * assemble(disc, s, 1.0).R / (2 * hj)
                err = np.linalg.norm(Kfd - K) / np.linalg.norm(K)
                if err >= 1e-4:
                    failures.append(f"{m}/{type(mat).__name__}: tangent error {err:.2e}")
    return failures


def _cmd_verify(args) -> int:
    if args.suite == "tangents":
        failures = _verify_tangents()
    else:
        mesh = read_mesh(args.mesh) if args.mesh else sc.generate_cube_mesh(10.0, 5, "tet")
        if not isinstance(mesh, TetMesh):
            print("verify volumes/patch needs a tetrahedral mesh", file=sys.stderr)
            return EXIT_USAGE
        failures = _verify_volumes(mesh) if args.suite == "volumes" else _verify_patch(mesh)
    for f in failures:
        print(f"FAIL {f}")
    print(f"{args.suite}: {'FAIL' if failures else 'ok'}")
    return EXIT_NUMERICAL if failures else EXIT_OK


def _cmd_mesh_info(args) -> int:
    mesh = read_mesh(args.mesh)
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    kind = "tet" if isinstance(mesh, TetMesh) else "hex"
    print(f"kind: {kind}")
    print(f"nodes: {mesh.n_nodes}")
    print(f"elements: {mesh.n_elems}")
    print(f"volume: {mesh.volumes.sum()!r}")
    print(f"bounds: {lo.tolist()} .. {hi.tolist()}")
    if kind == "tet":
        faces = extract_faces(mesh)
        n_int = sum(len(a) == 2 for _, a in faces)
        print(f"faces: {len(faces)} ({n_int} interior, {len(faces) - n_int} boundary)")
    for name, idx in mesh.node_sets.items():
        print(f"set {name}: {len(idx)} nodes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smoothfem", description="Smoothed FEM electromechanics solver")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--out")
    r.add_argument("--no-vtk", action="store_true", help="skip the VTK series")
    r.add_argument("--quiet", action="store_true", help="suppress the progress log")
    r.set_defaults(func=_cmd_run)

    ra = sub.add_parser("run-all", help="run every method for one config")
    ra.add_argument("--config", required=True)
    ra.add_argument("--out")
    ra.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    ra.add_argument("--no-vtk", action="store_true")
    ra.set_defaults(func=_cmd_run_all)

    c = sub.add_parser("compare", help="mean relative error of a curve against a reference")
    c.add_argument("--ref", required=True)
    c.add_argument("--test", required=True)
    c.set_defaults(func=_cmd_compare)

    v = sub.add_parser("verify", help="run an oracle suite")
    v.add_argument("--suite", required=True, choices=("volumes", "patch", "tangents"))
    v.add_argument("--mesh", help="tet mesh file (default: generated 5x5x5-node cube)")
    v.set_defaults(func=_cmd_verify)

    mi = sub.add_parser("mesh-info", help="summarise a mesh file")
    mi.add_argument("--mesh", required=True)
    mi.set_defaults(func=_cmd_mesh_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NewtonError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (sc.ConfigError, MeshError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
