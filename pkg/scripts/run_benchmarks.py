"""Run every method on the shipped configs and print a comparison table.

    python3 scripts/run_benchmarks.py [--out results] [--configs configs/dea.cfg ...]

Curves land in <out>/<config stem>/<method>/curve.csv; errors are against HEX.
"""

import argparse
import sys
from pathlib import Path

from smoothfem import scenarios as sc
from smoothfem.assembly import METHODS
from smoothfem.cli import run_scenario

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--configs", nargs="+", default=[str(ROOT / "configs" / "dea.cfg"), str(ROOT / "configs" / "myo.cfg")])
    ap.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    args = ap.parse_args()

    for path in map(Path, args.configs):
        curves, timings = {}, {}
        for m in args.methods:
            cfg = sc.read_config(path, method=m)
            out = Path(args.out) / path.stem / m
            timings[m] = run_scenario(cfg, out, log=None, vtk=False)
            curves[m] = sc.read_curve_csv(out / "curve.csv")
        print(f"\n{path.name}")
        print(f"{'method':8s} {'peak [mm]':>10s} {'t_peak':>7s} {'err vs hex':>11s} {'newton':>7s} {'solve [s]':>9s}")
        for m, c in curves.items():
            k = int(c.values.argmax())
            err = sc.mean_relative_error(c, curves["hex"]) if "hex" in curves and m != "hex" else float("nan")
            t = timings[m]
            print(f"{m:8s} {c.values[k]:10.5f} {c.times[k]:7.1f} {err:11.4f} {t['newton_iterations']:7d} {t['solve_s']:9.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
