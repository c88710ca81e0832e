#!/usr/bin/env python3
"""Drive the energy descent on a perturbed-torus fixture and watch it land.

Typical run (from the repository root):

    python scripts/run_descent.py --fixture two_coord --resolution 16 \
        --eps 0.05 --tol 1e-6 --every 10 --out out/desk
"""

import argparse
import json
import pathlib

from hsgeom import standard_fixture
from hsgeom.descent import DescentOptions, descend
from hsgeom.hodge import Metric

HEAD = ("k", "F", "vol", "gen_vol", "grad_norm", "d_omega_norm", "step")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixture", default="two_coord",
                    choices=("two_coord", "three_coord"))
    ap.add_argument("--resolution", type=int, default=16)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--tol", type=float, default=1e-6)
    ap.add_argument("--max-iters", type=int, default=500)
    ap.add_argument("--every", type=int, default=10,
                    help="print every k-th trace row")
    ap.add_argument("--out", default=None,
                    help="directory for trace CSV/JSON (optional)")
    args = ap.parse_args()

    _, _, _, omega = standard_fixture(args.fixture, args.resolution, args.eps)
    metric = Metric(omega)
    opts = DescentOptions(tol=args.tol, max_iters=args.max_iters)
    res = descend(metric, opts)
    trace = res.trace

    def cell(row, h):
        v = row[h]
        if h == "k":
            return f"{v:12d}"
        return f"{v:12.4e}" if v is not None else " " * 12

    print("  ".join(f"{h:>12s}" for h in HEAD))
    rows = trace.iterates
    for i, row in enumerate(rows):
        if i % args.every and i != len(rows) - 1:
            continue
        print("  ".join(cell(row, h) for h in HEAD))

    cert = res.certificate
    print(f"\ntermination: {trace.termination} "
          f"after {len(rows) - 1} accepted steps")
    print(f"balanced defect  |dbar* omega| = {cert.balanced_defect:.3e}")
    print(f"kahler defect    |d omega|     = {cert.kahler_defect:.3e}")
    print(f"critical: {cert.critical}   kahler: {cert.kahler}")

    if args.out:
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(trace.to_csv())
        (out / "trace.json").write_text(json.dumps(trace.to_json(), indent=2))
        (out / "certificate.json").write_text(json.dumps(cert.to_json(),
                                                         indent=2))
        print(f"wrote {out}/trace.csv, trace.json, certificate.json")


if __name__ == "__main__":
    main()
