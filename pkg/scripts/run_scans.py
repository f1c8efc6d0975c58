#!/usr/bin/env python3
"""Run the scan grids of the shipped configs and report each optimum.

Results are resumable: rerunning skips points already present in the CSV.
"""
import argparse
import os
from pathlib import Path

from e2readout.atom import MHZ
from e2readout.cli import RunConfig
from e2readout.scan import find_optimum, run_scan

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ["fig4_quench.json", "figS2_d2.json", "figS3_e2only.json"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", default=DEFAULT)
    ap.add_argument("--workers", type=int, default=os.cpu_count())
    ap.add_argument("--out", default=ROOT / "results", type=Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for name in args.configs:
        path = Path(name) if Path(name).exists() else ROOT / "configs" / name
        cfg = RunConfig.load(path)
        csv = args.out / (cfg.output.scan_csv or f"{path.stem}_scan.csv")
        res = run_scan(cfg.grid(), cfg.model_for(cfg.scan.mode), workers=args.workers, output=csv)
        print(f"{path.name}: {len(res.records)} points, {res.n_failed} failed -> {csv}")
        try:
            best = find_optimum(res, cfg.scan.objective, cfg.scan.infidelity_cap)
        except ValueError as exc:
            print(f"  no optimum: {exc}")
            continue
        where = ", ".join(f"{k}={v / MHZ:g} MHz" for k, v in best.params.items())
        print(f"  optimum {where}: T={best.time * 1e6:.1f} us, infidelity {best.infidelity:.3e}")


if __name__ == "__main__":
    main()
