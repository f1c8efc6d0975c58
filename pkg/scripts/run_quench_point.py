#!/usr/bin/env python3
"""Simulate the quench-field readout point of configs/fig4_quench.json.

Prints time to 100 photons and Raman infidelity, and writes the
population trajectory next to the report.
"""
import argparse
import time
from pathlib import Path

from e2readout.cli import RunConfig
from e2readout.lindblad import integrate
from e2readout.scan import run_point

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "fig4_quench.json", type=Path)
    ap.add_argument("--out", default=ROOT / "results", type=Path)
    args = ap.parse_args()

    cfg = RunConfig.load(args.config)
    model = cfg.model_for(cfg.beams.preset)
    params = cfg.beams.params()
    t0 = time.perf_counter()
    rec = run_point(model, params)
    if not rec.ok:
        raise SystemExit(f"simulation failed: {rec.error}")
    print(f"equations        {rec.equation_count}")
    print(f"time to photons  {rec.time * 1e6:.2f} us")
    print(f"Raman infidelity {rec.infidelity:.4e}")
    print(f"trace error      {rec.trace_error:.1e}")
    print(f"wall time        {time.perf_counter() - t0:.1f} s")

    args.out.mkdir(parents=True, exist_ok=True)
    traj = integrate(model.system(params), rec.time, n_points=201)
    traj.to_csv(args.out / "quench_point_trajectory.csv", [f"config_hash={cfg.config_hash()}"])
    print(f"trajectory written to {args.out / 'quench_point_trajectory.csv'}")


if __name__ == "__main__":
    main()
