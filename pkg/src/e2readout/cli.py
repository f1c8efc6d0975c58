"""Command-line entry point and the run-config file format.

Exit codes: 0 success, 2 configuration error, 1 runtime failure (including
scans with failed points). Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analysis import CountHistogram, FitError, fit_histogram, fit_lifetime, fit_ramsey, fit_tof
from .atom import MHZ, ConfigurationError, build_basis, load_constants
from .coupling import BeamSpec
from .lindblad import EngineOptions, assemble, integrate, measure
from .rates import (CS_E2_ANCHOR, DetectionChain, depump_paths, depump_probability, ladder,
                    n_gamma, saturation_intensity)
from .scan import MODE_AXES, ReadoutModel, ScanGrid, ScanResult, find_optimum, run_scan

# -- run config -------------------------------------------------------------------


def _strict(cls, data: Any, where: str):
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


@dataclass
class BasisSection:
    species: str = "cs"
    b_field_tesla: float = 1e-5
    levels: list[str] | None = None
    exclusions: list[list] | None = None


@dataclass
class BeamEntry:
    """A custom beam; vectors are given as [re, im] pairs or plain reals."""

    kind: str
    lower_level: str
    upper_level: str
    k: list[float]
    polarization: list
    rabi_mhz: float
    detuning_mhz: float
    reference: list
    normalization: str = "transition"
    phase_rad: float = 0.0
    name: str = ""

    def to_beam(self) -> BeamSpec:
        pol = tuple(complex(*c) if isinstance(c, list) else complex(c) for c in self.polarization)
        (fl, ml), (fu, mu) = self.reference
        return BeamSpec(self.kind, self.lower_level, self.upper_level, tuple(map(float, self.k)), pol,
                        self.rabi_mhz * MHZ, self.detuning_mhz * MHZ,
                        ((float(fl), float(ml)), (float(fu), float(mu))),
                        self.normalization, self.phase_rad, self.name)


@dataclass
class BeamsSection:
    """Either a preset beam set with its parameters, or a list of custom beams."""

    preset: str | None = "e2_quench"
    rabi_e1_mhz: float | None = None
    rabi_e2_mhz: float | None = None
    detuning_e1_mhz: float | None = None
    detuning_e2_mhz: float | None = None
    rabi_mhz: float | None = None
    detuning_mhz: float | None = None
    custom: list[BeamEntry] | None = None

    def params(self) -> dict[str, float]:
        if self.preset is None:
            return {}
        out = {}
        for name in MODE_AXES[self.preset]:
            v = getattr(self, f"{name}_mhz")
            if v is not None:
                out[name] = v * MHZ
        return out


@dataclass
class ModelSection:
    pruning: str = "selection"
    e2_normalization: str = "geometric"
    axial: str = "sigma_pm"
    quench_beams: int = 2
    quench_reversed: str = "lab"
    quench_rabi_is: str = "field"
    method: str = "spectral"


@dataclass
class SimulationSection:
    photon_target: float = 100.0
    horizon_cap_s: float = 20e-3
    initial_state: list | None = None  # [level, f, m]; default upper ground stretched-to-zero state
    rtol: float = 1e-8
    atol: float = 1e-10
    n_points: int = 201


@dataclass
class ScanSection:
    mode: str = "e2_quench"
    axes_mhz: dict[str, list[float]] = field(default_factory=dict)
    fixed_mhz: dict[str, float] = field(default_factory=dict)
    detuning_reference: str = "zero_field"
    objective: str = "min-infidelity"
    infidelity_cap: float | None = None


@dataclass
class OutputSection:
    scan_csv: str | None = None
    trajectory_csv: str | None = None
    report_json: str | None = None


@dataclass
class RunConfig:
    description: str = ""
    constants_file: str | None = None
    basis: BasisSection = field(default_factory=BasisSection)
    beams: BeamsSection = field(default_factory=BeamsSection)
    model: ModelSection = field(default_factory=ModelSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    scan: ScanSection | None = None
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        subs = {"basis": BasisSection, "beams": BeamsSection, "model": ModelSection,
                "simulation": SimulationSection, "scan": ScanSection, "output": OutputSection}
        if not isinstance(d, dict):
            raise ConfigurationError("config: expected a JSON object")
        d = dict(d)
        for key, sub in subs.items():
            if key in d and d[key] is not None:
                d[key] = _strict(sub, d[key], key)
        cfg = _strict(cls, d, "config")
        if cfg.beams.custom is not None:
            if not isinstance(cfg.beams.custom, list):
                raise ConfigurationError("beams.custom: expected a list")
            cfg.beams.custom = [_strict(BeamEntry, b, f"beams.custom[{i}]") for i, b in enumerate(cfg.beams.custom)]
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigurationError(f"{path}: {exc.strerror}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> None:
        b, bm = self.basis, self.beams
        if not (isinstance(b.b_field_tesla, (int, float)) and math.isfinite(b.b_field_tesla)):
            raise ConfigurationError("basis.b_field_tesla must be a finite number")
        if (bm.preset is None) == (bm.custom is None):
            raise ConfigurationError("beams: give exactly one of 'preset' and 'custom'")
        if bm.preset is not None and bm.preset not in MODE_AXES:
            raise ConfigurationError(f"beams.preset must be one of {sorted(MODE_AXES)}")
        if bm.custom is not None and b.levels is None:
            raise ConfigurationError("custom beams need basis.levels")
        s = self.simulation
        if s.photon_target <= 0 or s.horizon_cap_s <= 0:
            raise ConfigurationError("simulation.photon_target and horizon_cap_s must be positive")
        if self.scan is not None:
            if self.scan.mode not in MODE_AXES:
                raise ConfigurationError(f"scan.mode must be one of {sorted(MODE_AXES)}")
            self.grid()
        self.constants()
        if bm.custom is not None:
            for e in bm.custom:
                e.to_beam()
        else:
            self.model_for(bm.preset)

    def constants(self):
        return load_constants(self.basis.species, self.constants_file)

    def model_for(self, mode: str) -> ReadoutModel:
        m = self.model
        return ReadoutModel(
            mode=mode, species=self.basis.species, b_field=self.basis.b_field_tesla,
            n_target=self.simulation.photon_target, t_cap=self.simulation.horizon_cap_s,
            pruning=m.pruning, e2_normalization=m.e2_normalization, axial=m.axial,
            quench_beams=m.quench_beams, quench_reversed=m.quench_reversed, quench_rabi_is=m.quench_rabi_is,
            detuning_reference=self.scan.detuning_reference if self.scan else "zero_field",
            method=m.method, constants_path=self.constants_file)

    def grid(self) -> ScanGrid:
        if self.scan is None:
            raise ConfigurationError("config has no scan section")
        sc = self.scan
        axes = {k: [v * MHZ for v in vals] for k, vals in sc.axes_mhz.items()}
        fixed = {k: v * MHZ for k, v in sc.fixed_mhz.items()}
        return ScanGrid(axes, fixed, sc.mode)

    def system(self):
        if self.beams.custom is None:
            return self.model_for(self.beams.preset).system(self.beams.params())
        c = self.constants()
        basis = build_basis(c, self.basis.levels, [tuple(x) for x in (self.basis.exclusions or [])])
        beams = [e.to_beam() for e in self.beams.custom]
        return assemble(basis, beams, self.basis.b_field_tesla, EngineOptions(pruning=self.model.pruning))


# -- output helpers ------------------------------------------------------------------

def _fmt(x: float, digits: int = 6) -> str:
    """Locale-independent general format with ``digits`` significant figures."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.{digits}g}"


def _provenance(config_hash: str, checksum: str) -> dict:
    return {"toolkit_version": __version__, "config_hash": config_hash, "constants_sha256": checksum}


def _write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _input_hash(path, args: dict) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    h.update(json.dumps(args, sort_keys=True).encode())
    return h.hexdigest()[:16]


def _read_columns(path, required: Sequence[str]) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    missing = [c for c in required if c not in rows[0]]
    if missing:
        raise ConfigurationError(f"{path}: missing columns {missing}")
    try:
        return {c: np.array([float(r[c]) for r in rows]) for c in required}
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


# -- subcommands -----------------------------------------------------------------------

def cmd_rates(args) -> int:
    c = load_constants(args.species)
    lad = ladder(c)
    out = sys.stdout
    fg = max(c.hyperfine_fs(lad.ground))
    if c.species == "cs":
        out.write(f"# E2 saturation intensity from {lad.ground} f={fg:g} (anchor {CS_E2_ANCHOR.intensity} W/cm^2)\n")
        out.write("f_upper,isat_w_cm2\n")
        for fd in sorted(c.hyperfine_fs(lad.d), reverse=True):
            out.write(f"{fd:g},{_fmt(saturation_intensity(fd, fg, 'E2', c, CS_E2_ANCHOR))}\n")
    fp = max(c.hyperfine_fs(lad.p))
    out.write(f"# E1 cycling saturation intensity {lad.ground} f={fg:g} -> {lad.p} f'={fp:g}: "
              f"{_fmt(saturation_intensity(fp, fg, 'E1', c) * 1e3)} mW/cm^2\n")
    if c.species == "cs" and args.intensity_w_cm2 is not None:
        paths = depump_paths(args.intensity_w_cm2, args.detuning_mhz * MHZ, c)
        rate = sum(r for *_, r in paths)
        out.write("f_d,f_p,depump_rate_per_s\n")
        for fd, fp, r in paths:
            out.write(f"{fd:g},{fp:g},{_fmt(r)}\n")
        out.write(f"# total depump rate {_fmt(rate)} 1/s; probability over {args.duration_s:g} s "
                  f"{_fmt(depump_probability(rate, args.duration_s))}\n")
    if args.eta:
        chain = DetectionChain(*args.eta)
        out.write(f"# detection efficiency {_fmt(chain.eta)}; counts per {args.photons:g} photons "
                  f"{_fmt(chain.eta * args.photons)}\n")
    return 0


def cmd_ngamma(args) -> int:
    species = ["cs", "rb87"] if args.species == "all" else [args.species]
    sys.stdout.write("species,pathway,n_gamma\n")
    for sp in species:
        c = load_constants(sp)
        for pw in ("d2", "cascade"):
            sys.stdout.write(f"{c.species},{pw},{n_gamma(c, pw):.4e}\n")
    return 0


def cmd_validate(args) -> int:
    cfg = RunConfig.load(args.config)
    text = cfg.canonical_json()
    if args.canonical:
        with open(args.canonical, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    sys.stderr.write(f"config ok (hash {cfg.config_hash()})\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.method:
        cfg.model.method = args.method
    system = cfg.system()
    s = cfg.simulation
    c = cfg.constants()
    rho0 = tuple(s.initial_state) if s.initial_state else None
    model = cfg.model_for(cfg.beams.preset or "e2_quench")
    res = measure(system, s.photon_target, rho0, t_guess=model.initial_horizon() if cfg.beams.preset else 50e-6,
                  t_cap=s.horizon_cap_s, method=cfg.model.method)
    prov = _provenance(cfg.config_hash(), c.checksum)
    summary = {"time_to_photons_us": res.time * 1e6, "raman_infidelity": res.infidelity,
               "photon_target": s.photon_target, "equation_count": system.equation_count,
               "pruning": cfg.model.pruning, "provenance": prov}
    sys.stdout.write(f"equations: {system.equation_count} (pruning {cfg.model.pruning})\n")
    sys.stdout.write(f"time to {s.photon_target:g} photons: {_fmt(res.time * 1e6)} us\n")
    sys.stdout.write(f"raman infidelity: {_fmt(res.infidelity)}\n")
    report = args.report or cfg.output.report_json
    if report:
        _write_json(report, summary)
    traj_path = args.trajectory or cfg.output.trajectory_csv
    if traj_path:
        traj = integrate(system, res.t_horizon, rho0, n_points=s.n_points, method=cfg.model.method,
                         rtol=s.rtol, atol=s.atol)
        traj.to_csv(traj_path, [f"{k}={v}" for k, v in sorted(prov.items())])
    return 0


def cmd_scan(args) -> int:
    cfg = RunConfig.load(args.config)
    if cfg.scan is None:
        raise ConfigurationError("config has no scan section")
    grid = cfg.grid()
    model = cfg.model_for(grid.mode)
    out = args.out or cfg.output.scan_csv
    sys.stderr.write(f"scan: {grid.n_points} points, mode {grid.mode}\n")
    res = run_scan(grid, model, workers=args.workers, output=out, resume=not args.no_resume)
    if out is None:
        sys.stdout.write(res.to_csv())
    ok = [r for r in res.records if r.ok]
    sys.stdout.write(f"# summary: {len(ok)} complete, {res.n_failed} failed\n")
    if ok:
        try:
            best = find_optimum(res, cfg.scan.objective, cfg.scan.infidelity_cap)
            sys.stdout.write(f"# optimum ({cfg.scan.objective}): {_params_text(best.params)} "
                             f"time {_fmt(best.time * 1e6)} us, infidelity {_fmt(best.infidelity)}\n")
        except ValueError as exc:
            sys.stdout.write(f"# no optimum: {exc}\n")
    for r in res.records:
        if not r.ok:
            sys.stderr.write(f"failed point {_params_text(r.params)}: {r.error}\n")
    return 1 if res.n_failed else 0


def _params_text(params: dict) -> str:
    return " ".join(f"{k}={_fmt(v / MHZ)}MHz" for k, v in params.items())


def cmd_find_optimum(args) -> int:
    res = ScanResult.from_csv(args.csv)
    best = find_optimum(res, args.objective, args.cap)
    sys.stdout.write(f"{_params_text(best.params)} time_us={_fmt(best.time * 1e6)} "
                     f"infidelity={_fmt(best.infidelity)}\n")
    return 0


def _emit_fit(rep, args, input_hash: str, lines: list[str]) -> int:
    doc = rep.to_dict()
    doc["provenance"] = _provenance(input_hash, "")
    for line in lines:
        sys.stdout.write(line + "\n")
    if not rep.reliable:
        sys.stdout.write("warning: estimates unreliable (" + "; ".join(rep.flags or ["no convergence"]) + ")\n")
    if args.out:
        _write_json(args.out, doc)
    return 0


def cmd_fit_histogram(args) -> int:
    try:
        cols = _read_columns(args.csv, ["bin_low", "bin_high", "occurrences"])
        edges = np.append(cols["bin_low"], cols["bin_high"][-1])
        if not np.allclose(cols["bin_low"][1:], cols["bin_high"][:-1]):
            raise ConfigurationError(f"{args.csv}: bins must be contiguous")
        h = CountHistogram(edges, cols["occurrences"])
    except FitError as exc:
        raise ConfigurationError(str(exc)) from None
    rep = fit_histogram(h, args.mode)
    p = rep.params
    return _emit_fit(rep, args, _input_hash(args.csv, vars_of(args)), [
        "  ".join(f"{k}={_fmt(v)}" for k, v in p.items()),
        f"threshold={_fmt(rep.extra['threshold'])} fidelity={rep.extra['fidelity']:.6f}"])


def vars_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_fit_lifetime(args) -> int:
    cols = _read_columns(args.csv, ["duration_s", "survival"])
    rep = fit_lifetime(cols["duration_s"], cols["survival"], args.window_s)
    lines = [f"tau={_fmt(rep['tau'])} s +/- {_fmt(rep.uncertainties['tau'])}"]
    if args.window_s is not None:
        lines.append(f"loss over {args.window_s:g} s: {_fmt(rep.extra['window_loss'] * 100)} %")
    return _emit_fit(rep, args, _input_hash(args.csv, vars_of(args)), lines)


def cmd_fit_tof(args) -> int:
    cols = _read_columns(args.csv, ["time_s", "radius_m"])
    mass = args.mass_kg if args.mass_kg is not None else load_constants(args.species).mass
    rep = fit_tof(cols["time_s"], cols["radius_m"], mass)
    return _emit_fit(rep, args, _input_hash(args.csv, vars_of(args)), [
        f"w0={_fmt(rep['w0'])} m  T={_fmt(rep['temperature'] * 1e6)} uK "
        f"+/- {_fmt(rep.uncertainties['temperature'] * 1e6)}"])


def cmd_fit_ramsey(args) -> int:
    cols = _read_columns(args.csv, ["delay_s", "phase_rad", "population"])
    scans: dict[float, tuple[list, list]] = {}
    for d, ph, n in zip(cols["delay_s"], cols["phase_rad"], cols["population"]):
        scans.setdefault(float(d), ([], []))
        scans[float(d)][0].append(ph)
        scans[float(d)][1].append(n)
    rep = fit_ramsey(scans)
    return _emit_fit(rep, args, _input_hash(args.csv, vars_of(args)), [
        f"A0={_fmt(rep['a0'])}  T2*={_fmt(rep['t2'] * 1e3)} ms +/- {_fmt(rep.uncertainties['t2'] * 1e3)}"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="e2readout", description="Quadrupole-transition qubit readout toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("rates", help="saturation intensities, depumping and detection budget")
    s.add_argument("--species", default="cs")
    s.add_argument("--intensity-w-cm2", type=float)
    s.add_argument("--detuning-mhz", type=float, default=0.0)
    s.add_argument("--duration-s", type=float, default=0.2)
    s.add_argument("--eta", type=float, nargs=3, metavar=("NA", "OPTICS", "DET"))
    s.add_argument("--photons", type=float, default=100.0)
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("ngamma", help="photons per hyperfine-changing Raman event")
    s.add_argument("--species", default="all")
    s.set_defaults(func=cmd_ngamma)

    s = sub.add_parser("simulate", help="single master-equation readout simulation")
    s.add_argument("config")
    s.add_argument("--method", choices=["spectral", "expm", "RK45", "DOP853", "Radau"])
    s.add_argument("--report")
    s.add_argument("--trajectory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("scan", help="parameter grid scan")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--out")
    s.add_argument("--no-resume", action="store_true")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("find-optimum", help="best point of a scan CSV")
    s.add_argument("csv")
    s.add_argument("--objective", default="min-infidelity",
                   choices=["min-infidelity", "min-time-at-infidelity-cap"])
    s.add_argument("--cap", type=float)
    s.set_defaults(func=cmd_find_optimum)

    s = sub.add_parser("fit-histogram", help="CSV columns bin_low,bin_high,occurrences")
    s.add_argument("csv")
    s.add_argument("--mode", default="gaussian", choices=["gaussian", "poisson"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_histogram)

    s = sub.add_parser("fit-lifetime", help="CSV columns duration_s,survival")
    s.add_argument("csv")
    s.add_argument("--window-s", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_lifetime)

    s = sub.add_parser("fit-tof", help="CSV columns time_s,radius_m")
    s.add_argument("csv")
    s.add_argument("--species", default="cs")
    s.add_argument("--mass-kg", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_tof)

    s = sub.add_parser("fit-ramsey", help="CSV columns delay_s,phase_rad,population")
    s.add_argument("csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_ramsey)

    s = sub.add_parser("validate-config", help="parse a run config and print its canonical form")
    s.add_argument("config")
    s.add_argument("--canonical", help="write the canonical config here instead of stdout")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2
    except (FitError, ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
