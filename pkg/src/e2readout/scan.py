"""Parameter scans of (time to N photons, Raman infidelity).

Grid points are independent, so they are farmed out to worker processes and
the results are sorted canonically before anything is written. Output files
are therefore byte-identical for any worker count, and a partially written
file can be resumed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Literal, Mapping, Sequence

import numpy as np

from . import __version__
from .atom import MHZ, MU_B_OVER_HBAR, ConfigurationError, build_basis, load_constants
from .coupling import d2_six_beams, e2_six_beams, quench_pair
from .lindblad import EngineOptions, MasterEquationSystem, assemble, measure
from .rates import ladder

Mode = Literal["d2", "e2", "e2_quench"]
MODE_AXES = {
    "d2": ("rabi", "detuning"),
    "e2": ("rabi_e2", "detuning_e2"),
    "e2_quench": ("rabi_e1", "rabi_e2", "detuning_e1", "detuning_e2"),
}


@dataclass(frozen=True)
class ReadoutModel:
    """Everything about a simulated readout except the scanned parameters."""

    mode: Mode = "e2_quench"
    species: str = "cs"
    b_field: float = 1e-5  # tesla
    n_target: float = 100.0
    t_cap: float = 20e-3
    pruning: str = "selection"
    e2_normalization: str = "geometric"
    axial: str = "sigma_pm"
    quench_beams: int = 2
    quench_reversed: str = "lab"
    quench_rabi_is: str = "field"
    detuning_reference: str = "zero_field"  # or "lowest_zeeman"
    method: str = "spectral"
    constants_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODE_AXES:
            raise ConfigurationError(f"unknown scan mode {self.mode!r}")
        if self.detuning_reference not in ("zero_field", "lowest_zeeman"):
            raise ConfigurationError(f"unknown detuning reference {self.detuning_reference!r}")
        if self.n_target <= 0 or self.t_cap <= 0:
            raise ConfigurationError("n_target and t_cap must be positive")

    def constants(self):
        return _constants(self.species, self.constants_path)

    def basis(self):
        c = self.constants()
        lad = ladder(c)
        if self.mode == "d2":
            return build_basis(c, [lad.ground, lad.p])
        # the lowest D-level manifold cannot be reached by E2 from the upper ground f
        fmin = min(c.hyperfine_fs(lad.d))
        fg = max(c.hyperfine_fs(lad.ground))
        excl = [(lad.d, fmin)] if fg - fmin > 2 else []
        return build_basis(c, [lad.ground, lad.p, lad.d], exclusions=excl)

    def _zeeman_offset(self, upper: str, f_upper: float, lower: str, f_lower: float) -> float:
        """Shift from the zero-field resonance to the lowest Zeeman component."""
        if self.detuning_reference == "zero_field":
            return 0.0
        c = self.constants()
        gu, gl = c.g_f(upper, f_upper), c.g_f(lower, f_lower)
        mu = MU_B_OVER_HBAR * self.b_field
        shifts = [gu * m * mu for m in np.arange(-f_upper, f_upper + 1)]
        return float(min(shifts))

    def beams(self, params: Mapping[str, float]):
        c = self.constants()
        lad = ladder(c)
        missing = [a for a in MODE_AXES[self.mode] if a not in params]
        if missing:
            raise ConfigurationError(f"mode {self.mode} needs parameters {missing}")
        fg = max(c.hyperfine_fs(lad.ground))
        if self.mode == "d2":
            fp = max(c.hyperfine_fs(lad.p))
            det = params["detuning"] + self._zeeman_offset(lad.p, fp, lad.ground, fg)
            return d2_six_beams(params["rabi"], det, (lad.ground, lad.p), ((fg, fg), (fp, fp)))
        if c.species != "cs":
            raise ConfigurationError("quadrupole beam sets are defined for Cs only")
        fd = max(c.hyperfine_fs(lad.d))
        det2 = params["detuning_e2"] + self._zeeman_offset(lad.d, fd, lad.ground, fg)
        beams = e2_six_beams(params["rabi_e2"], det2, self.axial, self.e2_normalization)
        if self.mode == "e2_quench":
            beams += quench_pair(params["rabi_e1"], params["detuning_e1"], self.quench_beams,
                                 "geometric", self.quench_reversed, self.quench_rabi_is)
        return beams

    def system(self, params: Mapping[str, float]) -> MasterEquationSystem:
        return assemble(self.basis(), self.beams(params), self.b_field, EngineOptions(pruning=self.pruning))

    def initial_horizon(self) -> float:
        """Three times the photon time at the fastest conceivable rate."""
        c = self.constants()
        lad = ladder(c)
        g = c.level(lad.p).gamma if self.mode != "e2" else c.level(lad.d).gamma
        return min(3 * self.n_target / (g / 2), self.t_cap)


@lru_cache(maxsize=8)
def _constants(species: str, path: str | None):
    return load_constants(species, path)


@dataclass(frozen=True)
class ScanGrid:
    """Named parameter axes (rad/s) and fixed values, expanded as a product."""

    axes: Mapping[str, Sequence[float]]
    fixed: Mapping[str, float] = field(default_factory=dict)
    mode: Mode = "e2_quench"

    def __post_init__(self):
        if self.mode not in MODE_AXES:
            raise ConfigurationError(f"unknown scan mode {self.mode!r}")
        if not self.axes:
            raise ConfigurationError("scan grid has no axes")
        for name, vals in self.axes.items():
            if len(vals) == 0:
                raise ConfigurationError(f"scan axis {name!r} is empty")
            if not all(math.isfinite(v) for v in vals):
                raise ConfigurationError(f"scan axis {name!r} has non-finite values")
        overlap = set(self.axes) & set(self.fixed)
        if overlap:
            raise ConfigurationError(f"parameters both scanned and fixed: {sorted(overlap)}")
        need = set(MODE_AXES[self.mode])
        have = set(self.axes) | set(self.fixed)
        if need - have:
            raise ConfigurationError(f"mode {self.mode} is missing parameters {sorted(need - have)}")
        if have - need:
            raise ConfigurationError(f"mode {self.mode} does not use parameters {sorted(have - need)}")

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return MODE_AXES[self.mode]

    @property
    def n_points(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def points(self) -> list[dict[str, float]]:
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            p = dict(self.fixed)
            p.update(zip(names, combo))
            out.append({k: float(p[k]) for k in self.parameter_names})
        return out


@dataclass
class PointRecord:
    params: dict[str, float]
    status: str  # "ok" or "failed"
    time: float = math.nan  # s
    infidelity: float = math.nan
    equation_count: int = 0
    digest: str = ""
    trace_error: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _fmt(x: float, digits: int = 10) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.{digits}e}"


def _mhz(x: float) -> str:
    return f"{x / MHZ:.9g}"


def _key(params: Mapping[str, float], names: Sequence[str]) -> tuple[str, ...]:
    return tuple(_mhz(params[n]) for n in names)


@dataclass
class ScanResult:
    records: list[PointRecord]
    parameter_names: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def sorted(self) -> "ScanResult":
        recs = sorted(self.records, key=lambda r: tuple(r.params[n] for n in self.parameter_names))
        return ScanResult(recs, self.parameter_names, self.provenance)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for k in sorted(self.provenance):
            buf.write(f"# {k}={self.provenance[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{n}_mhz" for n in self.parameter_names]
                   + ["time_us", "infidelity", "status", "equation_count", "trace_error",
                      "populations_digest", "error"])
        for r in self.sorted().records:
            w.writerow([_mhz(r.params[n]) for n in self.parameter_names]
                       + [_fmt(r.time * 1e6), _fmt(r.infidelity), r.status, r.equation_count,
                          _fmt(r.trace_error, 1), r.digest, r.error])
        text = buf.getvalue()
        if path is not None:
            tmp = f"{path}.tmp"
            with open(tmp, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        return text

    @classmethod
    def from_csv(cls, path) -> "ScanResult":
        prov: dict = {}
        rows = []
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                prov[k] = v
            elif line.strip():
                body.append(line)
        reader = csv.reader(body)
        header = next(reader)
        names = tuple(h[:-4] for h in header if h.endswith("_mhz"))
        for row in reader:
            d = dict(zip(header, row))
            params = {n: float(d[f"{n}_mhz"]) * MHZ for n in names}
            rows.append(PointRecord(
                params, d["status"], float(d["time_us"]) * 1e-6, float(d["infidelity"]),
                int(d["equation_count"]), d["populations_digest"], float(d["trace_error"]), d["error"]))
        return cls(rows, names, prov)


def config_hash(grid: ScanGrid, model: ReadoutModel) -> str:
    doc = {"grid": {"axes": {k: list(map(float, v)) for k, v in grid.axes.items()},
                    "fixed": {k: float(v) for k, v in grid.fixed.items()}, "mode": grid.mode},
           "model": asdict(model)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def run_point(model: ReadoutModel, params: dict[str, float]) -> PointRecord:
    """Evaluate one grid point; failures are recorded, never raised."""
    try:
        system = model.system(params)
        r = measure(system, model.n_target, t_guess=model.initial_horizon(), t_cap=model.t_cap,
                    method=model.method)
        man: dict[str, float] = {}
        for s in system.basis.states:
            key = f"{s.level}:{s.f:g}"
            man[key] = man.get(key, 0.0) + float(r.populations[s.index])
        digest = hashlib.sha256(
            json.dumps({k: round(v, 8) for k, v in sorted(man.items())}).encode()).hexdigest()[:12]
        return PointRecord(params, "ok", r.time, r.infidelity, r.equation_count, digest,
                           float(r.diagnostics.get("trace_error", math.nan)))
    except Exception as exc:  # recorded per point
        return PointRecord(params, "failed", error=f"{type(exc).__name__}: {exc}".replace("\n", " "))


def _run_star(args):
    return run_point(*args)


def run_scan(grid: ScanGrid, model: ReadoutModel | None = None, workers: int | None = None,
             output=None, resume: bool = True) -> ScanResult:
    """Evaluate every grid point, optionally resuming from ``output``."""
    model = model or ReadoutModel(mode=grid.mode)
    if model.mode != grid.mode:
        raise ConfigurationError(f"grid mode {grid.mode} does not match model mode {model.mode}")
    names = grid.parameter_names
    prov = {
        "toolkit_version": __version__,
        "config_hash": config_hash(grid, model),
        "constants_sha256": model.constants().checksum,
        "n_points": grid.n_points,
    }
    done: dict[tuple[str, ...], PointRecord] = {}
    if output is not None and resume and os.path.exists(output):
        prev = ScanResult.from_csv(output)
        if prev.provenance.get("config_hash") != prov["config_hash"]:
            raise ConfigurationError(f"{output} was written for a different configuration")
        done = {_key(r.params, names): r for r in prev.records}
    points = grid.points()
    todo = [p for p in points if _key(p, names) not in done]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(todo))) as ex:
            new = list(ex.map(_run_star, [(model, p) for p in todo]))
    else:
        new = [run_point(model, p) for p in todo]
    records = []
    fresh = {_key(r.params, names): r for r in new}
    for p in points:
        k = _key(p, names)
        rec = fresh.get(k) or done[k]
        # keep exactly the requested parameter values
        rec.params = dict(p)
        records.append(rec)
    result = ScanResult(records, names, prov).sorted()
    if output is not None:
        result.to_csv(output)
    return result


def find_optimum(result: ScanResult, objective: str = "min-infidelity",
                 infidelity_cap: float | None = None) -> PointRecord:
    """Best complete point.

    ``"min-infidelity"`` ranks by infidelity; ``"min-time-at-infidelity-cap"``
    ranks points with infidelity at or below ``infidelity_cap`` by time. Ties
    go to the shorter time, then to the lexicographically smaller parameters.
    """
    ok = [r for r in result.records if r.ok]
    if not ok:
        raise ValueError("no completed points to optimize over")
    names = result.parameter_names
    params = lambda r: tuple(r.params[n] for n in names)
    if objective == "min-infidelity":
        return min(ok, key=lambda r: (r.infidelity, r.time, params(r)))
    if objective == "min-time-at-infidelity-cap":
        if infidelity_cap is None:
            raise ValueError("objective needs an infidelity cap")
        cand = [r for r in ok if r.infidelity <= infidelity_cap]
        if not cand:
            raise ValueError(f"no point has infidelity <= {infidelity_cap:g}")
        return min(cand, key=lambda r: (r.time, r.infidelity, params(r)))
    raise ValueError(f"unknown objective {objective!r}")
