"""Acceptance suite: one verdict line per criterion.

Run under pytest (verdicts are also printed in the terminal summary) or
directly with ``python3 tests/test_acceptance.py``.
"""

import json
import math
import sys
import tempfile
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from e2readout.analysis import (CountHistogram, fit_histogram, fit_lifetime, fit_ramsey, fit_tof, ramsey_fringe,
                                tof_radius, window_loss)
from e2readout.angular import clebsch_gordan, wigner3j, wigner6j
from e2readout.atom import MHZ, build_basis, cs_readout_basis, load_constants, state_energy
from e2readout.cli import RunConfig
from e2readout.coupling import d2_six_beams
from e2readout.lindblad import assemble, integrate
from e2readout.rates import (CS_E2_ANCHOR, DetectionChain, depump_probability, depump_rate, detection_budget,
                             n_gamma, poisson_classifier, saturation_intensity, scattering_rate)
from e2readout.scan import ReadoutModel, ScanGrid, run_point, run_scan

sys.path.insert(0, str(Path(__file__).parent))
from conftest import TOY  # noqa: E402
from test_lindblad import toy_system  # noqa: E402
from test_rates import brute_classifier, brute_depump  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
VERDICTS: dict[int, str] = {}


def within(x, target, rel):
    return abs(x - target) <= rel * abs(target)


def verdict(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    return ok


# -- criteria ------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    got = {(sp, pw): n_gamma(load_constants(sp), pw) for sp in ("cs", "rb87") for pw in ("d2", "cascade")}
    dt = time.perf_counter() - t0
    want = {("cs", "d2"): 3.92e4, ("cs", "cascade"): 1.85e7, ("rb87", "d2"): 3.82e4, ("rb87", "cascade"): 2.75e4}
    ok = all(within(got[k], v, 0.03) for k, v in want.items()) and dt < 1.0
    text = ", ".join(f"{sp} {pw}={got[(sp, pw)]:.4g}" for sp, pw in want)
    return verdict(1, ok, f"N_gamma {text}; {dt * 1e3:.0f} ms")


def criterion_2():
    t0 = time.perf_counter()
    cs = load_constants("cs")
    got = [saturation_intensity(f, 4, "E2", cs, CS_E2_ANCHOR) for f in (5, 4, 3, 2)]
    dt = time.perf_counter() - t0
    want = [1.484, 2.821, 6.529, 22.852]
    ok = all(within(g, w, 0.02) for g, w in zip(got, want)) and dt < 1.0
    return verdict(2, ok, "I_sat(f''=5..2) = " + ", ".join(f"{g:.4g}" for g in got) + f" W/cm^2; {dt * 1e3:.0f} ms")


def criterion_3():
    r = depump_rate(1.8, -0.4 * MHZ)
    p = depump_probability(r, 0.2)
    ok = within(r, 0.04, 0.10) and within(p, 0.008, 0.10)
    return verdict(3, ok, f"depump rate {r:.5g} 1/s, 200 ms probability {p:.5g}")


def criterion_4():
    g = 5.23 * MHZ
    n = scattering_rate(2.5, -5.64 * g, g) * 70e-3
    a, b = DetectionChain(0.082, 0.8, 0.55), DetectionChain(0.28, 0.8, 0.5)
    ca, cb = detection_budget(a, 22000), detection_budget(b, 100)
    ok = (within(n, 22000, 0.02) and round(a.eta, 3) == 0.036 and round(b.eta, 2) == 0.11
          and ca == a.eta * 22000 and round(ca, -1) == 790 and cb == b.eta * 100 and round(cb) == 11)
    return verdict(4, ok, f"photons in 70 ms {n:.0f}; eta {a.eta:.4g} -> {ca:.1f} counts; eta {b.eta:.3g} -> {cb:.1f}")


@lru_cache(maxsize=None)
def fig4_config():
    return RunConfig.load(CONFIGS / "fig4_quench.json")


def criterion_5():
    basis = cs_readout_basis()
    cfg = fig4_config()
    n_eq = cfg.system().equation_count
    ok = len(basis) == 93 and within(n_eq, 1899, 0.15)
    return verdict(5, ok, f"{len(basis)} states, {n_eq} equations ({(n_eq / 1899 - 1) * 100:+.1f}% vs 1899)")


def criterion_6():
    cs = load_constants("cs")
    basis = build_basis(cs, ["5d5/2"])
    s = basis.state("5d5/2", 6, -6)
    shift = (state_energy(basis, s, 1e-5) - state_energy(basis, s, 0.0)) / MHZ
    return verdict(6, within(shift, -0.420, 0.05), f"5d5/2 |6,-6> shift {shift * 1e3:.1f} kHz (x 2pi)")


@lru_cache(maxsize=None)
def fig4_point():
    cfg = fig4_config()
    t0 = time.perf_counter()
    rec = run_point(cfg.model_for("e2_quench"), cfg.beams.params())
    return rec, time.perf_counter() - t0


def criterion_7():
    rec, dt = fig4_point()
    if not rec.ok:
        return verdict(7, False, f"simulation failed: {rec.error}")
    t_ok = within(rec.time, 60e-6, 0.25)
    f_ok = 5.03e-4 / 2 <= rec.infidelity <= 5.03e-4 * 2
    ok = t_ok and f_ok and dt < 60
    return verdict(7, ok, f"T={rec.time * 1e6:.1f} us ({'in' if t_ok else 'outside'} 45-75 us), "
                          f"infidelity {rec.infidelity:.3g} ({'in' if f_ok else 'outside'} x2 of 5.03e-4), "
                          f"{dt:.1f} s")


def _scan(cfg: RunConfig, grid: ScanGrid, workers=2):
    return run_scan(grid, cfg.model_for(grid.mode), workers=workers)


def criterion_8():
    cfg = RunConfig.load(CONFIGS / "figS2_d2.json")
    half_gamma = -0.5 * load_constants("cs").level("6p3/2").gamma / MHZ
    dets = cfg.scan.axes_mhz["detuning"]
    det = min(dets, key=lambda d: abs(d - half_gamma))
    if abs(det - half_gamma) > 1e-3:
        return verdict(8, False, f"shipped grid has no -Gamma/2 slice (nearest {det} MHz)")
    grid = ScanGrid({"rabi": [r * MHZ for r in cfg.scan.axes_mhz["rabi"]]}, {"detuning": det * MHZ}, "d2")
    res = _scan(cfg, grid)
    near = [r for r in res.records if r.ok and within(r.time, 60e-6, 0.25)]
    if not near:
        return verdict(8, False, "no slice point with T within 45-75 us")
    best = min(near, key=lambda r: r.infidelity)
    ok = 2e-3 <= best.infidelity <= 8e-3
    return verdict(8, ok, f"Delta=-Gamma/2 slice, {len(near)} points near 60 us; minimum infidelity "
                          f"{best.infidelity:.3g} at rabi {best.params['rabi'] / MHZ:g} MHz, T={best.time * 1e6:.1f} us")


def criterion_9():
    cfg = RunConfig.load(CONFIGS / "figS3_e2only.json")
    res = _scan(cfg, cfg.grid())
    good = [r for r in res.records if r.ok and r.infidelity < 1e-3 and 0.3e-3 <= r.time <= 20e-3]
    ok = bool(good)
    if not ok:
        return verdict(9, False, f"no grid point below 1e-3 at ms-scale times ({res.n_failed} failed)")
    best = min(good, key=lambda r: r.infidelity)
    return verdict(9, ok, f"{len(good)}/{len(res.records)} grid points qualify; best {best.infidelity:.3g} "
                          f"at T={best.time * 1e3:.2f} ms")


def _angular_errors() -> float:
    worst = 0.0
    js = [x / 2 for x in range(0, 9)]
    for j1 in js:
        for j2 in js:
            for j3 in js:
                for m1 in np.arange(-j1, j1 + 1):
                    for m2 in np.arange(-j2, j2 + 1):
                        m3 = -m1 - m2
                        if abs(m3) > j3:
                            continue
                        w = wigner3j(j1, j2, j3, m1, m2, m3)
                        sign = (-1) ** round(j1 + j2 + j3)
                        worst = max(worst, abs(w - wigner3j(j2, j3, j1, m2, m3, m1)),
                                    abs(w - sign * wigner3j(j2, j1, j3, m2, m1, m3)),
                                    abs(w - sign * wigner3j(j1, j2, j3, -m1, -m2, -m3)))
    for j1, j2 in [(0.5, 1), (1.5, 2), (3.5, 1.5), (2.5, 2)]:
        pairs = [(m1, m2) for m1 in np.arange(-j1, j1 + 1) for m2 in np.arange(-j2, j2 + 1)]
        jm = [(j, m) for j in np.arange(abs(j1 - j2), j1 + j2 + 1) for m in np.arange(-j, j + 1)]
        u = np.array([[clebsch_gordan(j1, m1, j2, m2, j, m) for (m1, m2) in pairs] for (j, m) in jm])
        worst = max(worst, np.max(np.abs(u @ u.T - np.eye(len(jm)))))
    for j1, j2, j4, j5 in [(1, 1.5, 2, 0.5), (3.5, 1, 2.5, 2), (2, 2, 1, 1)]:
        j3s = [j for j in np.arange(abs(j1 - j2), j1 + j2 + 1) if abs(j4 - j5) <= j <= j4 + j5]
        j6s = [j for j in np.arange(abs(j1 - j5), j1 + j5 + 1) if abs(j4 - j2) <= j <= j4 + j2]
        for a in j3s:
            for b in j3s:
                s = sum((2 * a + 1) * (2 * c + 1) * wigner6j(j1, j2, a, j4, j5, c) * wigner6j(j1, j2, b, j4, j5, c)
                        for c in j6s)
                worst = max(worst, abs(s - (a == b)))
        for a in j3s:
            for c in j6s:
                w = wigner6j(j1, j2, a, j4, j5, c)
                worst = max(worst, abs(w - wigner6j(j2, j1, a, j5, j4, c)), abs(w - wigner6j(j4, j5, a, j1, j2, c)))
    return worst


def criterion_10():
    notes, ok = [], True
    cs = load_constants("cs")

    basis = build_basis(cs, ["6s1/2", "6p3/2"])
    system = assemble(basis, d2_six_beams(2.0 * MHZ, -2.6 * MHZ), 1e-5)
    tr = max(float(np.max(np.abs(integrate(system, 30e-6, n_points=31, method=m).trace - 1)))
             for m in ("spectral", "DOP853"))
    ok &= tr < 1e-7
    notes.append(f"trace {tr:.1e}")

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "toy.json"
        path.write_text(json.dumps(TOY))
        om = 1.3 * MHZ
        sys2, b2 = toy_system(str(path), om, gamma_mhz=0.0, tmp=Path(d))
        t = np.linspace(0, 3e-6, 61)
        pe = integrate(sys2, t[-1], ("1s1/2", 0.5, 0.5), t_eval=t).populations[:, b2.index("2p3/2", 1.5, 1.5)]
        rabi = float(np.max(np.abs(pe - np.sin(om * t / 2) ** 2)))
        toy = load_constants("toy", str(path))
        gamma, s = toy.level("2p3/2").gamma, 2.5
        sys3, b3 = toy_system(str(path), gamma * math.sqrt(s / 2))
        pe = integrate(sys3, 60 / gamma, ("1s1/2", 0.5, 0.5), n_points=3).populations[-1, b3.index("2p3/2", 1.5, 1.5)]
        steady = abs(pe - s / (2 * (1 + s)))
    ok &= rabi < 1e-8 and steady < 1e-8
    notes.append(f"rabi {rabi:.1e}, steady state {steady:.1e}")

    ang = _angular_errors()
    ok &= ang < 1e-12
    notes.append(f"3j/6j/CG {ang:.1e}")

    dep = max(abs(depump_rate(i, d * MHZ, cs) / brute_depump(cs, i, d * MHZ) - 1)
              for i, d in [(1.8, -0.4), (0.3, 0.0), (5.0, -2.0)])
    ok &= dep < 1e-12
    notes.append(f"depump {dep:.1e}")

    cls = all(poisson_classifier(a, b)[0] == brute_classifier(a, b)[0]
              for a, b in [(0.0, 11.0), (1.0, 11.0), (0.3, 4.0), (2.0, 30.0)])
    ok &= cls
    notes.append(f"classifier {'exact' if cls else 'MISMATCH'}")

    grid = ScanGrid({"rabi": [1.0 * MHZ, 2.0 * MHZ, 4.0 * MHZ]}, {"detuning": -2.6 * MHZ}, "d2")
    with tempfile.TemporaryDirectory() as d:
        run_scan(grid, ReadoutModel(mode="d2"), workers=1, output=Path(d) / "a.csv")
        run_scan(grid, ReadoutModel(mode="d2"), workers=3, output=Path(d) / "b.csv")
        same = (Path(d) / "a.csv").read_bytes() == (Path(d) / "b.csv").read_bytes()
    ok &= same
    notes.append(f"scan {'byte-identical' if same else 'DIFFERS'}")
    return verdict(10, bool(ok), "; ".join(notes))


def criterion_11():
    errs = {}
    edges = np.arange(-40.5, 200.5, 1.0)
    w, md, sd, mb, sb = 0.59, 0.0, 7.0, 75.0, 15.0
    h = CountHistogram(edges, 1e4 * (w * np.diff(norm.cdf(edges, md, sd)) + (1 - w) * np.diff(norm.cdf(edges, mb, sb))))
    rep = fit_histogram(h)
    truth = {"amplitude": 1e4, "weight_dark": w, "sigma_dark": sd, "mean_bright": mb, "sigma_bright": sb}
    errs["histogram"] = max([abs(rep[k] / v - 1) for k, v in truth.items()] + [abs(rep["mean_dark"]) / sd])

    def overlap(t):
        return (w * quad(lambda x: norm.pdf(x, md, sd), t, np.inf)[0]
                + (1 - w) * quad(lambda x: norm.pdf(x, mb, sb), -np.inf, t)[0])
    oracle = 1 - min(overlap(t) for t in np.linspace(md, mb, 1501))
    dfid = abs(rep.extra["fidelity"] - oracle)

    tt = np.array([0.5, 1, 2, 5, 10, 20.0])
    rep = fit_lifetime(tt, 0.97 * np.exp(-tt / 43), window=0.2)
    errs["lifetime"] = max(abs(rep["tau"] / 43 - 1), abs(rep["amplitude"] / 0.97 - 1))
    loss = rep.extra["window_loss"]

    tt = np.linspace(0, 0.02, 8)
    rep = fit_tof(tt, tof_radius(tt, 1e-4, 5.3e-6))
    errs["tof"] = max(abs(rep["w0"] / 1e-4 - 1), abs(rep["temperature"] / 5.3e-6 - 1))

    phi = np.linspace(0, 2 * np.pi, 13)
    scans = {d: (phi, ramsey_fringe(phi, 0.9 * math.exp(-d / 7.6e-3), 0.3)) for d in (1e-3, 3e-3, 6e-3, 10e-3)}
    rep = fit_ramsey(scans)
    errs["ramsey"] = max(abs(rep["t2"] / 7.6e-3 - 1), abs(rep["a0"] / 0.9 - 1))

    ok = max(errs.values()) < 1e-6 and dfid <= 3e-4 and within(loss, 0.0046, 0.02) \
        and within(window_loss(43, 0.2), 0.0046, 0.02)
    fits = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    return verdict(11, ok, f"max relative error {fits}; fidelity {oracle:.5f} vs oracle, diff {dfid:.1e}; "
                           f"window loss {loss * 100:.4f}%")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{k:02d}" for k in range(1, 12)])
def test_acceptance(criterion):
    assert criterion(), VERDICTS.get(CRITERIA.index(criterion) + 1)


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
