import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from e2readout.analysis import (CS_MASS, CountHistogram, FitError, fit_histogram, fit_lifetime, fit_ramsey,
                                fit_ramsey_fringe, fit_tof, ramsey_fringe, tof_radius, window_loss)

EDGES = np.arange(-40.5, 200.5, 1.0)


def mixture(w=0.59, md=0.0, sd=7.0, mb=75.0, sb=15.0, n=10000.0, edges=EDGES):
    return CountHistogram(edges, n * (w * np.diff(norm.cdf(edges, md, sd)) + (1 - w) * np.diff(norm.cdf(edges, mb, sb))))


def overlap_oracle(w=0.59, md=0.0, sd=7.0, mb=75.0, sb=15.0):
    """Best single-threshold error by numeric integration and a dense threshold scan."""
    def err(t):
        a = quad(lambda x: norm.pdf(x, md, sd), t, np.inf)[0]
        b = quad(lambda x: norm.pdf(x, mb, sb), -np.inf, t)[0]
        return w * a + (1 - w) * b
    ts = np.linspace(md, mb, 1501)
    return min(err(t) for t in ts)


def test_histogram_recovers_mixture_and_fidelity():
    rep = fit_histogram(mixture())
    expect = {"amplitude": 10000.0, "weight_dark": 0.59, "sigma_dark": 7.0, "mean_bright": 75.0, "sigma_bright": 15.0}
    for k, v in expect.items():
        assert rep[k] == pytest.approx(v, rel=1e-6)
    assert abs(rep["mean_dark"]) < 1e-6
    assert rep.reliable
    assert rep.extra["fidelity"] == pytest.approx(1 - overlap_oracle(), abs=3e-4)


def test_error_curve_bounds_the_fidelity():
    rep = fit_histogram(mixture())
    curve = np.asarray(rep.extra["error_curve"])
    emin = rep.extra["min_error"]
    assert rep.extra["fidelity"] == 1 - emin
    assert np.all(curve >= emin - 1e-15)
    k = int(np.argmin(curve))
    assert curve[k] == emin and rep.extra["thresholds"][k] == rep.extra["threshold"]


def test_separated_components_and_single_component():
    edges = np.arange(-30.5, 600.5, 1.0)
    rep = fit_histogram(mixture(mb=500.0, sb=10.0, edges=edges))
    assert rep.extra["fidelity"] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(FitError, match="bimodal"):
        fit_histogram(CountHistogram(EDGES, 1000 * np.diff(norm.cdf(EDGES, 50, 10))))


def test_histogram_validation():
    with pytest.raises(FitError):
        CountHistogram([0, 1, 1], [1, 2])
    with pytest.raises(FitError):
        CountHistogram([0, 1, 2], [1, -2])
    with pytest.raises(FitError):
        CountHistogram([0, 1], [1, 2])


def test_poisson_mode_recovers_means():
    from scipy.stats import poisson
    edges = np.arange(-0.5, 60.5, 1.0)
    k = np.arange(0, 60)
    h = CountHistogram(edges, 5000 * (0.5 * poisson.pmf(k, 0.8) + 0.5 * poisson.pmf(k, 20.0)))
    rep = fit_histogram(h, mode="poisson")
    assert rep["mean_dark"] == pytest.approx(0.8, rel=1e-6)
    assert rep["mean_bright"] == pytest.approx(20.0, rel=1e-6)
    assert float(rep.extra["threshold"]).is_integer()


def test_histogram_from_samples():
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.normal(0, 7, 5900), rng.normal(75, 15, 4100)])
    rep = fit_histogram(CountHistogram.from_samples(x, EDGES))
    assert rep["mean_bright"] == pytest.approx(75, abs=1.5)
    assert rep.uncertainties["mean_bright"] > 0


def test_lifetime_fit():
    t = np.array([0.5, 1, 2, 5, 10, 20, 40.0])
    rep = fit_lifetime(t, np.exp(-t / 42.0), window=0.2)
    assert rep["tau"] == pytest.approx(42.0, rel=1e-6)
    assert rep["amplitude"] == pytest.approx(1.0, rel=1e-6)
    assert rep.extra["window_loss"] == pytest.approx(1 - math.exp(-0.2 / 42))
    assert window_loss(43.0, 0.2) == pytest.approx(0.0046, rel=0.02)
    # reorder invariance
    perm = np.random.default_rng(0).permutation(t.size)
    assert fit_lifetime(t[perm], np.exp(-t[perm] / 42.0))["tau"] == rep["tau"]


def test_lifetime_flat_series_and_validation():
    rep = fit_lifetime([1, 2, 3, 4], [0.9] * 4, window=0.2)
    assert math.isinf(rep["tau"]) and not rep.reliable
    assert rep.extra["window_loss"] == 0.0
    with pytest.raises(FitError):
        fit_lifetime([0, 1, 2], [1, 0.9, 0.8])
    with pytest.raises(FitError):
        fit_lifetime([1, 2], [1, 0.9])
    with pytest.raises(FitError):
        fit_lifetime([1, 2, 3], [1, 1.2, 0.8])


def test_tof_fit():
    t = np.linspace(0, 20e-3, 9)
    rep = fit_tof(t, tof_radius(t, 80e-6, 5.29e-6))
    assert rep["temperature"] == pytest.approx(5.29e-6, rel=1e-6)
    assert rep["w0"] == pytest.approx(80e-6, rel=1e-6)
    cold = fit_tof(t, np.full(t.size, 80e-6))
    assert cold["temperature"] < 1e-12
    with pytest.raises(FitError):
        fit_tof([1e-3, 1e-3, -1e-3], [1e-4, 1e-4, 1e-4])
    with pytest.raises(FitError):
        fit_tof(t, -tof_radius(t, 80e-6, 5e-6))


def test_tof_scaling_law():
    # w(t; c w0, c^2 T) = c w(t; w0, T): the fit must follow the same law
    t = np.linspace(0, 20e-3, 9)
    w = tof_radius(t, 80e-6, 5.29e-6) * (1 + 0.01 * np.sin(40 * t / t[-1]))
    a = fit_tof(t, w)
    b = fit_tof(t, 2 * w)
    assert b["w0"] == pytest.approx(2 * a["w0"], rel=1e-6)
    assert b["temperature"] == pytest.approx(4 * a["temperature"], rel=1e-6)


def test_ramsey_single_fringe_exact():
    phi = np.linspace(0, 2 * np.pi, 9)
    rep = fit_ramsey_fringe(phi, ramsey_fringe(phi, 0.5, 1.0))
    assert abs(rep["contrast"] - 0.5) < 1e-9 and abs(rep["phase"] - 1.0) < 1e-9


def test_ramsey_t2():
    phi = np.linspace(0, 2 * np.pi, 13)
    delays = [1e-3, 2e-3, 4e-3, 6e-3, 10e-3, 15e-3]
    scans = {d: (phi, ramsey_fringe(phi, 0.95 * math.exp(-d / 7.6e-3), 0.4)) for d in delays}
    rep = fit_ramsey(scans)
    assert rep["t2"] == pytest.approx(7.6e-3, rel=1e-6)
    assert rep["a0"] == pytest.approx(0.95, rel=1e-6)


def test_ramsey_coverage_and_zero_contrast():
    phi = np.linspace(0, 2 * np.pi, 13)
    scans = {d: (phi, ramsey_fringe(phi, 0.9 * math.exp(-d / 7.6e-3), 0.0)) for d in (1e-3, 3e-3, 6e-3)}
    scans[9e-3] = (np.linspace(0, 1.0, 5), ramsey_fringe(np.linspace(0, 1.0, 5), 0.3, 0.0))
    with pytest.warns(UserWarning, match="excluded"):
        rep = fit_ramsey(scans)
    assert rep.extra["skipped_delays"] == [9e-3]
    assert rep["t2"] == pytest.approx(7.6e-3, rel=1e-6)
    flat = {d: (phi, np.full(phi.size, 0.5)) for d in (1e-3, 3e-3)}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = fit_ramsey(flat)
    assert math.isnan(rep["t2"]) and not rep.reliable
    with pytest.raises(FitError):
        fit_ramsey_fringe([0, 0.1, 0.2], [0.5, 0.6, 0.7])


def test_report_serializes():
    import json
    rep = fit_lifetime([1, 2, 3], [0.9] * 3)
    json.dumps(rep.to_dict())
    assert CS_MASS == pytest.approx(2.2069e-25, rel=1e-4)
