"""Fits for the experimental side of a readout study.

Photon-count histograms, exponential lifetimes, time-of-flight temperature and
Ramsey contrast decay. All fits use a bounded trust-region least-squares solver;
1-sigma uncertainties come from the Jacobian covariance scaled by the reduced
chi-square (so noiseless data give zero uncertainty).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import constants as sc
from scipy.optimize import least_squares, minimize_scalar
from scipy.signal import find_peaks
from scipy.special import ndtr
from scipy.stats import poisson

CS_MASS = 132.905451961 * sc.atomic_mass  # kg


class FitError(ValueError):
    """Input cannot support the requested fit."""


@dataclass
class FitReport:
    params: dict[str, float]
    uncertainties: dict[str, float]
    residual_norm: float
    converged: bool
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        return self.converged and not self.flags

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (float, np.floating)):
                v = float(v)
                return v if math.isfinite(v) else str(v)
            if isinstance(v, np.integer):
                return int(v)
            return v
        return clean({"params": self.params, "uncertainties": self.uncertainties,
                      "residual_norm": self.residual_norm, "converged": self.converged,
                      "reliable": self.reliable, "flags": self.flags, **self.extra})


def _lsq(resid: Callable[[np.ndarray], np.ndarray], p0, names: Sequence[str], bounds=(-np.inf, np.inf),
         x_scale="jac") -> FitReport:
    res = least_squares(resid, np.asarray(p0, float), bounds=bounds, method="trf",
                        x_scale=x_scale, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    r = res.fun
    n, p = r.size, res.x.size
    dof = n - p
    chi2 = float(r @ r)
    try:
        cov = np.linalg.pinv(res.jac.T @ res.jac)
        cov *= chi2 / dof if dof > 0 else 0.0
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(p, np.nan)
    return FitReport(dict(zip(names, map(float, res.x))), dict(zip(names, map(float, err))),
                     math.sqrt(chi2), bool(res.success))


def _sorted_xy(x, y, what: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError(f"{what}: x and y must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError(f"{what}: non-finite input")
    order = np.lexsort((y, x))
    return x[order], y[order]


# -- histogram --------------------------------------------------------------------

@dataclass(frozen=True)
class CountHistogram:
    """Photoelectron-count histogram; ``edges`` has one more entry than ``counts``."""

    edges: np.ndarray
    counts: np.ndarray
    raw: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, float)
        c = np.asarray(self.counts, float)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "counts", c)
        if e.ndim != 1 or c.ndim != 1 or e.size != c.size + 1:
            raise FitError("histogram needs len(edges) == len(counts) + 1")
        if np.any(np.diff(e) <= 0):
            raise FitError("histogram edges must be strictly increasing")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise FitError("histogram occurrences must be finite and nonnegative")

    @classmethod
    def from_samples(cls, samples, edges) -> "CountHistogram":
        samples = np.asarray(samples, float)
        counts, edges = np.histogram(samples, bins=edges)
        return cls(edges, counts.astype(float), samples)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def _gauss_bins(edges, mu, sigma):
    return np.diff(ndtr((edges - mu) / sigma))


def _poisson_bins(edges, lam):
    # integer counts k fall in the bin with edges[i] <= k < edges[i+1]
    upper = np.ceil(edges) - 1
    return np.diff(poisson.cdf(upper, lam))


def _peaks(h: CountHistogram) -> np.ndarray:
    c = h.counts
    width = max(1, int(round(c.size / 40)))
    kernel = np.ones(2 * width + 1) / (2 * width + 1)
    smooth = np.convolve(np.pad(c, width, mode="edge"), kernel, mode="valid")
    idx, props = find_peaks(np.pad(smooth, 1), prominence=0.05 * smooth.max())
    idx = idx - 1
    if idx.size < 2:
        raise FitError(f"histogram is not bimodal: found {idx.size} peak(s) after smoothing")
    top = idx[np.argsort(props["prominences"])[-2:]]
    return np.sort(h.centers[top])


def _class_error(t, w_dark, dark, bright, mode) -> float:
    """Error of the rule ``bright iff count >= t``."""
    if mode == "gaussian":
        (md, sd), (mb, sb) = dark, bright
        return w_dark * (1 - ndtr((t - md) / sd)) + (1 - w_dark) * ndtr((t - mb) / sb)
    k = math.ceil(t) - 1
    return w_dark * poisson.sf(k, dark[0]) + (1 - w_dark) * poisson.cdf(k, bright[0])


def fit_histogram(h: CountHistogram, mode: str = "gaussian", n_thresholds: int | None = None) -> FitReport:
    """Two-component mixture fit, threshold error curve and classification fidelity.

    ``E_c(t)`` is the prior-weighted probability of misassigning a shot with the
    rule "bright iff count >= t"; the fidelity is ``1 - min_t E_c(t)``.
    """
    if mode not in ("gaussian", "poisson"):
        raise FitError(f"unknown histogram mode {mode!r}")
    if h.total <= 0:
        raise FitError("histogram is empty")
    mu_d, mu_b = _peaks(h)
    split = 0.5 * (mu_d + mu_b)
    c, x, e = h.counts, h.centers, h.edges
    w0 = float(c[x < split].sum() / c.sum())
    total = h.total
    if mode == "gaussian":
        s0 = max((mu_b - mu_d) / 4, np.min(np.diff(e)))
        names = ("amplitude", "weight_dark", "mean_dark", "sigma_dark", "mean_bright", "sigma_bright")
        p0 = [total, w0, mu_d, s0, mu_b, s0]
        lo = [0, 0, -np.inf, 1e-9, -np.inf, 1e-9]
        hi = [np.inf, 1, np.inf, np.inf, np.inf, np.inf]

        def model(p):
            a, w, md, sd, mb, sb = p
            return a * (w * _gauss_bins(e, md, sd) + (1 - w) * _gauss_bins(e, mb, sb))
    else:
        names = ("amplitude", "weight_dark", "mean_dark", "mean_bright")
        p0 = [total, w0, max(mu_d, 1e-3), max(mu_b, 1e-3)]
        lo = [0, 0, 0, 0]
        hi = [np.inf, 1, np.inf, np.inf]

        def model(p):
            a, w, ld, lb = p
            return a * (w * _poisson_bins(e, ld) + (1 - w) * _poisson_bins(e, lb))

    scale = np.sqrt(np.maximum(c, 1.0))
    rep = _lsq(lambda p: (model(p) - c) / scale, p0, names, (lo, hi))
    p = rep.params
    if mode == "gaussian":
        dark = (p["mean_dark"], p["sigma_dark"])
        bright = (p["mean_bright"], p["sigma_bright"])
    else:
        dark, bright = (p["mean_dark"],), (p["mean_bright"],)
    if dark[0] > bright[0]:
        rep.flags.append("components swapped: dark mean above bright mean")
    w = p["weight_dark"]
    err = lambda t: _class_error(t, w, dark, bright, mode)

    lo_t, hi_t = float(e[0]), float(e[-1])
    n = n_thresholds or max(201, int(hi_t - lo_t) + 1)
    ts = np.linspace(lo_t, hi_t, n)
    curve = np.array([err(t) for t in ts])
    if mode == "gaussian":
        k = int(np.argmin(curve))
        a, b = ts[max(k - 1, 0)], ts[min(k + 1, n - 1)]
        opt = minimize_scalar(err, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
        t_opt, e_min = (float(opt.x), float(opt.fun)) if opt.fun <= curve[k] else (float(ts[k]), float(curve[k]))
    else:
        ints = np.arange(math.floor(lo_t), math.ceil(hi_t) + 1)
        errs = np.array([err(t) for t in ints])
        k = int(np.argmin(errs))
        t_opt, e_min = float(ints[k]), float(errs[k])
    ins = np.searchsorted(ts, t_opt)
    ts = np.insert(ts, ins, t_opt)
    curve = np.insert(curve, ins, e_min)
    rep.extra.update(mode=mode, threshold=t_opt, min_error=e_min, fidelity=1.0 - e_min,
                     thresholds=ts, error_curve=curve)
    return rep


# -- lifetime ------------------------------------------------------------------------

def window_loss(tau: float, window: float) -> float:
    """Probability of loss within ``window`` for a 1/e lifetime ``tau``."""
    if math.isinf(tau):
        return 0.0
    return -math.expm1(-window / tau)


def fit_lifetime(durations, fractions, window: float | None = None) -> FitReport:
    """Fit ``A exp(-t/tau)`` to survival fractions.

    The decay is parameterized by its rate so that a flat series converges to
    rate 0, reported as ``tau = inf`` with a flag.
    """
    t, y = _sorted_xy(durations, fractions, "lifetime")
    if t.size < 3:
        raise FitError("lifetime fit needs at least 3 points")
    if np.any(t <= 0):
        raise FitError("durations must be positive")
    if np.any((y < 0) | (y > 1)):
        raise FitError("survival fractions must lie in [0, 1]")
    pos = y > 0
    if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
        slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
        p0 = [math.exp(icpt), max(-slope, 0.0)]
    else:
        p0 = [float(y.max()) or 1.0, 1.0 / np.ptp(t) if np.ptp(t) > 0 else 1.0]
    rate_scale = 1.0 / max(t.max(), 1e-300)
    rep = _lsq(lambda p: p[0] * np.exp(-p[1] * rate_scale * t) - y,
               [p0[0], p0[1] / rate_scale], ("amplitude", "rate_scaled"), ([0, 0], [np.inf, np.inf]))
    a = rep.params["amplitude"]
    k = float(rep.params.pop("rate_scaled") * rate_scale)
    dk = float(rep.uncertainties.pop("rate_scaled") * rate_scale)
    rep.params["rate"], rep.uncertainties["rate"] = k, dk
    if k <= 1e-9 * rate_scale:
        tau, dtau = math.inf, math.inf
        rep.flags.append("no decay resolvable: lifetime is infinite")
    else:
        tau, dtau = 1.0 / k, dk / k ** 2
    rep.params["tau"], rep.uncertainties["tau"] = tau, dtau
    if window is not None:
        rep.extra["window"] = window
        rep.extra["window_loss"] = window_loss(tau, window)
    return rep


# -- time of flight ---------------------------------------------------------------------

def tof_radius(t, w0: float, temperature: float, mass: float = CS_MASS):
    """Cloud radius after ballistic expansion for ``t`` seconds."""
    t = np.asarray(t, float)
    return np.sqrt(w0 ** 2 + 4 * sc.k * temperature * t ** 2 / mass)


def fit_tof(times, radii, mass: float = CS_MASS) -> FitReport:
    """Initial radius ``w0`` (m) and temperature ``T`` (K) from cloud sizes."""
    t, w = _sorted_xy(times, radii, "tof")
    if t.size < 3:
        raise FitError("time-of-flight fit needs at least 3 points")
    if np.any(w <= 0):
        raise FitError("radii must be positive")
    if np.unique(np.abs(t)).size < 2:
        raise FitError("time grid is degenerate: need at least two distinct |t|")
    if mass <= 0:
        raise FitError("mass must be positive")
    # seed: w^2 is linear in t^2
    slope, icpt = np.polyfit(t ** 2, w ** 2, 1)
    w0 = math.sqrt(icpt) if icpt > 0 else float(w.min())
    k_temp = 4 * sc.k / mass
    temp_scale = 1e-6
    seed_t = max(slope / k_temp, 0.0) / temp_scale
    rep = _lsq(lambda p: tof_radius(t, p[0], p[1] * temp_scale, mass) - w,
               [w0, seed_t], ("w0", "temperature_uk"), ([0, 0], [np.inf, np.inf]))
    rep.params["temperature"] = rep.params.pop("temperature_uk") * temp_scale
    rep.uncertainties["temperature"] = rep.uncertainties.pop("temperature_uk") * temp_scale
    rep.extra["mass"] = mass
    return rep


# -- Ramsey ------------------------------------------------------------------------------

def ramsey_fringe(phi, contrast: float, phase: float):
    return 0.5 * (1 + contrast * np.cos(np.asarray(phi, float) + phase))


def fit_ramsey_fringe(phases, populations) -> FitReport:
    """Contrast ``A`` and phase of ``n = (1 + A cos(phi + phi_t))/2``."""
    phi, n = _sorted_xy(phases, populations, "ramsey")
    if phi.size < 4:
        raise FitError("Ramsey fringe needs at least 4 phase points")
    if np.ptp(phi) < math.pi - 1e-12:
        raise FitError("Ramsey phases span less than half a period")
    # the model is linear in (A cos phi_t, A sin phi_t): seed from it
    m = np.column_stack([np.cos(phi), -np.sin(phi)])
    (u, v), *_ = np.linalg.lstsq(m, 2 * n - 1, rcond=None)
    a0, ph0 = math.hypot(u, v), math.atan2(v, u)
    rep = _lsq(lambda p: ramsey_fringe(phi, p[0], p[1]) - n, [a0, ph0], ("contrast", "phase"),
               ([0, -np.inf], [np.inf, np.inf]))
    rep.params["phase"] = math.remainder(rep.params["phase"], 2 * math.pi)
    return rep


def fit_ramsey(scans: Mapping[float, tuple[Sequence[float], Sequence[float]]],
               min_contrast: float = 1e-6) -> FitReport:
    """Per-delay fringe contrast, then ``A_t = A0 exp(-t/T2*)`` over delays.

    ``scans`` maps each delay (s) to its (phases, populations). Delays whose
    phase coverage is insufficient are skipped with a warning.
    """
    delays, contrasts, errs, skipped = [], [], [], []
    for d in sorted(scans):
        phases, pops = scans[d]
        try:
            r = fit_ramsey_fringe(phases, pops)
        except FitError as exc:
            warnings.warn(f"delay {d:g} s excluded: {exc}", stacklevel=2)
            skipped.append(float(d))
            continue
        delays.append(float(d))
        contrasts.append(r["contrast"])
        errs.append(r.uncertainties["contrast"])
    if not delays:
        raise FitError("no delay has usable Ramsey data")
    t, a = np.array(delays), np.array(contrasts)
    extra = {"delays": t, "contrasts": a, "contrast_errors": np.array(errs), "skipped_delays": skipped}
    if a.max() < min_contrast or t.size < 2 or np.ptp(t) == 0:
        why = "no fringe contrast" if a.max() < min_contrast else "fewer than two distinct delays"
        rep = FitReport({"a0": float(a.max()), "t2": math.nan}, {"a0": math.nan, "t2": math.nan},
                        0.0, True, [f"T2* unidentifiable: {why}"], extra)
        return rep
    pos = a > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(t[pos], np.log(a[pos]), 1)
        seed = [math.exp(icpt), max(-slope, 1e-12 / t.max()) * t.max()]
    else:
        seed = [a.max(), 1.0]
    ts = t.max()
    rep = _lsq(lambda p: p[0] * np.exp(-p[1] * t / ts) - a, seed, ("a0", "rate_scaled"),
               ([0, 0], [np.inf, np.inf]))
    k = float(rep.params.pop("rate_scaled") / ts)
    dk = float(rep.uncertainties.pop("rate_scaled") / ts)
    if k <= 1e-9 / ts:
        rep.params["t2"], rep.uncertainties["t2"] = math.inf, math.inf
        rep.flags.append("no contrast decay resolvable")
    else:
        rep.params["t2"], rep.uncertainties["t2"] = 1 / k, dk / k ** 2
    rep.extra.update(extra)
    return rep
