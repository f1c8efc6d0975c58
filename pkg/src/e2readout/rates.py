"""Closed-form rate models: scattering rate, saturation intensities, N_Gamma,
Raman depumping, the photon detection budget and a Poisson threshold classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import constants as sc
from scipy.stats import poisson

from .atom import AtomicConstants, ConfigurationError, branching_ratio, load_constants
from .coupling import angular_element, effective_rabi

Pathway = Literal["d2", "cascade"]


def scattering_rate(s: float, detuning: float, gamma: float) -> float:
    """Two-level scattering rate ``(Gamma/2) s / (1 + 4 Delta^2/Gamma^2 + s)`` in 1/s."""
    if s < 0:
        raise ValueError("saturation parameter must be nonnegative")
    if math.isinf(s):
        return gamma / 2
    return 0.5 * gamma * s / (1 + 4 * detuning ** 2 / gamma ** 2 + s)


# -- level lookup ---------------------------------------------------------------

@dataclass(frozen=True)
class Ladder:
    """The three fine-structure levels of a readout scheme."""

    ground: str
    p: str  # the D2 upper level
    d: str  # the quadrupole-coupled level cascading through ``p``


def ladder(constants: AtomicConstants) -> Ladder:
    g = constants.ground.name
    ps = [lv.name for lv in constants.levels.values() if g in lv.decays_to and lv.l == 1]
    if not ps:
        raise ConfigurationError(f"{constants.species}: no P level decaying to the ground")
    p = ps[0]
    ds = [lv.name for lv in constants.levels.values() if p in lv.decays_to and lv.l == 2]
    if not ds:
        raise ConfigurationError(f"{constants.species}: no D level decaying to {p}")
    return Ladder(g, p, ds[0])


@dataclass(frozen=True)
class SaturationAnchor:
    """Measured/quoted saturation intensity (W/cm^2) of one hyperfine pair."""

    f_upper: float
    f_lower: float
    intensity: float


CS_E2_ANCHOR = SaturationAnchor(6.0, 4.0, 0.879)


@dataclass(frozen=True)
class RateQuery:
    """Intensity (W/cm^2) or saturation parameter, detuning (rad/s) and transition pair."""

    f_upper: float
    f_lower: float
    detuning: float = 0.0
    intensity: float | None = None
    s: float | None = None

    def __post_init__(self):
        if (self.intensity is None) == (self.s is None):
            raise ValueError("give exactly one of intensity and s")
        if (self.intensity or 0.0) < 0 or (self.s or 0.0) < 0:
            raise ValueError("intensity and s must be nonnegative")


def _pair_levels(constants: AtomicConstants, kind: str) -> tuple[str, str]:
    lad = ladder(constants)
    return (lad.ground, lad.p) if kind == "E1" else (lad.ground, lad.d)


def saturation_intensity(f_upper: float, f_lower: float, kind: str = "E2",
                         constants: AtomicConstants | None = None,
                         calibration: SaturationAnchor | None = None) -> float:
    """Zeeman- and polarization-averaged saturation intensity (W/cm^2).

    ``I_sat`` scales as the inverse of :func:`effective_rabi`, so one anchor
    fixes every pair. For E1 the anchor may be omitted: the stretched cycling
    transition then supplies it through ``pi h c Gamma / (3 lambda^3)``.
    """
    constants = constants or load_constants("cs")
    lower, upper = _pair_levels(constants, kind)
    w = effective_rabi(constants, lower, f_lower, upper, f_upper, kind)
    if w == 0.0:
        return math.inf
    if calibration is None:
        if kind != "E1":
            raise ConfigurationError("E2 saturation intensities need a calibration anchor")
        lam = constants.wavelength(upper, lower)
        gamma = constants.level(upper).gamma
        i_cycle = math.pi * sc.h * sc.c * gamma / (3 * lam ** 3) * 1e-4  # W/cm^2
        fl = max(constants.hyperfine_fs(lower))
        fu = fl + 1
        a = angular_element(constants, lower, fl, fl, upper, fu, fu, 1, 1)
        return i_cycle * a * a / w
    w_ref = effective_rabi(constants, lower, calibration.f_lower, upper, calibration.f_upper, kind)
    return calibration.intensity * w_ref / w


# -- N_Gamma ------------------------------------------------------------------------

def _excitation_rates(constants: AtomicConstants, lower: str, f_lower: float, upper: str,
                      kind: str, s: float, detuning: float) -> dict[float, float]:
    """Relative scattering rate into each upper hyperfine level.

    ``s`` is the saturation parameter of the strongest pair (f_lower -> top f);
    other pairs scale it by their effective Rabi weight. Detunings are measured
    from the zero-field resonance with the top upper level.
    """
    gamma = constants.level(upper).gamma
    fus = [f for f in constants.hyperfine_fs(upper)
           if effective_rabi(constants, lower, f_lower, upper, f, kind) > 0]
    f_top = max(fus)
    w_top = effective_rabi(constants, lower, f_lower, upper, f_top, kind)
    e_top = constants.hyperfine_energy(upper, f_top)
    out = {}
    for f in fus:
        w = effective_rabi(constants, lower, f_lower, upper, f, kind) / w_top
        delta = detuning - (constants.hyperfine_energy(upper, f) - e_top)
        if s == 0.0:
            out[f] = w / (1 + 4 * delta ** 2 / gamma ** 2)  # low-saturation limit, s cancels
        else:
            out[f] = scattering_rate(s * w, delta, gamma)
    return out


def _decay_branch(constants: AtomicConstants, upper: str, f_upper: float, lower: str, f_lower: float) -> float:
    return branching_ratio(f_upper, constants.level(upper).j, f_lower, constants.level(lower).j,
                           constants.nuclear_spin)


def raman_rates(constants: AtomicConstants, pathway: Pathway = "d2", s: float = 0.0,
                detuning: float = 0.0) -> tuple[float, float]:
    """(cycling rate, hyperfine-changing rate) from the upper ground level.

    In the low-saturation limit (``s = 0``) these are relative rates.
    """
    lad = ladder(constants)
    fs = constants.hyperfine_fs(lad.ground)
    f_hi, f_lo = max(fs), min(fs)
    if pathway == "d2":
        r = _excitation_rates(constants, lad.ground, f_hi, lad.p, "E1", s, detuning)
        keep = sum(v * _decay_branch(constants, lad.p, f, lad.ground, f_hi) for f, v in r.items())
        lose = sum(v * _decay_branch(constants, lad.p, f, lad.ground, f_lo) for f, v in r.items())
    elif pathway == "cascade":
        r = _excitation_rates(constants, lad.ground, f_hi, lad.d, "E2", s, detuning)
        keep = lose = 0.0
        for fd, v in r.items():
            for fp in constants.hyperfine_fs(lad.p):
                b1 = _decay_branch(constants, lad.d, fd, lad.p, fp)
                if b1 == 0.0:
                    continue
                keep += v * b1 * _decay_branch(constants, lad.p, fp, lad.ground, f_hi)
                lose += v * b1 * _decay_branch(constants, lad.p, fp, lad.ground, f_lo)
    else:
        raise ConfigurationError(f"unknown pathway {pathway!r}")
    return keep, lose


def n_gamma(species: str | AtomicConstants = "cs", pathway: Pathway = "d2", s: float = 0.0,
            detuning: float = 0.0) -> float:
    """Photons scattered per hyperfine-changing Raman event.

    ``s = 0`` and ``detuning = 0`` give the low-saturation resonant limit.
    """
    constants = species if isinstance(species, AtomicConstants) else load_constants(species)
    keep, lose = raman_rates(constants, pathway, s, detuning)
    return keep / lose


# -- depumping ----------------------------------------------------------------------

def depump_paths(intensity: float, detuning: float, constants: AtomicConstants | None = None,
                 calibration: SaturationAnchor = CS_E2_ANCHOR) -> list[tuple[float, float, float]]:
    """Per-path depumping rates ``(f'', f', rate)`` via the quadrupole cascade."""
    constants = constants or load_constants("cs")
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    lad = ladder(constants)
    fs = constants.hyperfine_fs(lad.ground)
    f_hi, f_lo = max(fs), min(fs)
    gamma = constants.level(lad.d).gamma
    fds = constants.hyperfine_fs(lad.d)
    e_top = constants.hyperfine_energy(lad.d, calibration.f_upper)
    out = []
    for fd in fds:
        isat = saturation_intensity(fd, f_hi, "E2", constants, calibration)
        if not math.isfinite(isat):
            continue
        delta = detuning - (constants.hyperfine_energy(lad.d, fd) - e_top)
        r = scattering_rate(intensity / isat, delta, gamma)
        for fp in constants.hyperfine_fs(lad.p):
            b = _decay_branch(constants, lad.d, fd, lad.p, fp) * _decay_branch(constants, lad.p, fp, lad.ground, f_lo)
            if b > 0:
                out.append((fd, fp, r * b))
    return out


def depump_rate(intensity: float, detuning: float, constants: AtomicConstants | None = None,
                calibration: SaturationAnchor = CS_E2_ANCHOR) -> float:
    """Raman depumping rate (1/s) out of the upper ground level.

    ``intensity`` in W/cm^2, ``detuning`` in rad/s from the anchor resonance.
    """
    return float(sum(r for _, _, r in depump_paths(intensity, detuning, constants, calibration)))


def depump_probability(rate: float, duration: float) -> float:
    return -math.expm1(-rate * duration)


# -- detection ------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionChain:
    eta_na: float
    eta_optics: float
    eta_det: float

    def __post_init__(self):
        for name in ("eta_na", "eta_optics", "eta_det"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not in [0, 1]")

    @property
    def eta(self) -> float:
        return self.eta_na * self.eta_optics * self.eta_det


def detection_budget(chain: DetectionChain, photons_scattered: float) -> float:
    """Mean photoelectron count for a number of scattered photons."""
    if photons_scattered < 0:
        raise ValueError("photon number must be nonnegative")
    return chain.eta * photons_scattered


def _class_errors(lam_dark: float, lam_bright: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # dark misread when count >= t, bright misread when count < t
    return poisson.sf(t - 1, lam_dark), poisson.cdf(t - 1, lam_bright)


def poisson_classifier(lam_dark: float, lam_bright: float,
                       priors: tuple[float, float] = (0.5, 0.5)) -> tuple[int, float]:
    """Optimal count threshold ``t`` (bright iff count >= t) and its error.

    The error is the prior-weighted sum of both misclassification
    probabilities; ties go to the smaller threshold.
    """
    if not lam_bright > lam_dark >= 0:
        raise ValueError("need lam_bright > lam_dark >= 0")
    p_d, p_b = priors
    if p_d < 0 or p_b < 0 or abs(p_d + p_b - 1) > 1e-12:
        raise ValueError("priors must be nonnegative and sum to 1")
    t = np.arange(0, int(math.ceil(10 * lam_bright)) + 2)
    e_d, e_b = _class_errors(lam_dark, lam_bright, t)
    err = p_d * e_d + p_b * e_b
    k = int(np.argmin(err))
    return int(t[k]), float(err[k])
