"""Atomic structure: constants, the hyperfine-Zeeman basis, energies and
spontaneous-decay channels.

All frequencies are angular (rad/s) once loaded; the JSON constants file
stores them in MHz (cyclic) with the unit spelled out in every key.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import constants as sc

from .angular import clebsch_gordan, wigner6j

TWO_PI = 2 * np.pi
MHZ = TWO_PI * 1e6  # rad/s per MHz
MU_B_OVER_HBAR = sc.physical_constants["Bohr magneton"][0] / sc.hbar  # rad/s per tesla

CONSTANTS_ENV = "E2READOUT_CONSTANTS"


class ConfigurationError(ValueError):
    """Raised for inconsistent physical configuration (unknown levels, bad beams...)."""


@dataclass(frozen=True)
class LevelConstants:
    name: str
    n: int
    l: int
    j: float
    energy: float  # rad/s above the ground fine-structure level
    A: float  # rad/s
    B: float  # rad/s
    g_j: float
    gamma: float  # rad/s
    decays_to: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class AtomicConstants:
    species: str
    name: str
    nuclear_spin: float
    g_I: float
    mass: float  # kg
    levels: Mapping[str, LevelConstants]
    checksum: str = ""
    source: str = ""

    def level(self, name: str) -> LevelConstants:
        try:
            return self.levels[name]
        except KeyError:
            raise ConfigurationError(
                f"level {name!r} not defined for {self.species} (have {sorted(self.levels)})"
            ) from None

    @property
    def ground(self) -> LevelConstants:
        return min(self.levels.values(), key=lambda lv: lv.energy)

    def wavelength(self, upper: str, lower: str) -> float:
        """Vacuum wavelength (m) of the fine-structure transition."""
        dE = self.level(upper).energy - self.level(lower).energy
        if dE <= 0:
            raise ConfigurationError(f"{upper} is not above {lower}")
        return TWO_PI * sc.c / dE

    def hyperfine_fs(self, level: str) -> list[float]:
        lv = self.level(level)
        I = self.nuclear_spin
        return [abs(I - lv.j) + k for k in range(int(round(2 * min(I, lv.j))) + 1)]

    def hyperfine_energy(self, level: str, f: float) -> float:
        """Zero-field hyperfine shift (rad/s) from the A and B constants."""
        lv = self.level(level)
        I, J = self.nuclear_spin, lv.j
        K = f * (f + 1) - I * (I + 1) - J * (J + 1)
        e = 0.5 * lv.A * K
        if lv.B != 0.0 and I > 0.5 and J > 0.5:
            e += lv.B * (1.5 * K * (K + 1) - 2 * I * (I + 1) * J * (J + 1)) / (
                4 * I * (2 * I - 1) * J * (2 * J - 1)
            )
        return e

    def g_f(self, level: str, f: float) -> float:
        lv = self.level(level)
        if f == 0:
            return 0.0
        I, J = self.nuclear_spin, lv.j
        ff = f * (f + 1)
        return (lv.g_j * (ff - I * (I + 1) + J * (J + 1))
                + self.g_I * (ff + I * (I + 1) - J * (J + 1))) / (2 * ff)


def _file_checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_constants_bytes(path: str | os.PathLike | None) -> tuple[bytes, str]:
    if path is None:
        path = os.environ.get(CONSTANTS_ENV)
    if path is not None:
        p = Path(path)
        try:
            return p.read_bytes(), str(p)
        except OSError as exc:
            raise ConfigurationError(f"cannot read constants file {p}: {exc.strerror}") from None
    ref = resources.files("e2readout") / "data" / "constants.json"
    return ref.read_bytes(), "e2readout/data/constants.json"


def load_constants(species: str = "cs", path: str | os.PathLike | None = None) -> AtomicConstants:
    """Load one species from the constants file.

    The file defaults to the packaged ``constants.json``; the environment
    variable ``E2READOUT_CONSTANTS`` or ``path`` overrides it.
    """
    raw, source = _read_constants_bytes(path)
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"constants file {source} is not valid JSON: {exc}") from None
    key = species.lower().replace("-", "").replace("_", "")
    aliases = {"cesium": "cs", "caesium": "cs", "133cs": "cs", "rb": "rb87", "87rb": "rb87"}
    key = aliases.get(key, key)
    try:
        sp = doc["species"][key]
    except KeyError:
        raise ConfigurationError(f"unknown species {species!r}") from None
    levels = {}
    for name, d in sp["levels"].items():
        levels[name] = LevelConstants(
            name=name, n=int(d["n"]), l=int(d["l"]), j=float(d["j"]),
            energy=TWO_PI * sc.c * 100.0 * float(d["energy_cm1"]),
            A=MHZ * float(d["A_hfs_mhz"]), B=MHZ * float(d["B_hfs_mhz"]),
            g_j=float(d["g_j"]), gamma=MHZ * float(d["linewidth_mhz"]),
            decays_to=dict(d.get("decays_to", {})),
        )
    return AtomicConstants(
        species=key, name=sp.get("name", key), nuclear_spin=float(sp["nuclear_spin"]),
        g_I=float(sp.get("g_I", 0.0)), mass=float(sp["mass_amu"]) * sc.atomic_mass,
        levels=levels, checksum=_file_checksum(raw), source=source,
    )


# -- basis -------------------------------------------------------------------

@dataclass(frozen=True)
class HyperfineState:
    level: str
    f: float
    m: float
    index: int

    @property
    def key(self) -> tuple[str, float, float]:
        return (self.level, self.f, self.m)

    def __str__(self) -> str:
        return f"|{self.level},f={self.f:g},m={self.m:+g}>"


@dataclass(frozen=True)
class LevelBasis:
    """Ordered hyperfine-Zeeman basis (zero-field energy, then m_f)."""

    constants: AtomicConstants
    states: tuple[HyperfineState, ...]
    level_names: tuple[str, ...]
    hf_energy: np.ndarray  # rad/s, zero-field hyperfine shift of each state
    g_f: np.ndarray
    _lookup: Mapping[tuple[str, float, float], int] = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def index(self, level: str, f: float, m: float) -> int:
        try:
            return self._lookup[(level, float(f), float(m))]
        except KeyError:
            raise KeyError(f"state ({level}, f={f}, m={m}) not in basis") from None

    def state(self, level: str, f: float, m: float) -> HyperfineState:
        return self.states[self.index(level, f, m)]

    def indices(self, level: str, f: float | None = None) -> np.ndarray:
        return np.array([s.index for s in self.states
                         if s.level == level and (f is None or s.f == f)], dtype=int)

    @property
    def levels(self) -> np.ndarray:
        return np.array([s.level for s in self.states])

    @property
    def f(self) -> np.ndarray:
        return np.array([s.f for s in self.states])

    @property
    def m(self) -> np.ndarray:
        return np.array([s.m for s in self.states])

    def energies(self, b_field: float = 0.0) -> np.ndarray:
        """Hyperfine plus linear Zeeman energy of every state (rad/s)."""
        return self.hf_energy + self.g_f * self.m * MU_B_OVER_HBAR * b_field


def build_basis(constants: AtomicConstants, levels: Sequence[str],
                exclusions: Iterable[tuple[str, float]] = ()) -> LevelBasis:
    """Enumerate |level, f, m_f> for the requested levels.

    ``exclusions`` lists ``(level, f)`` manifolds to leave out.
    """
    excluded = {(lv, float(f)) for lv, f in exclusions}
    rows = []
    for name in levels:
        lv = constants.level(name)
        for f in constants.hyperfine_fs(name):
            if (name, float(f)) in excluded:
                continue
            hf = constants.hyperfine_energy(name, f)
            gf = constants.g_f(name, f)
            for k in range(int(round(2 * f)) + 1):
                m = -f + k
                rows.append((lv.energy + hf, m, name, float(f), float(m), hf, gf))
    rows.sort(key=lambda r: (r[0], r[1]))
    states = tuple(HyperfineState(r[2], r[3], r[4], i) for i, r in enumerate(rows))
    return LevelBasis(
        constants=constants,
        states=states,
        level_names=tuple(levels),
        hf_energy=np.array([r[5] for r in rows]),
        g_f=np.array([r[6] for r in rows]),
        _lookup={s.key: s.index for s in states},
    )


def state_energy(basis: LevelBasis, state: HyperfineState, b_field: float = 0.0) -> float:
    """Hyperfine + linear Zeeman energy (rad/s) of one state, relative to its
    fine-structure centroid."""
    i = state.index
    return float(basis.hf_energy[i] + basis.g_f[i] * state.m * MU_B_OVER_HBAR * b_field)


def branching_ratio(f_upper: float, j_upper: float, f_lower: float, j_lower: float,
                    nuclear_spin: float) -> float:
    """Probability that an upper hyperfine level decays (E1) into a lower one."""
    if abs(j_upper - j_lower) > 1:
        return 0.0
    s = wigner6j(j_lower, nuclear_spin, f_lower, f_upper, 1, j_upper)
    return (2 * j_upper + 1) * (2 * f_lower + 1) * s * s


@dataclass(frozen=True)
class DecayChannel:
    upper: int
    lower: int
    rate: float  # rad/s


def decay_channels(basis: LevelBasis, constants: AtomicConstants | None = None) -> list[DecayChannel]:
    """Zeeman-resolved E1 spontaneous-decay channels between levels in the basis.

    Only the fine-structure decays listed in the constants are included.
    """
    constants = constants or basis.constants
    I = constants.nuclear_spin
    by_level: dict[str, list[HyperfineState]] = {}
    for s in basis.states:
        by_level.setdefault(s.level, []).append(s)
    out = []
    for up_name, uppers in by_level.items():
        up = constants.level(up_name)
        for lo_name, frac in up.decays_to.items():
            if lo_name not in by_level or frac == 0:
                continue
            lo = constants.level(lo_name)
            if abs(up.l - lo.l) != 1:
                continue
            for su in uppers:
                for sl in by_level[lo_name]:
                    q = su.m - sl.m
                    if abs(q) > 1:
                        continue
                    b = branching_ratio(su.f, up.j, sl.f, lo.j, I)
                    if b == 0.0:
                        continue
                    cg = clebsch_gordan(sl.f, sl.m, 1, q, su.f, su.m)
                    rate = up.gamma * frac * b * cg * cg
                    if rate > 0:
                        out.append(DecayChannel(su.index, sl.index, rate))
    return out


def cs_readout_basis(constants: AtomicConstants | None = None) -> LevelBasis:
    """The 93-state Cs basis: 6s1/2, 6p3/2 and 5d5/2 without its f=1 manifold."""
    constants = constants or load_constants("cs")
    return build_basis(constants, ["6s1/2", "6p3/2", "5d5/2"], exclusions=[("5d5/2", 1)])
