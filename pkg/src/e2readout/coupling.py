"""Laser couplings: E1 and E2 matrix elements and the rotating-frame Hamiltonian.

Absolute radial integrals are never computed. Every beam carries a reference
Rabi frequency on a named Zeeman transition and all its other couplings follow
from angular algebra. The sign conventions are

* spherical components ``v_q = e_q* . v`` (see :func:`angular.to_spherical`);
* E1 absorption operator ``eps . r = sum_q eps_q r C_{1,q}``;
* E2 absorption operator ``(eps . r)(k . r) = r^2 sum_q (-1)^q c_q C_{2,q}``,
  with ``c_q = (-1)^q sqrt(2/3) sum <1 mu; 1 nu|2 q> k_mu eps_nu``.

So a beam with spherical component ``q`` (E1) or ``c_q`` (E2) drives
``Delta m = +q`` in absorption.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import sparse

from .angular import clebsch_gordan, to_spherical, wigner6j
from .atom import MHZ, AtomicConstants, ConfigurationError, LevelBasis

Kind = Literal["E1", "E2"]
Normalization = Literal["transition", "geometric", "field"]

# hyperfine manifolds further than this from a beam's reference transition are
# not coupled by it (e.g. the 9.2 GHz-detuned 6s f=3 manifold)
DEFAULT_MANIFOLD_CUTOFF = 2 * np.pi * 2e9


@dataclass(frozen=True)
class BeamSpec:
    """One laser beam.

    ``reference`` is ``((f_lower, m_lower), (f_upper, m_upper))``: the Zeeman
    transition on which ``rabi`` is defined and (through its hyperfine levels)
    the zero-field resonance that ``detuning`` is measured from.
    ``normalization`` picks how ``rabi`` fixes the beam amplitude:

    ``"transition"``
        reference amplitude equals ``rabi * exp(i phase)`` exactly, so all beams
        sharing a reference transition drive it in phase;
    ``"geometric"``
        ``|reference amplitude| = rabi`` with the phase left to the beam geometry;
    ``"field"``
        (E1 only) a pure ``Delta m = m_upper - m_lower`` polarized beam of the
        same intensity would have amplitude ``rabi`` on the reference.
    """

    kind: Kind
    lower_level: str
    upper_level: str
    k: tuple[float, float, float]
    polarization: tuple[complex, complex, complex]
    rabi: float
    detuning: float
    reference: tuple[tuple[float, float], tuple[float, float]]
    normalization: Normalization = "transition"
    phase: float = 0.0
    name: str = ""

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        eps = np.asarray(self.polarization, dtype=complex)
        if k.shape != (3,) or eps.shape != (3,):
            raise ConfigurationError("k and polarization must be 3-vectors")
        if abs(np.linalg.norm(k) - 1) > 1e-10:
            raise ConfigurationError(f"beam {self.name!r}: k must be a unit vector")
        if abs(np.linalg.norm(eps) - 1) > 1e-10:
            raise ConfigurationError(f"beam {self.name!r}: polarization must be normalized")
        if abs(np.dot(k, eps)) > 1e-10:
            raise ConfigurationError(f"beam {self.name!r}: polarization is not transverse to k")
        if self.rabi < 0:
            raise ConfigurationError(f"beam {self.name!r}: negative Rabi frequency")
        if self.kind not in ("E1", "E2"):
            raise ConfigurationError(f"unknown transition kind {self.kind!r}")
        if self.normalization == "field" and self.kind != "E1":
            raise ConfigurationError("field normalization is only defined for E1 beams")

    @property
    def rank(self) -> int:
        return 1 if self.kind == "E1" else 2

    def rotated(self, angle: float) -> "BeamSpec":
        """Copy rotated by ``angle`` about the z axis."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return replace(self, k=tuple(rot @ np.asarray(self.k)),
                       polarization=tuple(rot @ np.asarray(self.polarization, dtype=complex)))


def quadrupole_cq(k, polarization=None) -> np.ndarray:
    """Geometry coefficients ``c_q`` (q = -2..2) of an E2 beam.

    Accepts a :class:`BeamSpec` as ``k`` for convenience.
    """
    if isinstance(k, BeamSpec):
        k, polarization = k.k, k.polarization
    k = np.asarray(k, dtype=complex)
    eps = np.asarray(polarization, dtype=complex)
    if abs(np.dot(k, eps)) > 1e-10:
        raise ConfigurationError("E2 polarization must be transverse to k")
    ks, es = to_spherical(k), to_spherical(eps)
    out = np.zeros(5, dtype=complex)
    for q in range(-2, 3):
        acc = 0j
        for mu in (-1, 0, 1):
            nu = q - mu
            if abs(nu) > 1:
                continue
            acc += clebsch_gordan(1, mu, 1, nu, 2, q) * ks[mu] * es[nu]
        out[q + 2] = (-1) ** (q % 2) * np.sqrt(2 / 3) * acc
    return out


def _polarization_weights(beam: BeamSpec) -> dict[int, complex]:
    """Coefficient multiplying the rank-k tensor component that raises m by q."""
    if beam.kind == "E1":
        s = to_spherical(beam.polarization)
        return {q: s[q] for q in (-1, 0, 1) if abs(s[q]) > 1e-14}
    cq = quadrupole_cq(beam.k, beam.polarization)
    return {q: (-1) ** (q % 2) * cq[q + 2] for q in range(-2, 3) if abs(cq[q + 2]) > 1e-14}


def reduced_factor(constants: AtomicConstants, lower_level: str, f_lower: float,
                   upper_level: str, f_upper: float, rank: int) -> float:
    """Hyperfine reduction of a rank-``rank`` fine-structure matrix element.

    ``<j_u I f_u || T_k || j_l I f_l>`` divided by ``<j_u || T_k || j_l>``.
    """
    ju = constants.level(upper_level).j
    jl = constants.level(lower_level).j
    I = constants.nuclear_spin
    six = wigner6j(ju, f_upper, I, f_lower, jl, rank)
    if six == 0.0:
        return 0.0
    phase = (-1) ** int(round(ju + I + f_lower + rank))
    return phase * np.sqrt((2 * f_lower + 1) * (2 * f_upper + 1)) * six


def angular_element(constants: AtomicConstants, lower_level: str, fl: float, ml: float,
                    upper_level: str, fu: float, mu: float, rank: int, q: int) -> float:
    """``<f_u m_u| T_{k,q} |f_l m_l>`` in units of the fine-structure reduced element."""
    if mu - ml != q:
        return 0.0
    cg = clebsch_gordan(fl, ml, rank, q, fu, mu)
    if cg == 0.0:
        return 0.0
    return cg / np.sqrt(2 * fu + 1) * reduced_factor(constants, lower_level, fl, upper_level, fu, rank)


def _beam_manifolds(basis: LevelBasis, beam: BeamSpec, cutoff: float) -> tuple[list[float], list[float]]:
    c = basis.constants
    (fl_ref, _), (fu_ref, _) = beam.reference
    if fl_ref not in c.hyperfine_fs(beam.lower_level) or fu_ref not in c.hyperfine_fs(beam.upper_level):
        raise ConfigurationError(f"beam {beam.name!r}: reference transition not in the level structure")
    lows = [f for f in c.hyperfine_fs(beam.lower_level)
            if abs(c.hyperfine_energy(beam.lower_level, f) - c.hyperfine_energy(beam.lower_level, fl_ref)) < cutoff]
    ups = [f for f in c.hyperfine_fs(beam.upper_level)
           if abs(c.hyperfine_energy(beam.upper_level, f) - c.hyperfine_energy(beam.upper_level, fu_ref)) < cutoff]
    return lows, ups


def _raw_amplitudes(basis: LevelBasis, beam: BeamSpec, weights: dict[int, complex],
                    lows: Sequence[float], ups: Sequence[float]) -> dict[tuple[int, int], complex]:
    c = basis.constants
    rank = beam.rank
    out: dict[tuple[int, int], complex] = {}
    lower = [s for s in basis.states if s.level == beam.lower_level and s.f in lows]
    upper = [s for s in basis.states if s.level == beam.upper_level and s.f in ups]
    for sl in lower:
        for su in upper:
            q = int(round(su.m - sl.m))
            w = weights.get(q)
            if w is None:
                continue
            a = angular_element(c, beam.lower_level, sl.f, sl.m, beam.upper_level, su.f, su.m, rank, q)
            if a != 0.0:
                out[(su.index, sl.index)] = w * a
    return out


def _reference_amplitude(basis: LevelBasis, beam: BeamSpec, weights: dict[int, complex]) -> complex:
    c = basis.constants
    (fl, ml), (fu, mu) = beam.reference
    q = int(round(mu - ml))
    a = angular_element(c, beam.lower_level, fl, ml, beam.upper_level, fu, mu, beam.rank, q)
    return weights.get(q, 0.0) * a


def reference_phase(basis: LevelBasis, beam: BeamSpec) -> float:
    """Geometric phase of ``beam`` on its own reference transition."""
    return float(np.angle(_reference_amplitude(basis, beam, _polarization_weights(beam))))


def coupling_matrix(basis: LevelBasis, beam: BeamSpec, cutoff: float = DEFAULT_MANIFOLD_CUTOFF,
                    common_phase: float | None = None) -> dict[tuple[int, int], complex]:
    """Scaled coupling amplitudes ``{(upper, lower): Omega}`` (rad/s) for one beam.

    The Hamiltonian element is ``H[upper, lower] = -Omega / 2``. For geometric
    normalization ``common_phase`` is the phase of the (unknown) reduced matrix
    element shared by all beams of one kind; by default the beam's own
    reference phase, which makes a lone beam real on its reference.
    """
    lows, ups = _beam_manifolds(basis, beam, cutoff)
    weights = _polarization_weights(beam)
    raw = _raw_amplitudes(basis, beam, weights, lows, ups)
    if beam.normalization == "field":
        (fl, ml), (fu, mu) = beam.reference
        q = int(round(mu - ml))
        ref = angular_element(basis.constants, beam.lower_level, fl, ml,
                              beam.upper_level, fu, mu, beam.rank, q)
        if ref == 0.0:
            raise ConfigurationError(f"beam {beam.name!r}: reference transition is forbidden")
        scale = beam.rabi / abs(ref) * np.exp(1j * beam.phase)
    else:
        ref = _reference_amplitude(basis, beam, weights)
        if abs(ref) < 1e-14:
            raise ConfigurationError(
                f"beam {beam.name!r}: no geometric coupling on its reference transition; cannot normalize"
            )
        if beam.normalization == "transition":
            scale = beam.rabi / ref * np.exp(1j * beam.phase)
        elif beam.normalization == "geometric":
            if common_phase is None:
                common_phase = float(np.angle(ref))
            scale = beam.rabi / abs(ref) * np.exp(1j * (beam.phase - common_phase))
        else:
            raise ConfigurationError(f"unknown normalization {beam.normalization!r}")
    return {key: scale * v for key, v in raw.items()}


@dataclass(frozen=True)
class CouplingMatrix:
    """Sparse ``(upper, lower) -> Omega`` map (rad/s) for one beam."""

    beam: BeamSpec
    elements: dict[tuple[int, int], complex]

    def __getitem__(self, key: tuple[int, int]) -> complex:
        return self.elements.get(key, 0j)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def items(self):
        return self.elements.items()

    def dense(self, n: int) -> np.ndarray:
        """Hermitian matrix of the amplitudes (upper-lower and its conjugate)."""
        out = np.zeros((n, n), dtype=complex)
        for (u, l), v in self.elements.items():
            out[u, l] = v
            out[l, u] = np.conj(v)
        return out


def _matrix_elements(kind: str, basis: LevelBasis, beam: BeamSpec, rabi: float | None) -> CouplingMatrix:
    if beam.kind != kind:
        raise ConfigurationError(f"expected an {kind} beam, got {beam.kind}")
    if rabi is not None:
        beam = replace(beam, rabi=rabi)
    return CouplingMatrix(beam, coupling_matrix(basis, beam))


def e2_matrix_elements(basis: LevelBasis, beam: BeamSpec, rabi: float | None = None) -> CouplingMatrix:
    """Quadrupole couplings of one beam, scaled to ``rabi`` on its reference."""
    return _matrix_elements("E2", basis, beam, rabi)


def e1_matrix_elements(basis: LevelBasis, beam: BeamSpec, rabi: float | None = None) -> CouplingMatrix:
    return _matrix_elements("E1", basis, beam, rabi)


def effective_rabi(constants: AtomicConstants, lower_level: str, f_lower: float,
                   upper_level: str, f_upper: float, kind: Kind | None = None) -> float:
    """Zeeman- and polarization-averaged squared coupling of a hyperfine pair.

    Averages ``|<f_u m+q| T_{k,q} |f_l m>|^2`` over the 2f_l+1 lower sublevels
    with the intensity shared equally among the 2k+1 polarization components.
    Units: squared fine-structure reduced element.
    """
    if kind is None:
        dl = abs(constants.level(upper_level).l - constants.level(lower_level).l)
        kind = "E1" if dl == 1 else "E2"
    rank = 1 if kind == "E1" else 2
    total = 0.0
    nl = int(round(2 * f_lower)) + 1
    for i in range(nl):
        ml = -f_lower + i
        for q in range(-rank, rank + 1):
            a = angular_element(constants, lower_level, f_lower, ml, upper_level, f_upper, ml + q, rank, q)
            total += a * a
    return total / (nl * (2 * rank + 1))


# -- rotating frame ------------------------------------------------------------

@dataclass
class RotatingHamiltonian:
    """Time-independent RWA Hamiltonian in the frame rotating with the beams."""

    basis: LevelBasis
    b_field: float
    diag: np.ndarray  # rad/s
    couplings: dict[tuple[int, int], complex]  # (upper, lower) -> H[upper, lower]
    frame: dict[tuple[str, float], float]  # (level, f) -> frame offset (rad/s)
    driven: set[tuple[str, float]] = field(default_factory=set)

    @property
    def n(self) -> int:
        return len(self.diag)

    def matrix(self) -> sparse.csr_matrix:
        n = self.n
        rows, cols, vals = list(range(n)), list(range(n)), list(self.diag.astype(complex))
        for (u, l), v in self.couplings.items():
            rows += [u, l]
            cols += [l, u]
            vals += [v, np.conj(v)]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()


def _assign_frames(basis: LevelBasis, beams: Sequence[BeamSpec], manifolds) -> dict[tuple[str, float], float]:
    c = basis.constants
    edges: dict[tuple[str, float], list[tuple[tuple[str, float], float]]] = {}
    for beam, (lows, ups) in zip(beams, manifolds):
        (fl_ref, _), (fu_ref, _) = beam.reference
        # frame(upper) - frame(lower) = beam frequency minus the fine-structure gap
        w = c.hyperfine_energy(beam.upper_level, fu_ref) - c.hyperfine_energy(beam.lower_level, fl_ref) + beam.detuning
        for fl in lows:
            for fu in ups:
                a, b = (beam.lower_level, fl), (beam.upper_level, fu)
                edges.setdefault(a, []).append((b, w))
                edges.setdefault(b, []).append((a, -w))
    frames: dict[tuple[str, float], float] = {}
    level_energy = {name: c.level(name).energy for name in basis.level_names}
    # roots: lowest-energy node of each connected component, anchored at its own hf energy
    nodes = sorted(edges, key=lambda nd: (level_energy.get(nd[0], 0.0), c.hyperfine_energy(*nd)))
    for root in nodes:
        if root in frames:
            continue
        frames[root] = c.hyperfine_energy(*root)
        todo = deque([root])
        while todo:
            a = todo.popleft()
            for b, w in edges[a]:
                val = frames[a] + w
                if b in frames:
                    if abs(frames[b] - val) > 1e-6 * max(1.0, abs(val)):
                        raise ConfigurationError(
                            f"beams imply inconsistent rotating frequencies for {b[0]} f={b[1]:g}"
                        )
                else:
                    frames[b] = val
                    todo.append(b)
    return frames


def build_hamiltonian(basis: LevelBasis, beams: Sequence[BeamSpec], b_field: float = 0.0,
                      cutoff: float = DEFAULT_MANIFOLD_CUTOFF) -> RotatingHamiltonian:
    """Assemble the RWA Hamiltonian for ``beams`` acting on ``basis``.

    Beams that share a transition must share one optical frequency; otherwise
    no single rotating frame exists and a :class:`ConfigurationError` is raised.
    """
    c = basis.constants
    for beam in beams:
        for lv in (beam.lower_level, beam.upper_level):
            if lv not in basis.level_names:
                raise ConfigurationError(f"beam {beam.name!r} addresses {lv}, which is not in the basis")
    manifolds = [_beam_manifolds(basis, b, cutoff) for b in beams]
    frames = _assign_frames(basis, beams, manifolds)
    driven = set(frames)
    for s in basis.states:
        frames.setdefault((s.level, s.f), 0.0)  # undriven: static frame
    energies = basis.energies(b_field)
    diag = np.array([energies[s.index] - frames[(s.level, s.f)] for s in basis.states])
    # one reduced-element phase per transition kind, fixed by the first beam
    common: dict[str, float] = {}
    for beam in beams:
        if beam.normalization == "geometric" and beam.kind not in common:
            common[beam.kind] = reference_phase(basis, beam)
    couplings: dict[tuple[int, int], complex] = {}
    for beam in beams:
        for key, om in coupling_matrix(basis, beam, cutoff, common.get(beam.kind)).items():
            couplings[key] = couplings.get(key, 0j) - 0.5 * om
    # exact geometric cancellations (counterpropagating pairs) leave rounding residue
    scale = max((abs(v) for v in couplings.values()), default=0.0)
    couplings = {k: v for k, v in couplings.items() if abs(v) > 1e-12 * scale}
    return RotatingHamiltonian(basis, b_field, diag, couplings, frames, driven)


# -- standard beam sets ----------------------------------------------------------

_SQ2 = np.sqrt(2.0)
SIGMA_PLUS = (1 / _SQ2, 1j / _SQ2, 0.0)
SIGMA_MINUS = (1 / _SQ2, -1j / _SQ2, 0.0)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return tuple(v / np.linalg.norm(v))


def e2_six_beams(rabi: float, detuning: float, axial: str = "sigma_pm",
                 normalization: Normalization = "geometric") -> list[BeamSpec]:
    """Six 685 nm beams: x and y pairs linearly polarized along z, and a z pair
    with circular polarization.

    ``axial="sigma_pm"`` gives the +z beam sigma+ and the -z beam sigma-
    (atom frame, i.e. driving Delta m = +1 and -1); ``"sigma_plus"`` makes both
    drive Delta m = +1.
    """
    ref_p = ((4.0, 0.0), (6.0, 1.0))
    ref_m = ((4.0, 0.0), (6.0, -1.0))
    beams = []
    for name, k in (("+x", (1, 0, 0)), ("-x", (-1, 0, 0)), ("+y", (0, 1, 0)), ("-y", (0, -1, 0))):
        beams.append(BeamSpec("E2", "6s1/2", "5d5/2", _unit(k), (0.0, 0.0, 1.0), rabi, detuning,
                                     ref_p, normalization, name=f"E2{name}"))
    beams.append(BeamSpec("E2", "6s1/2", "5d5/2", (0.0, 0.0, 1.0), SIGMA_PLUS, rabi, detuning,
                          ref_p, normalization, name="E2+z"))
    if axial == "sigma_pm":
        beams.append(BeamSpec("E2", "6s1/2", "5d5/2", (0.0, 0.0, -1.0), SIGMA_MINUS, rabi, detuning,
                              ref_m, normalization, name="E2-z"))
    elif axial == "sigma_plus":
        beams.append(BeamSpec("E2", "6s1/2", "5d5/2", (0.0, 0.0, -1.0), SIGMA_PLUS, rabi, detuning,
                              ref_p, normalization, name="E2-z"))
    else:
        raise ConfigurationError(f"unknown axial polarization option {axial!r}")
    return beams


def quench_pair(rabi: float, detuning: float, n_beams: int = 2,
                normalization: Normalization = "geometric", reversed_beam: str = "lab",
                rabi_is: str = "field") -> list[BeamSpec]:
    """Counterpropagating sigma+ quench beams on 5d5/2 f''=6 -> 6p3/2 f'=5.

    ``reversed_beam="lab"`` gives the -z beam the same lab polarization
    (x + iy)/sqrt2, so both drive Delta m = +1 and add at the atom;
    ``"helicity"`` gives it positive helicity about its own k, i.e. atom-frame
    sigma-, driving Delta m = -1.

    With ``rabi_is="field"`` the Rabi frequency is that of the combined quench
    field on the reference transition, shared among the beams that drive it;
    with ``"beam"`` every beam gets the full value.
    """
    if n_beams not in (1, 2):
        raise ConfigurationError("the quench field has one or two beams")
    if reversed_beam not in ("lab", "helicity"):
        raise ConfigurationError(f"unknown reversed-beam convention {reversed_beam!r}")
    if rabi_is not in ("field", "beam"):
        raise ConfigurationError(f"unknown Rabi convention {rabi_is!r}")
    share = 2 if (n_beams == 2 and reversed_beam == "lab" and rabi_is == "field") else 1
    ref_p = ((5.0, 0.0), (6.0, 1.0))
    beams = [BeamSpec("E1", "6p3/2", "5d5/2", (0.0, 0.0, 1.0), SIGMA_PLUS, rabi / share, detuning,
                      ref_p, normalization, name="E1+z")]
    if n_beams == 2:
        if reversed_beam == "lab":
            eps, ref = SIGMA_PLUS, ref_p
        else:
            eps, ref = SIGMA_MINUS, ((5.0, 0.0), (6.0, -1.0))
        beams.append(BeamSpec("E1", "6p3/2", "5d5/2", (0.0, 0.0, -1.0), eps, rabi / share, detuning,
                              ref, normalization, name="E1-z"))
    return beams


def d2_six_beams(rabi: float, detuning: float, levels=("6s1/2", "6p3/2"),
                 reference=((4.0, 4.0), (5.0, 5.0))) -> list[BeamSpec]:
    """Three orthogonal sigma+/sigma- pairs on the D2 line, field-normalized.

    Each pair has atom-frame sigma+ along +k and sigma- along -k (same
    helicity about each beam's own k, as in a MOT). ``rabi`` is the Rabi
    frequency each beam would have on the stretched cycling transition if it
    were purely sigma+.
    """
    lower, upper = levels
    beams = []
    eye = np.eye(3)
    for ax, k in zip("xyz", eye):
        a, b = eye[(int("xyz".index(ax)) + 1) % 3], eye[(int("xyz".index(ax)) + 2) % 3]
        eps = (a + 1j * b) / _SQ2  # positive helicity about +k
        beams.append(BeamSpec("E1", lower, upper, tuple(k), tuple(eps), rabi, detuning,
                              reference, "field", name=f"D2+{ax}"))
        beams.append(BeamSpec("E1", lower, upper, tuple(-k), tuple(np.conj(eps)), rabi, detuning,
                              reference, "field", name=f"D2-{ax}"))
    return beams
