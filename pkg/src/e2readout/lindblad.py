"""Rotating-frame Lindblad master equation for the hyperfine-Zeeman system.

The density matrix is stored as a real vector: every population, then the real
and imaginary parts of each tracked coherence ``rho_ij`` (i > j), and finally a
photon accumulator ``N`` with ``dN/dt`` equal to the decay flux into the
ground level. Decay follows

    D_jj = -Gamma_j rho_jj + sum_i Gamma_{i->j} rho_ii
    D_jk = -(Gamma_j + Gamma_k) / 2 rho_jk

with no coherence transfer. The generator is time independent, so besides the
usual Runge-Kutta route the system can be propagated exactly through its
eigendecomposition ("spectral") or through a matrix exponential ("expm").
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .atom import ConfigurationError, HyperfineState, LevelBasis, decay_channels
from .coupling import BeamSpec, RotatingHamiltonian, build_hamiltonian

log = logging.getLogger(__name__)

Pruning = Literal["selection", "direct", "closure", "full"]
Method = Literal["spectral", "expm", "RK45", "DOP853", "Radau"]


class IntegrationError(RuntimeError):
    """Integration failed; ``t_last`` is the last time reached reliably."""

    def __init__(self, message: str, t_last: float = 0.0):
        super().__init__(message)
        self.t_last = t_last


class PhotonTargetError(RuntimeError):
    def __init__(self, message: str, achieved: float, t_final: float):
        super().__init__(message)
        self.achieved = achieved
        self.t_final = t_final


@dataclass(frozen=True)
class EngineOptions:
    """Assembly options.

    ``pruning`` chooses which coherences are tracked:

    ``"selection"``
        every Zeeman pair in a pair of levels linked by the beams (directly, or
        through a third level for the two-photon path) whose |Delta m| does not
        exceed the multipole rank of that link (E1: 1, E2: 2, E1+E2: 3);
    ``"direct"``
        only pairs with a nonzero Hamiltonian element or a nonzero two-step
        path through a third level;
    ``"closure"``
        the smallest set containing the direct pairs and closed under the
        commutator, which reproduces the unpruned dynamics exactly;
    ``"full"``
        all pairs of states that are not both static-frame (undriven).
    """

    pruning: Pruning = "selection"
    photon_level: str | None = None  # level whose decay to the ground is counted
    dark_manifold: tuple[str, float] | None = None  # default: lowest ground f
    cutoff: float | None = None


@dataclass
class MasterEquationSystem:
    basis: LevelBasis
    hamiltonian: RotatingHamiltonian
    channels: list
    pairs: list[tuple[int, int]]  # tracked coherences, i > j
    generator: sparse.csr_matrix  # real, size n_eq + 1 (photon row last)
    photon_row: np.ndarray  # dN/dt = photon_row . x
    dark_indices: np.ndarray
    options: EngineOptions = field(default_factory=EngineOptions)

    @property
    def n_states(self) -> int:
        return len(self.basis)

    @property
    def equation_count(self) -> int:
        """Real equations for rho (the photon accumulator is not counted)."""
        return self.n_states + 2 * len(self.pairs)

    @property
    def size(self) -> int:
        return self.equation_count + 1

    def pack(self, rho: np.ndarray) -> np.ndarray:
        """Full density matrix -> state vector (photon count zero)."""
        n = self.n_states
        x = np.zeros(self.size)
        x[:n] = np.real(np.diag(rho))
        for k, (i, j) in enumerate(self.pairs):
            x[n + 2 * k] = rho[i, j].real
            x[n + 2 * k + 1] = rho[i, j].imag
        return x

    def unpack(self, x: np.ndarray) -> np.ndarray:
        """State vector -> full Hermitian density matrix (untracked entries zero)."""
        n = self.n_states
        rho = np.diag(x[:n].astype(complex))
        for k, (i, j) in enumerate(self.pairs):
            z = x[n + 2 * k] + 1j * x[n + 2 * k + 1]
            rho[i, j] = z
            rho[j, i] = np.conj(z)
        return rho

    def initial_state(self, rho0=None) -> np.ndarray:
        """Build the initial vector from a state spec, population vector or matrix.

        Default: all population in the ground-level ``m = 0`` state of the
        upper ground manifold (|6s1/2, f=4, m=0> for Cs).
        """
        n = self.n_states
        b = self.basis
        if rho0 is None:
            g = b.constants.ground.name
            fmax = max(s.f for s in b.states if s.level == g)
            rho0 = (g, fmax, 0.0 if float(fmax).is_integer() else 0.5)
        if isinstance(rho0, HyperfineState):
            rho0 = rho0.index
        if isinstance(rho0, tuple):
            rho0 = b.index(*rho0)
        if isinstance(rho0, (int, np.integer)):
            x = np.zeros(self.size)
            x[int(rho0)] = 1.0
            return x
        arr = np.asarray(rho0)
        if arr.shape == (n,):
            rho = np.diag(arr.astype(complex))
        elif arr.shape == (n, n):
            rho = arr.astype(complex)
        else:
            raise ValueError(f"initial state has shape {arr.shape}, expected ({n},) or ({n}, {n})")
        if np.abs(rho - rho.conj().T).max() > 1e-10:
            raise ValueError("initial density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1) > 1e-10:
            raise ValueError("initial density matrix does not have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError("initial density matrix is not positive semidefinite")
        x = self.pack(rho)
        dropped = np.abs(rho - self.unpack(x)).max()
        if dropped > 1e-12:
            log.warning("initial coherences outside the tracked set were dropped (max %.2e)", dropped)
        return x


# -- assembly -------------------------------------------------------------------

def _level_links(ham: RotatingHamiltonian) -> dict[frozenset, int]:
    """Level pairs linked by the beams, with the multipole rank of the link."""
    basis = ham.basis
    lv = [s.level for s in basis.states]
    c = basis.constants
    direct: dict[frozenset, int] = {}
    for (u, l) in ham.couplings:
        key = frozenset((lv[u], lv[l]))
        rank = abs(c.level(lv[u]).l - c.level(lv[l]).l)
        rank = 1 if rank == 1 else 2
        direct[key] = max(direct.get(key, 0), rank)
    links = dict(direct)
    keys = list(direct)
    for a in keys:
        for b in keys:
            if a == b:
                continue
            shared = a & b
            if len(shared) != 1:
                continue
            ends = frozenset((a | b) - shared)
            if len(ends) == 2 and ends not in direct:
                links[ends] = max(links.get(ends, 0), direct[a] + direct[b])
    return links


def _tracked_pairs(ham: RotatingHamiltonian, pruning: str) -> list[tuple[int, int]]:
    basis = ham.basis
    states = basis.states
    n = len(states)
    driven = [(s.level, s.f) in ham.driven for s in states]
    adj: dict[int, set[int]] = {}
    for (u, l) in ham.couplings:
        adj.setdefault(u, set()).add(l)
        adj.setdefault(l, set()).add(u)
    direct = {(max(u, l), min(u, l)) for (u, l) in ham.couplings}
    lv = [s.level for s in states]
    if pruning == "direct":
        out = set(direct)
        for k, nb in adj.items():
            for a in nb:
                for b in nb:
                    if a > b and len({lv[a], lv[b], lv[k]}) == 3:
                        out.add((a, b))
    elif pruning == "selection":
        links = _level_links(ham)
        out = set()
        for i in range(n):
            if not driven[i]:
                continue
            for j in range(i):
                if not driven[j] or lv[i] == lv[j]:
                    continue
                rank = links.get(frozenset((lv[i], lv[j])))
                if rank and abs(states[i].m - states[j].m) <= rank:
                    out.add((i, j))
        out |= direct
    elif pruning == "closure":
        out = set(direct)
        todo = list(direct)
        while todo:
            i, j = todo.pop()
            for a, b in [(k, j) for k in adj.get(i, ())] + [(i, k) for k in adj.get(j, ())]:
                if a == b:
                    continue
                p = (max(a, b), min(a, b))
                if p not in out:
                    out.add(p)
                    todo.append(p)
    elif pruning == "full":
        out = {(i, j) for i in range(n) for j in range(i) if driven[i] and driven[j]}
        out |= direct
    else:
        raise ConfigurationError(f"unknown pruning rule {pruning!r}")
    # the rotating frame defines a frequency for every pair; untracked
    # static-frame partners would need one and are never generated above
    return sorted(out)


def assemble(basis: LevelBasis, beams: Sequence[BeamSpec], b_field: float = 0.0,
             options: EngineOptions | None = None) -> MasterEquationSystem:
    """Build the real first-order generator for ``beams`` acting on ``basis``."""
    options = options or EngineOptions()
    kw = {} if options.cutoff is None else {"cutoff": options.cutoff}
    ham = build_hamiltonian(basis, beams, b_field, **kw)
    pairs = _tracked_pairs(ham, options.pruning)
    n = len(basis)
    n_eq = n + 2 * len(pairs)

    # complex variable index: diagonals 0..n-1, then coherences
    var: dict[tuple[int, int], int] = {(i, i): i for i in range(n)}
    for k, p in enumerate(pairs):
        var[p] = n + k
    nz = n + len(pairs)

    hrow: dict[int, list[tuple[int, complex]]] = {i: [(i, complex(ham.diag[i]))] for i in range(n)}
    for (u, l), v in ham.couplings.items():
        hrow[u].append((l, v))
        hrow[l].append((u, np.conj(v)))

    A: dict[tuple[int, int], complex] = {}
    B: dict[tuple[int, int], complex] = {}

    def add(e: int, i: int, j: int, coef: complex):
        # coef * rho_ij expressed in the stored variables
        if i >= j:
            f = var.get((i, j))
            if f is not None:
                A[(e, f)] = A.get((e, f), 0) + coef
        else:
            f = var.get((j, i))
            if f is not None:
                B[(e, f)] = B.get((e, f), 0) + coef

    for (i, j), e in var.items():
        # -i [H, rho]_ij = -i sum_k H_ik rho_kj + i sum_k rho_ik H_kj
        for k, h in hrow[i]:
            add(e, k, j, -1j * h)
        for k, h in hrow[j]:
            add(e, i, k, 1j * np.conj(h))  # H_kj = conj(H_jk)

    channels = decay_channels(basis)
    gamma = np.zeros(n)
    for ch in channels:
        gamma[ch.upper] += ch.rate
    for ch in channels:
        A[(ch.lower, ch.upper)] = A.get((ch.lower, ch.upper), 0) + ch.rate
    for (i, j), e in var.items():
        g = 0.5 * (gamma[i] + gamma[j]) if i != j else gamma[i]
        if g:
            A[(e, e)] = A.get((e, e), 0) - g

    # real form: d(u + iv) = (A + B) u + i (A - B) v
    def col(f: int, imag: bool) -> int | None:
        if f < n:
            return None if imag else f
        return n + 2 * (f - n) + (1 if imag else 0)

    def row(e: int, imag: bool) -> int | None:
        return col(e, imag)

    entries: dict[tuple[int, int], float] = {}

    def put(r, c, v):
        if r is not None and c is not None and v != 0.0:
            entries[(r, c)] = entries.get((r, c), 0.0) + v

    keys = set(A) | set(B)
    for (e, f) in keys:
        a = A.get((e, f), 0)
        b = B.get((e, f), 0)
        p, m = a + b, a - b
        put(row(e, False), col(f, False), p.real)
        put(row(e, False), col(f, True), -m.imag)
        put(row(e, True), col(f, False), p.imag)
        put(row(e, True), col(f, True), m.real)

    photon_level = options.photon_level or _default_photon_level(basis)
    ground = basis.constants.ground.name
    photon_row = np.zeros(n_eq + 1)
    for ch in channels:
        if basis.states[ch.upper].level == photon_level and basis.states[ch.lower].level == ground:
            photon_row[ch.upper] += ch.rate
    for c_, v in enumerate(photon_row):
        if v:
            entries[(n_eq, c_)] = v

    rows, cols = zip(*entries) if entries else ((), ())
    gen = sparse.csr_matrix((list(entries.values()), (rows, cols)), shape=(n_eq + 1, n_eq + 1))
    gen.eliminate_zeros()

    dark = options.dark_manifold
    if dark is None:
        fmin = min(s.f for s in basis.states if s.level == ground)
        dark = (ground, fmin)
    dark_idx = basis.indices(*dark)
    return MasterEquationSystem(basis, ham, channels, pairs, gen, photon_row, dark_idx, options)


def _default_photon_level(basis: LevelBasis) -> str:
    c = basis.constants
    ground = c.ground.name
    cands = [lv for lv in basis.level_names if ground in c.level(lv).decays_to]
    if not cands:
        raise ConfigurationError("no level in the basis decays to the ground level")
    return min(cands, key=lambda lv: c.level(lv).energy)


# -- propagation ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Populations and accumulated photon number on a time grid."""

    times: np.ndarray
    populations: np.ndarray  # (n_times, n_states)
    photons: np.ndarray
    basis: LevelBasis
    dark_indices: np.ndarray
    method: str = ""
    diagnostics: dict = field(default_factory=dict)
    evaluator: Callable[[float], np.ndarray] | None = field(default=None, repr=False)

    @property
    def trace(self) -> np.ndarray:
        return self.populations.sum(axis=1)

    def state_at(self, t: float) -> tuple[np.ndarray, float]:
        """(populations, photons) at ``t``; exact if an evaluator is attached."""
        if self.evaluator is not None:
            x = self.evaluator(t)
            n = len(self.basis)
            return x[:n], float(x[-1])
        pops = np.array([np.interp(t, self.times, self.populations[:, k])
                         for k in range(self.populations.shape[1])])
        return pops, float(np.interp(t, self.times, self.photons))

    def manifold_populations(self) -> dict[tuple[str, float], np.ndarray]:
        out: dict[tuple[str, float], np.ndarray] = {}
        for s in self.basis.states:
            key = (s.level, s.f)
            out[key] = out.get(key, 0) + self.populations[:, s.index]
        return out

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        man = self.manifold_populations()
        keys = list(man)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s"] + [f"P[{lv} f={f:g}]" for lv, f in keys] + ["photons"])
            for k, t in enumerate(self.times):
                w.writerow([f"{t:.9e}"] + [f"{man[key][k]:.9e}" for key in keys] + [f"{self.photons[k]:.9e}"])


class SpectralPropagator:
    """Exact propagation through the eigendecomposition of the rho block.

    The photon accumulator is integrated in closed form, which avoids the
    Jordan block it would otherwise add at eigenvalue zero.
    """

    def __init__(self, system: MasterEquationSystem, x0: np.ndarray):
        n_eq = system.equation_count
        M = system.generator[:n_eq, :n_eq].toarray()
        w, V = np.linalg.eig(M)
        lu = sla.lu_factor(V)
        self.w = w
        self.V = V
        self.c = sla.lu_solve(lu, x0[:n_eq].astype(complex))
        self.g = system.photon_row[:n_eq] @ V
        self.n0 = float(x0[-1])
        recon = np.abs(V @ self.c - x0[:n_eq]).max()
        resid = np.abs(M @ V - V * w).max() / max(1.0, np.abs(M).max())
        self.diagnostics = {"reconstruction_error": float(recon), "eig_residual": float(resid),
                            "max_rate": float(np.abs(w).max())}
        if recon > 1e-8:
            raise IntegrationError(f"ill-conditioned eigenbasis (reconstruction error {recon:.2e})")

    def __call__(self, t: float) -> np.ndarray:
        wt = self.w * t
        e = np.exp(wt)
        x = (self.V @ (e * self.c)).real
        # integral of exp(w s) ds over [0, t]
        small = np.abs(wt) < 1e-8
        integ = np.where(small, t * (1 + wt / 2), np.expm1(wt) / np.where(small, 1.0, self.w))
        n = self.n0 + float((self.g @ (integ * self.c)).real)
        return np.concatenate([x, [n]])


def integrate(system: MasterEquationSystem, t_final: float, rho0=None, *,
              t_eval: Sequence[float] | None = None, n_points: int = 201,
              method: Method = "spectral", rtol: float = 1e-8, atol: float = 1e-10,
              expm_steps: int | None = None) -> Trajectory:
    """Propagate ``system`` from ``rho0`` to ``t_final``.

    ``method``: ``"spectral"`` (default, exact eigen-propagation),
    ``"expm"`` (matrix-exponential stepping on the output grid) or any
    :func:`scipy.integrate.solve_ivp` method name (``RK45``, ``DOP853``, ``Radau``).
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    x0 = system.initial_state(rho0)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_final, n_points)
    t_eval = np.asarray(t_eval, dtype=float)
    n = system.n_states
    diag: dict = {}
    evaluator = None
    if method == "spectral":
        prop = SpectralPropagator(system, x0)
        X = np.array([prop(t) for t in t_eval])
        evaluator = prop
        diag.update(prop.diagnostics)
    elif method == "expm":
        X = _expm_grid(system, x0, t_eval, expm_steps)
    elif method in ("RK45", "DOP853", "Radau", "RK23", "BDF", "LSODA"):
        M = system.generator
        kw = {"jac": M} if method in ("Radau", "BDF", "LSODA") else {}
        sol = solve_ivp(lambda t, x: M @ x, (0.0, t_final), x0, method=method, t_eval=t_eval,
                        rtol=rtol, atol=atol, dense_output=True, **kw)
        if not sol.success:
            t_last = float(sol.t[-1]) if len(sol.t) else 0.0
            raise IntegrationError(f"{method} failed: {sol.message}", t_last)
        X = sol.y.T
        evaluator = sol.sol
        diag["nfev"] = int(sol.nfev)
    else:
        raise ValueError(f"unknown method {method!r}")
    pops = X[:, :n]
    traj = Trajectory(t_eval, pops, X[:, -1], system.basis, system.dark_indices, method, diag, evaluator)
    drift = float(np.abs(traj.trace - 1).max())
    traj.diagnostics["trace_error"] = drift
    if drift > 1e-7:
        raise IntegrationError(f"trace not conserved (error {drift:.2e})", float(t_eval[0]))
    return traj


def _expm_grid(system: MasterEquationSystem, x0: np.ndarray, t_eval: np.ndarray,
               substeps: int | None) -> np.ndarray:
    M = system.generator.toarray()
    X = np.empty((len(t_eval), len(x0)))
    x = x0.copy()
    t = 0.0
    cache: dict[float, np.ndarray] = {}
    for k, te in enumerate(t_eval):
        dt = te - t
        if dt < 0:
            raise ValueError("t_eval must be nondecreasing")
        if dt > 0:
            key = round(dt, 18)
            P = cache.get(key)
            if P is None:
                P = sla.expm(M * dt)
                cache[key] = P
            x = P @ x
        X[k] = x
        t = te
    return X


# -- observables -----------------------------------------------------------------

def time_to_photons(traj: Trajectory, n_target: float = 100.0) -> float:
    """First time at which the scattered-photon count reaches ``n_target``."""
    N = traj.photons
    if N[-1] < n_target:
        raise PhotonTargetError(
            f"photon target {n_target:g} not reached: {N[-1]:.4g} photons by t={traj.times[-1]:.4g} s",
            float(N[-1]), float(traj.times[-1]))
    k = int(np.argmax(N >= n_target))
    if k == 0:
        return float(traj.times[0])
    t0, t1 = traj.times[k - 1], traj.times[k]
    if traj.evaluator is not None:
        f = lambda t: traj.state_at(t)[1] - n_target
        return float(brentq(f, t0, t1, xtol=1e-15, rtol=1e-12))
    lo = max(0, k - 3)
    hi = min(len(N), k + 3)
    tt, nn = traj.times[lo:hi], np.maximum.accumulate(N[lo:hi])
    interp = PchipInterpolator(tt, nn)
    return float(brentq(lambda t: interp(t) - n_target, t0, t1))


def raman_infidelity(traj: Trajectory, t: float) -> float:
    """Population in the dark ground manifold (|6s1/2, f=3> for Cs) at ``t``."""
    if t < traj.times[0] - 1e-15 or t > traj.times[-1] * (1 + 1e-12):
        raise ValueError("t outside the trajectory")
    pops, _ = traj.state_at(t)
    return float(np.clip(pops[traj.dark_indices].sum(), 0.0, 1.0))


@dataclass
class ReadoutResult:
    time: float  # s to reach the photon target
    infidelity: float
    photons: float
    t_horizon: float
    equation_count: int
    populations: np.ndarray | None = None  # at ``time``
    diagnostics: dict = field(default_factory=dict)


def measure(system: MasterEquationSystem, n_target: float = 100.0, rho0=None,
            t_guess: float = 50e-6, t_cap: float = 20e-3, method: Method = "spectral",
            growth: float = 3.0) -> ReadoutResult:
    """Time to ``n_target`` photons and the Raman infidelity at that time.

    The horizon starts at ``t_guess`` and grows by ``growth`` until the target
    is reached; beyond ``t_cap`` a :class:`PhotonTargetError` is raised.
    """
    horizon = min(t_guess, t_cap)
    while True:
        if method == "spectral":
            # one eigendecomposition serves every horizon
            x0 = system.initial_state(rho0)
            prop = SpectralPropagator(system, x0)
            while prop(horizon)[-1] < n_target:
                if horizon >= t_cap:
                    raise PhotonTargetError(
                        f"photon target {n_target:g} not reached within {t_cap:g} s",
                        float(prop(t_cap)[-1]), t_cap)
                horizon = min(horizon * growth, t_cap)
            grid = np.linspace(0, horizon, 65)
            X = np.array([prop(t) for t in grid])
            n = system.n_states
            traj = Trajectory(grid, X[:, :n], X[:, -1], system.basis, system.dark_indices,
                              method, dict(prop.diagnostics), prop)
            traj.diagnostics["trace_error"] = float(np.max(np.abs(X[:, :n].sum(axis=1) - 1.0)))
        else:
            traj = integrate(system, horizon, rho0, method=method, n_points=129)
            if traj.photons[-1] < n_target:
                if horizon >= t_cap:
                    raise PhotonTargetError(
                        f"photon target {n_target:g} not reached within {t_cap:g} s",
                        float(traj.photons[-1]), t_cap)
                horizon = min(horizon * growth, t_cap)
                continue
        t = time_to_photons(traj, n_target)
        pops, _ = traj.state_at(t)
        return ReadoutResult(t, raman_infidelity(traj, t), n_target, horizon,
                             system.equation_count, np.asarray(pops), traj.diagnostics)
