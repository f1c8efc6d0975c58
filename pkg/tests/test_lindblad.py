import json
import math

import numpy as np
import pytest

from e2readout.atom import MHZ, build_basis, load_constants
from e2readout.coupling import SIGMA_PLUS, BeamSpec, d2_six_beams, e2_six_beams
from e2readout.lindblad import (EngineOptions, PhotonTargetError, assemble, integrate, measure,
                                raman_infidelity, time_to_photons)

from conftest import TOY


def toy_system(path, rabi, detuning=0.0, gamma_mhz=None, tmp=None):
    if gamma_mhz is not None:
        doc = json.loads(json.dumps(TOY))
        doc["species"]["toy"]["levels"]["2p3/2"]["linewidth_mhz"] = gamma_mhz
        path = tmp / f"toy_{gamma_mhz}.json"
        path.write_text(json.dumps(doc))
    c = load_constants("toy", path)
    basis = build_basis(c, ["1s1/2", "2p3/2"])
    beam = BeamSpec("E1", "1s1/2", "2p3/2", (0, 0, 1), SIGMA_PLUS, rabi, detuning, ((0.5, 0.5), (1.5, 1.5)),
                    "transition")
    return assemble(basis, [beam], 0.0, EngineOptions(pruning="full")), basis


@pytest.mark.parametrize("method", ["spectral", "expm", "DOP853"])
def test_two_level_rabi_oscillation(tmp_path, toy_path, method):
    om = 1.3 * MHZ
    system, basis = toy_system(toy_path, om, gamma_mhz=0.0, tmp=tmp_path)
    t = np.linspace(0, 3e-6, 61)
    traj = integrate(system, t[-1], ("1s1/2", 0.5, 0.5), t_eval=t, method=method, rtol=1e-12, atol=1e-14)
    pe = traj.populations[:, basis.index("2p3/2", 1.5, 1.5)]
    assert np.max(np.abs(pe - np.sin(om * t / 2) ** 2)) < 1e-8


def test_detuned_rabi_oscillation(tmp_path, toy_path):
    om, d = 1.0 * MHZ, 0.6 * MHZ
    system, basis = toy_system(toy_path, om, d, gamma_mhz=0.0, tmp=tmp_path)
    t = np.linspace(0, 3e-6, 41)
    traj = integrate(system, t[-1], ("1s1/2", 0.5, 0.5), t_eval=t)
    w = math.hypot(om, d)
    pe = traj.populations[:, basis.index("2p3/2", 1.5, 1.5)]
    assert np.max(np.abs(pe - (om / w) ** 2 * np.sin(w * t / 2) ** 2)) < 1e-8


@pytest.mark.parametrize("s", [0.1, 1.0, 2.5, 10.0])
def test_damped_two_level_steady_state(toy_path, toy, s):
    gamma = toy.level("2p3/2").gamma
    om = gamma * math.sqrt(s / 2)
    system, basis = toy_system(toy_path, om)
    traj = integrate(system, 60 / gamma, ("1s1/2", 0.5, 0.5), n_points=5)
    pe = traj.populations[-1, basis.index("2p3/2", 1.5, 1.5)]
    assert abs(pe - s / (2 * (1 + s))) < 1e-8
    # photon rate equals Gamma * rho_ee once settled
    rate = (traj.photons[-1] - traj.photons[-2]) / (traj.times[-1] - traj.times[-2])
    assert rate == pytest.approx(gamma * s / (2 * (1 + s)), rel=1e-6)


def test_no_beams_pure_decay(cs_basis):
    system = assemble(cs_basis, [], 1e-5)
    assert system.equation_count == 93
    gamma = cs_basis.constants.level("6p3/2").gamma
    t = np.linspace(0, 5 / gamma, 11)
    traj = integrate(system, t[-1], ("6p3/2", 5, 5), t_eval=t)
    pe = traj.populations[:, cs_basis.index("6p3/2", 5, 5)]
    pg = traj.populations[:, cs_basis.index("6s1/2", 4, 4)]
    assert np.allclose(pe, np.exp(-gamma * t), atol=1e-10)
    assert np.allclose(pg, 1 - np.exp(-gamma * t), atol=1e-10)
    assert np.allclose(traj.photons, 1 - np.exp(-gamma * t), atol=1e-10)
    ground = traj.populations[:, cs_basis.indices("6s1/2")].sum(axis=1)
    assert np.all(np.diff(ground) >= -1e-12)


def test_cascade_decay_reaches_ground(cs_basis):
    system = assemble(cs_basis, [], 0.0)
    traj = integrate(system, 200e-6, ("5d5/2", 6, 6), n_points=41)
    ground = traj.populations[:, cs_basis.indices("6s1/2")].sum(axis=1)
    assert np.all(np.diff(ground) >= -1e-12)
    assert ground[-1] == pytest.approx(1.0, abs=1e-9)
    assert traj.photons[-1] == pytest.approx(1.0, abs=1e-9)


def test_time_to_photons_without_light_fails(cs_basis):
    system = assemble(cs_basis, [], 1e-5)
    traj = integrate(system, 1e-5)
    with pytest.raises(PhotonTargetError):
        time_to_photons(traj, 100)
    with pytest.raises(PhotonTargetError):
        measure(system, 100, t_guess=1e-5, t_cap=1e-4)
    assert raman_infidelity(traj, 0.0) == 0.0


def test_pack_unpack_hermitian(cs_basis):
    system = assemble(cs_basis, e2_six_beams(1.2 * MHZ, -0.42 * MHZ), 1e-5)
    rng = np.random.default_rng(1)
    x = rng.normal(size=system.size)
    rho = system.unpack(x)
    assert np.array_equal(rho, rho.conj().T)
    assert np.allclose(system.pack(rho)[: system.equation_count], x[: system.equation_count])


def test_initial_state_validation(cs_basis):
    system = assemble(cs_basis, [], 0.0)
    n = len(cs_basis)
    x0 = system.initial_state()
    assert x0[cs_basis.index("6s1/2", 4, 0)] == 1.0
    bad = np.zeros((n, n), complex)
    bad[0, 0] = 0.5
    with pytest.raises(ValueError):
        system.initial_state(bad)
    bad = np.eye(n, dtype=complex) / n
    bad[0, 1] = 0.3j
    with pytest.raises(ValueError):
        system.initial_state(bad)
    bad = np.zeros((n, n))
    bad[0, 0], bad[1, 1] = 1.5, -0.5
    with pytest.raises(ValueError, match="positive"):
        system.initial_state(bad)
    mixed = np.zeros(n)
    mixed[cs_basis.indices("6s1/2", 4)] = 1 / 9
    assert system.initial_state(mixed)[:n].sum() == pytest.approx(1.0)


@pytest.fixture(scope="module")
def d2_setup(cs):
    basis = build_basis(cs, ["6s1/2", "6p3/2"])
    return basis, d2_six_beams(2.0 * MHZ, -2.6 * MHZ)


def test_pruning_hierarchy_and_exact_closure(d2_setup):
    basis, beams = d2_setup
    counts = {p: assemble(basis, beams, 1e-5, EngineOptions(pruning=p)).equation_count
              for p in ("direct", "selection", "closure", "full")}
    assert counts["direct"] <= counts["selection"] <= counts["full"]
    assert counts["closure"] <= counts["full"]
    t = np.linspace(0, 20e-6, 21)
    a = integrate(assemble(basis, beams, 1e-5, EngineOptions(pruning="closure")), t[-1], t_eval=t)
    b = integrate(assemble(basis, beams, 1e-5, EngineOptions(pruning="full")), t[-1], t_eval=t)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-9
    assert np.max(np.abs(a.photons - b.photons)) < 1e-7


def test_methods_agree_and_invariants(d2_setup):
    basis, beams = d2_setup
    system = assemble(basis, beams, 1e-5)
    t = np.linspace(0, 30e-6, 31)
    ref = integrate(system, t[-1], t_eval=t, method="spectral")
    for m in ("expm", "DOP853"):
        other = integrate(system, t[-1], t_eval=t, method=m, rtol=1e-10, atol=1e-12)
        assert np.max(np.abs(other.populations - ref.populations)) < 1e-7
        assert other.photons[-1] == pytest.approx(ref.photons[-1], rel=1e-7)
    assert np.max(np.abs(ref.trace - 1)) < 1e-7
    assert ref.populations.min() > -1e-9 and ref.populations.max() < 1 + 1e-9
    assert np.all(np.diff(ref.photons) >= 0)


@pytest.mark.parametrize("angle", [0.4, 2.0])
def test_trajectory_invariant_under_azimuthal_rotation(cs_basis, angle):
    beams = e2_six_beams(0.3 * MHZ, -0.06 * MHZ)
    t = np.linspace(0, 100e-6, 11)
    a = integrate(assemble(cs_basis, beams, 1e-5), t[-1], t_eval=t)
    b = integrate(assemble(cs_basis, [x.rotated(angle) for x in beams], 1e-5), t[-1], t_eval=t)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-8
    assert np.max(np.abs(a.photons - b.photons)) < 1e-8 * max(1.0, a.photons[-1])


def test_photon_time_scales_linearly_in_steady_state(cs_basis):
    system = assemble(cs_basis, e2_six_beams(0.1 * MHZ, -0.059 * MHZ), 1e-5)
    t1 = measure(system, 100, t_guess=1e-3).time
    t2 = measure(system, 200, t_guess=1e-3).time
    assert t2 / t1 == pytest.approx(2.0, rel=0.10)


def test_trajectory_csv(tmp_path, d2_setup):
    basis, beams = d2_setup
    traj = integrate(assemble(basis, beams, 1e-5), 5e-6, n_points=6)
    p = tmp_path / "traj.csv"
    traj.to_csv(p, ["config_hash=abc"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1].startswith("time_s,") and lines[1].endswith(",photons")
    assert len(lines) == 2 + 6
