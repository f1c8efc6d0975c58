import json
import sys

import pytest

from e2readout.atom import cs_readout_basis, load_constants


@pytest.fixture(scope="session")
def cs():
    return load_constants("cs")


@pytest.fixture(scope="session")
def rb():
    return load_constants("rb87")


@pytest.fixture(scope="session")
def cs_basis(cs):
    return cs_readout_basis(cs)


TOY = {
    "schema_version": 1,
    "units": {},
    "species": {
        "toy": {
            "name": "spinless toy atom",
            "nuclear_spin": 0.0,
            "g_I": 0.0,
            "mass_amu": 100.0,
            "levels": {
                "1s1/2": {"n": 1, "l": 0, "j": 0.5, "energy_cm1": 0.0, "A_hfs_mhz": 0.0,
                           "B_hfs_mhz": 0.0, "g_j": 2.0, "linewidth_mhz": 0.0, "decays_to": {}},
                "2p3/2": {"n": 2, "l": 1, "j": 1.5, "energy_cm1": 12000.0, "A_hfs_mhz": 0.0,
                           "B_hfs_mhz": 0.0, "g_j": 1.3333333333333333, "linewidth_mhz": 1.0,
                           "decays_to": {"1s1/2": 1.0}},
            },
        }
    },
}


@pytest.fixture(scope="session")
def toy_path(tmp_path_factory):
    """Constants file for a spinless atom: s1/2 -> p3/2 stretched is a closed two-level system."""
    p = tmp_path_factory.mktemp("toy") / "toy.json"
    p.write_text(json.dumps(TOY))
    return str(p)


@pytest.fixture(scope="session")
def toy(toy_path):
    return load_constants("toy", toy_path)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
