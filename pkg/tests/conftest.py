import numpy as np
import pytest

import cfse
from cfse import streams
from cfse.operators import random_point


@pytest.fixture(scope="session")
def params():
    return cfse.ModelParams(kappa=1.0, n=1)


@pytest.fixture(scope="session")
def vacuum(params):
    """Standard f=4, n=1 static vacuum: 4 sites x 8 times, period 8."""
    rng = streams.stream(42, "vacuum-seeds")
    seeds = [random_point(4, 1, rng) for _ in range(4)]
    return cfse.build_static_vacuum(4, 1, [0, 1, 2, 3], seeds, 8, 8.0)


@pytest.fixture(scope="session")
def cutoff():
    return cfse.CutoffSpec(t0=4.0, delta=1.2)


@pytest.fixture(scope="session")
def eta_rho(vacuum, cutoff):
    return cfse.apply_cutoff(vacuum, cutoff)


@pytest.fixture(scope="session")
def ensemble64(eta_rho, params):
    return cfse.build_ensemble(eta_rho, 4.0, 7, params, cfse.EnsembleSettings(k=64))


@pytest.fixture(scope="session")
def ensemble400(eta_rho, params):
    return cfse.build_ensemble(eta_rho, 4.0, 7, params, cfse.EnsembleSettings(k=400))


def make_rank2(rng, f):
    """Random signature-(1,1) trace-one point."""
    return random_point(f, 1, rng)


def assert_spectra_close(got, expected, tol):
    """Multiset comparison of complex spectra by greedy nearest matching."""
    got = list(np.asarray(got, dtype=complex))
    expected = list(np.asarray(expected, dtype=complex))
    assert len(got) == len(expected)
    for v in got:
        j = int(np.argmin([abs(v - u) for u in expected]))
        err = abs(v - expected.pop(j))
        assert err <= tol, f"eigenvalue {v} off by {err:.3e}"
