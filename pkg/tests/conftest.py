import numpy as np
import pytest

from ordsmooth.fitting import fit_model
from ordsmooth.simulate import EtaSpec, TruthSpec, simulate_dataset


@pytest.fixture(scope="session")
def sine_truth():
    return TruthSpec(
        eta=EtaSpec("sine", {"amplitude": 2.0, "scale": 20.0}),
        theta=(-1.0, 0.0, 1.0),
        n=1500,
        x_range=(100.0, 250.0),
        seed=20260809,
        var="doy",
    )


@pytest.fixture(scope="session")
def sine_data(sine_truth):
    return simulate_dataset(sine_truth)


@pytest.fixture(scope="session")
def sine_fit(sine_data):
    d, _ = sine_data
    return fit_model(d, "stage ~ s(doy, k=12)")


@pytest.fixture(scope="session")
def site_data():
    """Three sites whose seasonal curves are phase-shifted copies."""
    truth = TruthSpec(
        eta=EtaSpec("per_level", {
            "base": EtaSpec("constant", {"value": 0.0}),
            "deviations": {
                "1": EtaSpec("sine", {"amplitude": 2.0, "scale": 20.0, "shift": -8.0}),
                "2": EtaSpec("sine", {"amplitude": 2.0, "scale": 20.0, "shift": 0.0}),
                "3": EtaSpec("sine", {"amplitude": 2.0, "scale": 20.0, "shift": 8.0}),
            },
        }),
        theta=(-1.0, 0.0, 1.0),
        n=1200,
        x_range=(100.0, 250.0),
        seed=4,
        var="doy",
        factor="site",
        levels=("1", "2", "3"),
    )
    d, eta = simulate_dataset(truth)
    return d, eta


def rng_for(test_seed: int) -> np.random.Generator:
    return np.random.default_rng(test_seed)
