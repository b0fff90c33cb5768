import numpy as np
import pytest

from style_toolkit.geometry import LatentGeometry
from style_toolkit.backends import ToyLinearBackend


@pytest.fixture
def toy_geometry():
    return LatentGeometry(
        num_layers=6,
        latent_dim=8,
        style_channel_counts=(8,) * 6,
        group_boundaries=(2, 4),
    )


@pytest.fixture
def make_toy_backend(toy_geometry):
    """Factory for toy backends; defaults keep the output clamp inactive."""

    def factory(**overrides):
        kwargs = dict(
            geometry=toy_geometry,
            embed_dim=12,
            image_hw=(4, 4),
            seed=11,
            gen_scale=0.004,
            pixel_bias=0.5,
            text_table={"a photo of a car": list(range(1, 13))},
        )
        kwargs.update(overrides)
        return ToyLinearBackend(**kwargs)

    return factory


@pytest.fixture
def toy_backend(make_toy_backend):
    return make_toy_backend()


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion, regardless of -v.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: {report.outcome.upper()}", flush=True)
