import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chillerkit.dispatch import default_plant
from chillerkit.ingest import LoadSeries

settings.register_profile("ci", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def plant():
    return default_plant()


def day_series(values, start="2023-08-01T00:00", provenance="raw"):
    return LoadSeries(np.datetime64(start), np.asarray(values, dtype=float), provenance)
