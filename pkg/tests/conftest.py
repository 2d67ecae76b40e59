import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from signmimic import bundled

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def signer():
    return bundled.signer_model()


@pytest.fixture(scope="session")
def toy():
    return bundled.toy_model()


@pytest.fixture(scope="session")
def sign_clips():
    return {label: bundled.clip(label) for label in bundled.SIGN_LABELS}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
