import numpy as np
import pytest

from conelab import (ConeSpec, NormalField, ReducedFunction, ReducedMap,
                     build_cross_section, eigendecompose)

REFERENCE = {
    "clifford": dict(family="clifford", resolution=(24, 24)),
    "plane21": dict(family="plane", n=2, k=1, resolution=(48,)),
    "plane31": dict(family="plane", n=3, k=1, resolution=(16,)),
    "plane22": dict(family="plane", n=2, k=2, resolution=(48,)),
    "product12": dict(family="sphere_product", p=1, q=2, resolution=(12, 12)),
}


@pytest.fixture(scope="session")
def sections():
    """Reference cross-sections, built once."""
    return {name: build_cross_section(ConeSpec(**kw))
            for name, kw in REFERENCE.items()}


@pytest.fixture(scope="session")
def bases(sections):
    return {name: eigendecompose(cs) for name, cs in sections.items()}


@pytest.fixture(scope="session")
def reduced(bases):
    return {name: ReducedFunction(ReducedMap(basis))
            for name, basis in bases.items()}


def smooth_field(cs, seed=0, scale=1.0, decay=2.0):
    """Seeded band-limited normal field with spectrally decaying coefficients."""
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((cs.n_scalar_modes, cs.codim))
    coef /= (1.0 + cs.laplace_eigs[:, None]) ** (decay / 2.0)
    return scale * NormalField(cs, coef)
