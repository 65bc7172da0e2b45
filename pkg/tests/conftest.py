from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from tracech import cutgeom as cg
from tracech import lattice as lat
from tracech.levelset import DiscreteLevelSet, MovingSphere
from tracech.scenarios import BOX_SPHERE

settings.register_profile("tracech", deadline=None, max_examples=60)
settings.load_profile("tracech")


def sphere_geometry(level, field=None, t=0.0, delta=0.0, degree=4):
    field = MovingSphere() if field is None else field
    spec = lat.LatticeSpec.from_level(level, *BOX_SPHERE)
    dls = DiscreteLevelSet(field, spec, t)
    surf = cg.extract_surface(dls, degree=degree)
    band = cg.select_band(dls, surf, delta)
    return field, spec, surf, band


@pytest.fixture
def sphere_l1():
    return sphere_geometry(1)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
