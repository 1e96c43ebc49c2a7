import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from ecocal.calibrate import build_bundle
from ecocal.fixtures import NPZ_CLOCK, NPZ_SPECS, build_logistic_pair, build_npz_model
from ecocal.modeldb import ModelDatabase

DAY = 86400.0

# the synthetic-recovery task shared by calibrator and acceptance tests
RECOVERY_TARGETS = [
    "Nutrients.n",
    "Phytoplankton.biomass",
    "Zooplankton.biomass",
    "Phytoplankton.uptake",
    "Phytoplankton.recycle",
    "Phytoplankton.detritus",
    "Zooplankton.grazing",
    "Zooplankton.egestion",
    "Zooplankton.mortality",
]
RECOVERY_TIMES = [i * 7.5 * DAY for i in range(1, 21)]
RECOVERY_PERTURBATIONS = [
    ("Phytoplankton", "gamma", 0.2),
    ("Phytoplankton", "mp", 0.2),
    ("Zooplankton", "mz", 0.37),
]


@pytest.fixture
def npz_model():
    return build_npz_model()


@pytest.fixture
def logistic_model():
    return build_logistic_pair()


@pytest.fixture(scope="session")
def npz_db():
    return ModelDatabase("npz", NPZ_CLOCK, NPZ_SPECS)


@pytest.fixture(scope="session")
def npz_bundle(npz_db):
    # trained once on the reference database; several suites share it
    return build_bundle(npz_db.build())
