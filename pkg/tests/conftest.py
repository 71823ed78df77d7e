"""Shared fixtures: frozen synthetic truths and forcing series."""

import numpy as np
import pytest

from mcphydro.data_model import (
    SyntheticTruth,
    generate_synthetic,
    partition_by_year,
)
from mcphydro.grammar import parse_arch
from mcphydro.params import ParameterVector

# A strongly nonlinear generating model: threshold-like discharge plus a
# state-dependent loss on dry seasonal forcing.  Frozen so every test run
# sees identical data.
RECOVERY_ARCH_TEXT = "MC{O=sig,L=sig}"
RECOVERY_PARAM_NAMES = ("o.c", "o.a", "o.b", "l.c", "l.a", "l.b", "c_r")
RECOVERY_PARAM_VALUES = (0.0, -21.0, 0.7, 0.0, 0.0, -0.1, 1.0)
RECOVERY_SEED = 7
RECOVERY_FORCING = dict(wet_probability=0.25, wet_depth_mean_mm=9.0,
                        pet_mean=4.0, pet_amplitude=3.5)


def make_recovery_truth():
    arch = parse_arch(RECOVERY_ARCH_TEXT)
    params = ParameterVector(RECOVERY_PARAM_NAMES,
                             np.array(RECOVERY_PARAM_VALUES))
    return SyntheticTruth(arch, params, RECOVERY_SEED, **RECOVERY_FORCING)


@pytest.fixture(scope="session")
def recovery_truth():
    return make_recovery_truth()


@pytest.fixture(scope="session")
def recovery_forcing(recovery_truth):
    return generate_synthetic(recovery_truth, 20)


@pytest.fixture(scope="session")
def recovery_mask(recovery_forcing):
    return partition_by_year(recovery_forcing)


@pytest.fixture(scope="session")
def small_forcing():
    """5 seeded synthetic years from a mild random truth."""
    arch = parse_arch("MC{O=sig,L=sig}")
    rng = np.random.default_rng(11)
    from mcphydro.gates import parameter_names
    names = tuple(parameter_names(arch))
    params = ParameterVector(names, rng.uniform(-1.0, 1.0, len(names)))
    return generate_synthetic(SyntheticTruth(arch, params, 3), 5)


@pytest.fixture(scope="session")
def short_inputs():
    """100 days of seeded forcing plus a synthetic observation series."""
    rng = np.random.default_rng(123)
    n = 100
    u = rng.exponential(8.0, n) * (rng.random(n) < 0.3)
    d = np.maximum(0.1, 3.5 + 2.5 * np.sin(2 * np.pi * np.arange(n) / 365.25))
    obs = rng.exponential(1.0, n) + 0.1
    return u, d, obs
