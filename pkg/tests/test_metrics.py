import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcphydro.data_model import PartitionMask, Subset
from mcphydro.errors import InsufficientDataError, ValidationError
from mcphydro.metrics import (
    SQRT2,
    annual_distribution,
    kge,
    kge_masked,
    percentile_summary,
)


def _series(seed=0, n=100):
    rng = np.random.default_rng(seed)
    return rng.exponential(2.0, n) + 0.5


def test_identity_scores_one():
    obs = _series()
    c = kge(obs, obs)
    assert c.alpha == 1.0 and c.beta == 1.0
    assert math.isclose(c.rho, 1.0, abs_tol=1e-12)
    assert math.isclose(c.kge, 1.0, abs_tol=1e-12)
    assert math.isclose(c.kge_ss, 1.0, abs_tol=1e-12)


def test_doubled_series():
    obs = _series(1)
    c = kge(2.0 * obs, obs)
    assert math.isclose(c.alpha, 2.0, rel_tol=1e-12)
    assert math.isclose(c.beta, 2.0, rel_tol=1e-12)
    assert math.isclose(c.rho, 1.0, abs_tol=1e-12)
    assert math.isclose(c.kge, 1.0 - SQRT2, abs_tol=1e-12)


def test_mean_predictor_scores_zero():
    obs = _series(2)
    sim = np.full_like(obs, obs.mean())
    c = kge(sim, obs)
    assert math.isclose(c.kge, 1.0 - SQRT2, abs_tol=1e-12)
    assert abs(c.kge_ss) < 1e-12
    # exactly constant simulation takes the rho := 0 convention
    c2 = kge(np.full(100, 3.0), obs)
    assert c2.rho == 0.0 and c2.alpha == 0.0


def test_constant_obs_rejected():
    with pytest.raises(ValidationError):
        kge(_series(), np.full(100, 3.0))


def test_kge_reorder_invariant():
    obs = _series(3)
    sim = _series(4)
    perm = np.random.default_rng(5).permutation(obs.shape[0])
    a = kge(sim, obs)
    b = kge(sim[perm], obs[perm])
    assert math.isclose(a.kge, b.kge, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# masked

def test_mask_all_equals_kge():
    obs, sim = _series(6), _series(7)
    mask = PartitionMask(np.zeros(100, dtype=np.int8))
    assert kge_masked(sim, obs, mask, Subset.TRAIN).kge == kge(sim, obs).kge


def test_mask_perfect_subset():
    obs = _series(8)
    sim = obs.copy()
    labels = np.zeros(100, dtype=np.int8)
    labels[40:60] = int(Subset.SELECT)
    mask = PartitionMask(labels)
    assert math.isclose(kge_masked(sim, obs, mask, Subset.SELECT).kge_ss,
                        1.0, abs_tol=1e-12)


def test_disjoint_subsets_all_one():
    obs = _series(9, 120)
    labels = np.array(([0] * 40) + ([1] * 40) + ([2] * 40), dtype=np.int8)
    mask = PartitionMask(labels)
    for s in Subset:
        assert math.isclose(kge_masked(obs, obs, mask, s).kge_ss, 1.0,
                            abs_tol=1e-12)


# ---------------------------------------------------------------------------
# annual distribution

def _years(obs_by_year, sim_by_year, start_year=2000):
    dates, obs, sim = [], [], []
    for k, (o, s) in enumerate(zip(obs_by_year, sim_by_year)):
        d0 = np.datetime64(f"{start_year + k - 1}-10-01", "D")
        d1 = np.datetime64(f"{start_year + k}-10-01", "D")
        d = np.arange(d0, d1)
        n = d.shape[0]
        dates.append(d)
        obs.append(o(n))
        sim.append(s(n))
    return (np.concatenate(sim), np.concatenate(obs), np.concatenate(dates))


def test_two_perfect_years():
    mk = lambda n: np.linspace(1.0, 2.0, n)
    sim, obs, dates = _years([mk, mk], [mk, mk])
    dist = annual_distribution(sim, obs, dates)
    assert all(math.isclose(v, 1.0, abs_tol=1e-12)
               for v in dist.percentiles.values())


def test_median_interpolation():
    assert math.isclose(
        percentile_summary([0.2, 0.4, 0.6, 0.8])["median"], 0.5,
        rel_tol=1e-12)


def test_percentiles_monotone():
    p = percentile_summary(np.random.default_rng(0).uniform(size=15))
    vals = [p["worst"], p["5%"], p["25%"], p["median"], p["75%"], p["95%"]]
    assert vals == sorted(vals)


def test_constant_year_excluded():
    mk = lambda n: np.linspace(1.0, 2.0, n)
    flat = lambda n: np.full(n, 3.0)
    obs_fns = [mk, mk, flat, mk, mk]
    sim_fns = [mk] * 5
    sim, obs, dates = _years(obs_fns, sim_fns)
    dist = annual_distribution(sim, obs, dates)
    assert len(dist.years) == 4
    assert len(dist.excluded_years) == 1


def test_no_complete_year_errors():
    d = np.arange(np.datetime64("2000-01-01"), np.datetime64("2000-03-01"))
    with pytest.raises(InsufficientDataError):
        annual_distribution(np.ones(d.shape[0]), np.ones(d.shape[0]), d)


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_annual_percentiles_permutation_invariant(rnd):
    scores = [0.1, 0.35, 0.5, 0.62, 0.8, 0.93]
    p1 = percentile_summary(scores)
    rnd.shuffle(scores)
    p2 = percentile_summary(scores)
    assert p1 == p2


def test_kge_ss_affine_monotone():
    obs = _series(10)
    prev = None
    for scale in (0.2, 0.5, 1.0):
        c = kge(obs * scale + (1 - scale) * obs.mean(), obs)
        if prev is not None:
            assert c.kge > prev.kge
            assert c.kge_ss > prev.kge_ss
        prev = c
