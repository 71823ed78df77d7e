"""Kling-Gupta efficiency, the rescaled skill score, masked-subset
evaluation, and year-wise distribution summaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data_model import DEFAULT_WY_START_MONTH, complete_water_years
from .errors import InsufficientDataError, ValidationError

SQRT2 = math.sqrt(2.0)

PERCENTILE_LEVELS = (0.0, 5.0, 25.0, 50.0, 75.0, 95.0)
PERCENTILE_LABELS = ("worst", "5%", "25%", "median", "75%", "95%")


@dataclass(frozen=True)
class KgeComponents:
    """Variability ratio, bias ratio, correlation, and the derived scores."""

    alpha: float
    beta: float
    rho: float
    kge: float
    kge_ss: float

    def as_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "rho": self.rho,
                "kge": self.kge, "kge_ss": self.kge_ss}


@dataclass(frozen=True)
class AnnualDistribution:
    """Per-water-year scores and their percentile summary.

    Years whose observations are constant cannot be scored and are flagged
    as excluded rather than silently dropped.
    """

    years: tuple
    scores: tuple            # kge_ss per scored year, aligned with years
    components: tuple        # KgeComponents per scored year
    excluded_years: tuple
    percentiles: dict        # label -> value, levels PERCENTILE_LEVELS

    def as_dict(self):
        return {
            "years": list(self.years),
            "scores": list(self.scores),
            "components": [c.as_dict() for c in self.components],
            "excluded_years": list(self.excluded_years),
            "percentiles": dict(self.percentiles),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)


def kge(sim, obs):
    """KGE components of a simulated series against observations.

    Uses population standard deviations.  A constant simulation gets
    rho = 0 by convention, so a mean-of-observations predictor scores
    kge = 1 - sqrt(2) and kge_ss = 0.
    """
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape:
        raise ValidationError("sim and obs must have equal lengths")
    if sim.shape[0] < 2:
        raise ValidationError("need at least 2 timesteps")
    mu_s, mu_o = float(sim.mean()), float(obs.mean())
    sd_s, sd_o = float(sim.std()), float(obs.std())
    if sd_o == 0.0:
        raise ValidationError("observed series is constant")
    alpha = sd_s / sd_o
    if mu_o == 0.0:
        raise ValidationError("observed series has zero mean")
    beta = mu_s / mu_o
    if sd_s == 0.0:
        rho = 0.0
    else:
        cov = float(((sim - mu_s) * (obs - mu_o)).mean())
        rho = cov / (sd_s * sd_o)
    kge_v = 1.0 - math.sqrt((rho - 1.0) ** 2 + (beta - 1.0) ** 2
                            + (alpha - 1.0) ** 2)
    kge_ss = 1.0 - (1.0 - kge_v) / SQRT2
    return KgeComponents(alpha, beta, rho, kge_v, kge_ss)


def kge_masked(sim, obs, mask, label):
    """KGE restricted to the timesteps carrying a partition label."""
    sel = mask.where(label)
    if int(sel.sum()) < 2:
        raise ValidationError(f"fewer than 2 timesteps labeled {label}")
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape[0] != len(mask) or obs.shape[0] != len(mask):
        raise ValidationError("mask not aligned with series")
    return kge(sim[sel], obs[sel])


def percentile_summary(scores):
    """Linear-interpolation order-statistic percentiles plus the minimum."""
    arr = np.asarray(scores, dtype=float)
    out = {}
    for label, level in zip(PERCENTILE_LABELS, PERCENTILE_LEVELS):
        if label == "worst":
            out[label] = float(arr.min())
        else:
            out[label] = float(np.percentile(arr, level, method="linear"))
    return out


def annual_distribution(sim, obs, dates, wy_start_month=DEFAULT_WY_START_MONTH):
    """Year-wise skill scores over complete water years."""
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    wys = complete_water_years(dates, wy_start_month)
    if not wys:
        raise InsufficientDataError("no complete water years")
    years, scores, comps, excluded = [], [], [], []
    for y, idx in wys:
        o = obs[idx]
        if float(o.std()) == 0.0 or float(o.mean()) == 0.0:
            excluded.append(y)
            continue
        c = kge(sim[idx], o)
        years.append(y)
        scores.append(c.kge_ss)
        comps.append(c)
    if not scores:
        raise InsufficientDataError("every water year had constant observations")
    return AnnualDistribution(tuple(years), tuple(scores), tuple(comps),
                              tuple(excluded), percentile_summary(scores))
