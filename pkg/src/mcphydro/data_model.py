"""Daily forcing series: ingestion, validation, partitioning, scaling,
and synthetic data generation."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateChannelError,
    InsufficientDataError,
    ParseError,
    StructuralError,
    ValidationError,
)

FORCING_HEADER = ["date", "precip_mm", "pet_mm", "streamflow_mm"]
DEFAULT_WY_START_MONTH = 10  # Oct 1 - Sep 30 water year


class Subset(enum.IntEnum):
    TRAIN = 0
    SELECT = 1
    TEST = 2


_SUBSET_NAMES = {Subset.TRAIN: "train", Subset.SELECT: "select",
                 Subset.TEST: "test"}
_SUBSET_FROM_NAME = {v: k for k, v in _SUBSET_NAMES.items()}


@dataclass(frozen=True)
class ForcingSeries:
    """Aligned daily sequences of precipitation, potential loss (PET) and,
    optionally, observed streamflow.  All fluxes in mm/day."""

    dates: np.ndarray          # datetime64[D], strictly consecutive
    precip: np.ndarray
    pot_loss: np.ndarray
    obs_out: np.ndarray | None = None

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        object.__setattr__(self, "dates", dates)
        for name in ("precip", "pot_loss", "obs_out"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.ascontiguousarray(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = dates.shape[0]
        if self.precip.shape[0] != n or self.pot_loss.shape[0] != n:
            raise StructuralError("forcing columns have mismatched lengths")
        if self.obs_out is not None and self.obs_out.shape[0] != n:
            raise StructuralError("obs_out length mismatch")
        if n > 1:
            deltas = np.diff(dates).astype(int)
            gaps = np.flatnonzero(deltas != 1)
            if gaps.size:
                raise StructuralError(f"gap after {dates[gaps[0]]}")
        for name in ("precip", "pot_loss", "obs_out"):
            arr = getattr(self, name)
            if arr is None:
                continue
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite value in {name}")
            if np.any(arr < 0):
                raise ValidationError(f"negative value in {name}")
        dates.setflags(write=False)

    def __len__(self):
        return self.dates.shape[0]


@dataclass(frozen=True)
class PartitionMask:
    """Per-timestep Train/Select/Test labels, constant within water years."""

    labels: np.ndarray  # int8 of Subset values

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    def where(self, subset):
        return self.labels == np.int8(subset)

    def __len__(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class ScalingStats:
    """Mean / population standard deviation of one information channel."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateChannelError(None, f"std must be > 0, got {self.std}")

    def scale(self, x):
        return (x - self.mean) / self.std


IDENTITY_SCALING = ScalingStats(0.0, 1.0)


@dataclass(frozen=True)
class SyntheticTruth:
    """A known generating model: architecture + parameters + seed."""

    architecture: object            # mcp_core.ArchitectureSpec
    params: object                  # training.ParameterVector
    rng_seed: int
    wet_probability: float = 0.3
    wet_depth_mean_mm: float = 8.0
    pet_mean: float = 3.5
    pet_amplitude: float = 2.5
    pet_floor: float = 0.1


# ---------------------------------------------------------------------------
# ingestion / serialization

def ingest_forcing(path):
    """Read a forcing CSV (`date,precip_mm,pet_mm[,streamflow_mm]`)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:3] != FORCING_HEADER[:3]:
            raise ParseError(
                f"{path}: expected header starting {FORCING_HEADER[:3]}, "
                f"got {header[:3]}")
        has_obs = len(header) >= 4 and header[3] == FORCING_HEADER[3]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            want = 4 if has_obs else 3
            if len(row) < want:
                raise ParseError(f"{path}:{lineno}: expected {want} fields")
            try:
                date = np.datetime64(row[0].strip(), "D")
                vals = [float(c) for c in row[1:want]]
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            rows.append((date, vals))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    precip = np.array([r[1][0] for r in rows])
    pet = np.array([r[1][1] for r in rows])
    obs = np.array([r[1][2] for r in rows]) if has_obs else None
    return ForcingSeries(dates, precip, pet, obs)


def write_forcing(fs, path):
    """Inverse of ingest_forcing; floats serialized via repr so the
    round-trip is bit-identical for finite values."""
    has_obs = fs.obs_out is not None
    header = FORCING_HEADER if has_obs else FORCING_HEADER[:3]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(fs)):
            row = [str(fs.dates[i]), repr(float(fs.precip[i])),
                   repr(float(fs.pot_loss[i]))]
            if has_obs:
                row.append(repr(float(fs.obs_out[i])))
            w.writerow(row)


def write_mask(fs, mask, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "label"])
        for i in range(len(fs)):
            w.writerow([str(fs.dates[i]), _SUBSET_NAMES[Subset(mask.labels[i])]])


# ---------------------------------------------------------------------------
# water years

def water_year_index(dates, wy_start_month=DEFAULT_WY_START_MONTH):
    """Water-year label per date: the calendar year in which the WY ends."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    years = dates.astype("datetime64[Y]").astype(int) + 1970
    months = dates.astype("datetime64[M]").astype(int) % 12 + 1
    wy = years.copy()
    if wy_start_month != 1:
        wy[months >= wy_start_month] += 1
    return wy


def complete_water_years(dates, wy_start_month=DEFAULT_WY_START_MONTH):
    """Ordered list of (wy, index_array) for complete water years only."""
    wy = water_year_index(dates, wy_start_month)
    out = []
    for y in np.unique(wy):
        idx = np.flatnonzero(wy == y)
        start = np.datetime64(f"{y - 1:04d}-{wy_start_month:02d}-01", "D")
        end = np.datetime64(f"{y:04d}-{wy_start_month:02d}-01", "D")
        if dates[idx[0]] == start and dates[idx[-1]] == end - 1:
            out.append((int(y), idx))
    return out


# ---------------------------------------------------------------------------
# operations

def partition_by_year(fs, ratio=(2, 1, 1), wy_start_month=DEFAULT_WY_START_MONTH):
    """Distributionally-consistent Train/Select/Test split.

    Complete water years are ranked by annual observed flow volume
    (ties broken by calendar order) and each consecutive ranked block of 4
    receives the pattern [Train, Select, Train, Test], so every subset sees
    the full range of wet-to-dry years.  Timesteps in incomplete edge years
    fall into Train.
    """
    if ratio != (2, 1, 1):
        raise ValidationError(f"only the 2:1:1 split is supported, got {ratio}")
    if fs.obs_out is None:
        raise ValidationError("partition_by_year requires observed output")
    years = complete_water_years(fs.dates, wy_start_month)
    if len(years) < 4:
        raise InsufficientDataError(
            f"need >= 4 complete water years, found {len(years)}")
    volumes = [(float(fs.obs_out[idx].sum()), k) for k, (_, idx) in enumerate(years)]
    ranked = sorted(range(len(years)), key=lambda k: (volumes[k][0], k))
    pattern = [Subset.TRAIN, Subset.SELECT, Subset.TRAIN, Subset.TEST]
    labels = np.full(len(fs), np.int8(Subset.TRAIN))
    for pos, k in enumerate(ranked):
        _, idx = years[k]
        labels[idx] = np.int8(pattern[pos % 4])
    return PartitionMask(labels)


def compute_scaling(channel):
    """Mean and population standard deviation of an information channel."""
    arr = np.asarray(channel, dtype=float)
    if arr.shape[0] < 2:
        raise ValidationError("need at least 2 values to compute scaling")
    mean = float(arr.mean())
    std = float(arr.std())
    if std == 0.0:
        raise DegenerateChannelError(None, "constant sequence has zero std")
    return ScalingStats(mean, std)


def generate_synthetic(truth, n_years, start_year=2000,
                       wy_start_month=DEFAULT_WY_START_MONTH, spinup_years=3):
    """Seeded synthetic forcing plus truth-model streamflow.

    Precipitation: daily wet probability `truth.wet_probability`, wet-day
    depths exponential with mean `truth.wet_depth_mean_mm` (humid-like
    defaults).  Potential loss: seasonal sinusoid with a floor.  Observed
    output: the truth model simulated on this forcing.  Pure function of
    (truth, n_years, start_year).
    """
    from .mcp_core import simulate  # local import; mcp_core depends on us

    if n_years < 1:
        raise ValidationError("n_years must be >= 1")
    start = np.datetime64(f"{start_year:04d}-{wy_start_month:02d}-01", "D")
    end = np.datetime64(f"{start_year + n_years:04d}-{wy_start_month:02d}-01", "D")
    dates = np.arange(start, end)
    n = dates.shape[0]
    rng = np.random.default_rng(truth.rng_seed)
    wet = rng.random(n) < truth.wet_probability
    depth = rng.exponential(truth.wet_depth_mean_mm, size=n)
    precip = np.where(wet, depth, 0.0)
    t = np.arange(n, dtype=float)
    # peak demand mid-summer for an October water-year start
    pet = truth.pet_mean + truth.pet_amplitude * np.sin(
        2.0 * np.pi * (t - 171.0) / 365.25)
    pet = np.maximum(truth.pet_floor, pet)
    forcing = ForcingSeries(dates, precip, pet)
    trace = simulate(truth.architecture, truth.params, forcing,
                     spinup_years=spinup_years, wy_start_month=wy_start_month)
    return ForcingSeries(dates, precip, pet, trace.o)
