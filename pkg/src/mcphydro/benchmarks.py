"""Non-mass-conserving comparison models: ARX, time-delay ANN, simple RNN,
and LSTM, trained with the same optimizer and skill-score loss."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import LossProgram, sigmoid, value_of, vtanh
from .data_model import Subset
from .errors import ContractError, NumericFaultError, ValidationError
from .metrics import annual_distribution
from .params import ParameterVector
from .training import (
    RunResult,
    TrainOutcome,
    _kge_ss_expr,
    _train_one_seed,
    select_best,
)

LSTM_SEQ_LENS = (1, 7, 15, 30, 60, 90, 180, 270, 390)


class Family(enum.Enum):
    ARX = "arx"
    ANN = "ann"
    RNN = "rnn"
    LSTM = "lstm"


@dataclass(frozen=True)
class BenchmarkSpec:
    family: Family
    n_hidden: int = 1
    seq_len: int = 0    # LSTM only

    def __post_init__(self):
        if self.family is not Family.LSTM and self.seq_len:
            raise ContractError("seq_len applies to LSTM only")
        if self.family is Family.LSTM and self.seq_len < 1:
            raise ContractError("LSTM needs seq_len >= 1")
        if self.family is not Family.ARX and self.n_hidden < 1:
            raise ContractError("n_hidden must be >= 1")

    @property
    def ident(self):
        if self.family is Family.ARX:
            return "ARX"
        if self.family is Family.LSTM:
            return f"LSTM({self.n_hidden},seq{self.seq_len})"
        return f"{self.family.name}({self.n_hidden})"


@dataclass(frozen=True)
class NormStats:
    """Per-channel maxima used for [0,1] input scaling."""

    precip_max: float
    pot_loss_max: float
    obs_max: float

    def __post_init__(self):
        for name in ("precip_max", "pot_loss_max", "obs_max"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")


def norm_stats_from_train(fs, mask):
    """Channel maxima over the Train-labeled timesteps only."""
    sel = mask.where(Subset.TRAIN)
    if fs.obs_out is None:
        raise ValidationError("norm stats need observed output")
    return NormStats(float(fs.precip[sel].max()),
                     float(fs.pot_loss[sel].max()),
                     float(fs.obs_out[sel].max()))


# ---------------------------------------------------------------------------
# model construction

def benchmark_param_names(spec):
    f, h = spec.family, spec.n_hidden
    if f is Family.ARX:
        return ["w_o_prev", "w_u", "w_d", "b"]
    if f is Family.ANN:
        names = []
        for j in range(h):
            names += [f"wi{j}_0", f"wi{j}_1", f"wi{j}_2", f"bh{j}"]
        names += [f"wo{j}" for j in range(h)]
        names.append("bo")
        return names
    if f is Family.RNN:
        names = []
        for j in range(h):
            names += [f"wx{j}_0", f"wx{j}_1"]
            names += [f"wh{j}_{k}" for k in range(h)]
            names.append(f"bh{j}")
        names += [f"wo{j}" for j in range(h)]
        names.append("bo")
        return names
    names = []
    for gate in ("i", "f", "o", "c"):
        for j in range(h):
            names += [f"{gate}x{j}_0", f"{gate}x{j}_1"]
            names += [f"{gate}h{j}_{k}" for k in range(h)]
            names.append(f"{gate}b{j}")
    names += [f"wo{j}" for j in range(h)]
    names.append("bo")
    return names


def count_benchmark_parameters(spec):
    return len(benchmark_param_names(spec))


@dataclass(frozen=True)
class BenchmarkModel:
    spec: BenchmarkSpec
    params: ParameterVector


def build_benchmark(spec, values=None):
    names = benchmark_param_names(spec)
    if values is None:
        values = np.zeros(len(names))
    return BenchmarkModel(spec, ParameterVector(tuple(names), values))


def init_benchmark_params(spec, seed):
    names = benchmark_param_names(spec)
    rng = np.random.default_rng(seed)
    vals = np.empty(len(names))
    for i in range(len(names)):
        vals[i] = rng.uniform(-1.0, 1.0)
    return ParameterVector(tuple(names), vals)


# ---------------------------------------------------------------------------
# simulation (works on floats and tape Vars)

def _run_arx(p, u, d, n):
    o_prev = 0.0
    out = []
    for t in range(n):
        o = p["w_o_prev"] * o_prev + p["w_u"] * u[t] + p["w_d"] * d[t] + p["b"]
        out.append(o)
        o_prev = o
    return out


def _run_ann(p, u, d, n, h):
    o_prev = 0.0
    out = []
    for t in range(n):
        inputs = (o_prev, u[t], d[t])
        acc = p["bo"]
        for j in range(h):
            s = p[f"bh{j}"]
            for k in range(3):
                s = s + p[f"wi{j}_{k}"] * inputs[k]
            acc = acc + p[f"wo{j}"] * sigmoid(s)
        out.append(acc)
        o_prev = acc
    return out


def _run_rnn(p, u, d, n, h):
    hid = [0.0] * h
    out = []
    for t in range(n):
        new = []
        for j in range(h):
            s = p[f"bh{j}"] + p[f"wx{j}_0"] * u[t] + p[f"wx{j}_1"] * d[t]
            for k in range(h):
                s = s + p[f"wh{j}_{k}"] * hid[k]
            new.append(vtanh(s))
        hid = new
        acc = p["bo"]
        for j in range(h):
            acc = acc + p[f"wo{j}"] * hid[j]
        out.append(acc)
    return out


def _run_lstm(p, u, d, n, h, seq_len):
    out = []
    for t in range(n):
        # hidden and cell state rebuilt from zero over the trailing window
        hid = [0.0] * h
        cell = [0.0] * h
        for s in range(max(0, t - seq_len + 1), t + 1):
            new_h, new_c = [], []
            for j in range(h):
                acts = {}
                for gate in ("i", "f", "o", "c"):
                    a = p[f"{gate}b{j}"] + p[f"{gate}x{j}_0"] * u[s] \
                        + p[f"{gate}x{j}_1"] * d[s]
                    for k in range(h):
                        a = a + p[f"{gate}h{j}_{k}"] * hid[k]
                    acts[gate] = a
                c = sigmoid(acts["f"]) * cell[j] \
                    + sigmoid(acts["i"]) * vtanh(acts["c"])
                new_c.append(c)
                new_h.append(sigmoid(acts["o"]) * vtanh(c))
            hid, cell = new_h, new_c
        acc = p["bo"]
        for j in range(h):
            acc = acc + p[f"wo{j}"] * hid[j]
        out.append(acc)
    return out


def run_benchmark(spec, params, u_norm, d_norm):
    """Normalized predictions from normalized inputs; float or Var."""
    if isinstance(params, ParameterVector):
        p = params.as_dict()
    elif isinstance(params, dict):
        p = params
    else:
        p = dict(zip(benchmark_param_names(spec), params))
    n = len(u_norm)
    if spec.family is Family.ARX:
        return _run_arx(p, u_norm, d_norm, n)
    if spec.family is Family.ANN:
        return _run_ann(p, u_norm, d_norm, n, spec.n_hidden)
    if spec.family is Family.RNN:
        return _run_rnn(p, u_norm, d_norm, n, spec.n_hidden)
    return _run_lstm(p, u_norm, d_norm, n, spec.n_hidden, spec.seq_len)


def simulate_benchmark(model, fs, norm):
    """Predicted streamflow in mm/day; negatives clamped with a count.

    ARX/ANN run closed-loop on their own prior (normalized) prediction
    starting from zero; RNN/LSTM see only precipitation and potential
    loss.  Returns (predictions, n_clamped).
    """
    u = fs.precip / norm.precip_max
    d = fs.pot_loss / norm.pot_loss_max
    raw = run_benchmark(model.spec, model.params, u, d)
    pred = np.array([value_of(v) for v in raw]) * norm.obs_max
    bad = np.flatnonzero(~np.isfinite(pred))
    if bad.size:
        raise NumericFaultError(
            f"non-finite prediction at timestep {int(bad[0])}",
            timestep=int(bad[0]))
    n_clamped = int((pred < 0.0).sum())
    return np.maximum(pred, 0.0), n_clamped


# ---------------------------------------------------------------------------
# training

def build_benchmark_loss(spec, fs, mask, norm):
    """Recorded 1 - Train skill score with Select/Test scores watched.

    The normalized predictions and the normalized observations share the
    observation-maximum scale, so the score equals the mm/day score.
    """
    if fs.obs_out is None:
        raise ValidationError("training requires observed output")
    u = fs.precip / norm.precip_max
    d = fs.pot_loss / norm.pot_loss_max
    obs = fs.obs_out / norm.obs_max
    subset_idx = {s: np.flatnonzero(mask.where(s))
                  for s in (Subset.TRAIN, Subset.SELECT, Subset.TEST)}

    def build(pvars):
        outputs = run_benchmark(spec, pvars, u, d)
        scores = [_kge_ss_expr(outputs, obs, subset_idx[s])
                  for s in (Subset.TRAIN, Subset.SELECT, Subset.TEST)]
        return 1.0 - scores[0], scores

    return LossProgram(build, count_benchmark_parameters(spec))


def benchmark_epochs(spec, default=2000):
    return 5000 if spec.family is Family.ANN else default


def train_benchmark(spec, fs, mask, cfg, norm=None):
    """Same multi-seed protocol as the conserving models, fixed lr."""
    if norm is None:
        norm = norm_stats_from_train(fs, mask)
    # an explicit epoch override wins; otherwise family defaults apply
    epochs = cfg.epochs if cfg.epochs != 2000 else benchmark_epochs(spec)
    bcfg = replace(cfg, lr_early=1.25e-2, lr_late=1.25e-2, epochs=epochs)
    program = build_benchmark_loss(spec, fs, mask, norm)

    def run_seed(seed):
        p0 = init_benchmark_params(spec, seed)
        try:
            res = _train_one_seed(program, p0, bcfg)
            res.seed = seed
            return res
        except NumericFaultError as exc:
            return RunResult(seed=seed, params=None, history=[],
                             failed=True, fault=str(exc))

    results = [run_seed(s) for s in bcfg.seeds]
    return TrainOutcome(arch_id=spec.ident,
                        results={r.seed: r for r in results},
                        best_seed=select_best(results).seed), norm


def benchmark_suite(fs, mask, cfg, specs=None,
                    lstm_seq_lens=LSTM_SEQ_LENS):
    """Train each benchmark family and emit a percentile comparison table.

    LSTM specs with seq_len 0 are expanded into a grid over
    ``lstm_seq_lens`` and the best Select score wins.  Rows keep the order
    of ``specs``; per-model faults are isolated into an "error" field.
    """
    if specs is None:
        specs = [BenchmarkSpec(Family.ARX),
                 BenchmarkSpec(Family.ANN, 1),
                 BenchmarkSpec(Family.RNN, 1),
                 BenchmarkSpec(Family.LSTM, 1, lstm_seq_lens[0])]
    norm = norm_stats_from_train(fs, mask)
    rows = []
    for spec in specs:
        candidates = [spec]
        if spec.family is Family.LSTM and spec.seq_len == 0:
            candidates = [replace(spec, seq_len=sl) for sl in lstm_seq_lens]
        try:
            trained = [train_benchmark(c, fs, mask, cfg, norm)[0]
                       for c in candidates]
            outcome = max(trained, key=lambda o: o.best.select_ss)
            chosen = candidates[trained.index(outcome)]
            model = build_benchmark(chosen, outcome.best.params.values)
            pred, _ = simulate_benchmark(model, fs, norm)
            dist = annual_distribution(pred, fs.obs_out, fs.dates,
                                       cfg.wy_start_month)
            row = {"model": outcome.arch_id,
                   "n_params": count_benchmark_parameters(chosen),
                   "select_kge_ss": outcome.best.select_ss}
            row.update(dist.percentiles)
        except NumericFaultError as exc:
            row = {"model": spec.ident,
                   "n_params": count_benchmark_parameters(spec),
                   "error": str(exc)}
        rows.append(row)
    return rows
