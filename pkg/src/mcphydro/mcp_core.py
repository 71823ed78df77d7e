"""The mass-conserving cell: single-step update, full-sequence simulation
with spin-up, and mass bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gates
from .autodiff import Var, relu, sigmoid, value_of
from .data_model import (
    DEFAULT_WY_START_MONTH,
    ScalingStats,
    complete_water_years,
)
from .errors import ContractError, InsufficientDataError, NumericFaultError
from .gates import (
    GateKind,
    GateSpec,
    POT_LOSS_T,
    STATE_T,
    STATE_TM1,
    eval_gate,
    eval_mr_gate,
    mr_equilibrium,
    parameter_names,
    softmax_conductivities,
)
from .params import ParameterVector

STATE_CHANNEL = "state"
POT_LOSS_CHANNEL = "pot_loss"

_CHANNEL_OF_CONTEXT = {
    STATE_T: STATE_CHANNEL,
    STATE_TM1: STATE_CHANNEL,
    POT_LOSS_T: POT_LOSS_CHANNEL,
}


@dataclass(frozen=True)
class ArchitectureSpec:
    """One cell's gate configuration plus information-flow scaling."""

    output_gate: GateSpec
    loss_gate: GateSpec
    input_gate: GateSpec | None = None      # None means G^U = 1
    mr_gate: gates.MrGateSpec | None = None
    bc_gate: gates.BcGateSpec | None = None
    scaling: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.output_gate.constrained:
            raise ContractError("the PET constraint applies to the loss gate only")
        needed = set()
        for g in (self.output_gate, self.loss_gate, self.input_gate):
            if g is not None:
                needed.update(_CHANNEL_OF_CONTEXT[c] for c in g.context)
        if self.mr_gate is not None and \
                self.mr_gate.variant is gates.MrVariant.STATE_DEPENDENT:
            needed.add(STATE_CHANNEL)
        missing = needed - set(self.scaling)
        if missing:
            raise ContractError(f"scaling missing for channels: {sorted(missing)}")

    def with_scaling(self, scaling):
        return replace(self, scaling=dict(scaling))

    def parameter_names(self):
        return parameter_names(self)


@dataclass(frozen=True)
class CellState:
    x: float  # mm, non-negative

    def __post_init__(self):
        if self.x < 0:
            raise ContractError(f"cell state must be >= 0, got {self.x}")


@dataclass
class SimulationTrace:
    """Per-timestep record of state, gates and fluxes.

    `x` is the state at the start of each day (the state the gates saw);
    `x_final` is the state after the last update.
    """

    dates: np.ndarray
    x: np.ndarray
    g_out: np.ndarray
    g_loss: np.ndarray
    g_loss_con: np.ndarray
    g_rem: np.ndarray
    g_mr: np.ndarray
    o: np.ndarray
    l: np.ndarray
    q_mr: np.ndarray
    u_corrected: np.ndarray
    u_in: np.ndarray
    clamp: np.ndarray
    x_start: float
    x_final: float

    def __len__(self):
        return self.dates.shape[0]

    COLUMNS = ("x", "g_out", "g_loss", "g_loss_con", "g_rem", "g_mr",
               "o", "l", "q_mr", "u_corrected", "u_in", "clamp")

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("date",) + self.COLUMNS)
            for i in range(len(self)):
                row = [str(self.dates[i])]
                for col in self.COLUMNS:
                    v = getattr(self, col)[i]
                    row.append(int(v) if col == "clamp" else repr(float(v)))
                w.writerow(row)


@dataclass(frozen=True)
class MassLedger:
    """Cumulative flux totals and the conservation residual."""

    total_u_in: float
    total_o: float
    total_l: float
    total_q_mr: float
    delta_x: float
    residual: float
    cum_u_in: np.ndarray = None
    cum_o: np.ndarray = None
    cum_l: np.ndarray = None
    cum_q_mr: np.ndarray = None


class _BoundModel:
    """Architecture + one parameter assignment, ready to step.

    Precomputes everything that is constant along a sequence: softmax
    conductivities, scaling constants, gate parameter groups, and context
    channel selectors (0 = scaled state@t, 1 = scaled state@t-1,
    2 = scaled pot_loss@t).
    """

    def __init__(self, arch, values):
        names = parameter_names(arch)
        if len(values) != len(names):
            raise ContractError(
                f"architecture has {len(names)} parameters, got {len(values)}")
        groups = {"o": {}, "l": {}, "u": {}, "mr": {}, "bc": {}}
        c_r = None
        for name, v in zip(names, values):
            if name == "c_r":
                c_r = v
            else:
                pre, local = name.split(".", 1)
                groups[pre][local] = v
        self.arch = arch
        self.po, self.pl = groups["o"], groups["l"]
        self.pu, self.pmr, self.pbc = groups["u"], groups["mr"], groups["bc"]
        kappas = softmax_conductivities([self.po["c"], self.pl["c"], c_r])
        self.kappa_o, self.kappa_l, self.kappa_r = kappas
        st = arch.scaling.get(STATE_CHANNEL, ScalingStats(0.0, 1.0))
        self.state_mu, self.state_inv = st.mean, 1.0 / st.std
        pt = arch.scaling.get(POT_LOSS_CHANNEL, ScalingStats(0.0, 1.0))
        self.pot_mu, self.pot_inv = pt.mean, 1.0 / pt.std
        sel = {STATE_T: 0, STATE_TM1: 1, POT_LOSS_T: 2}
        self.ctx_o = tuple(sel[c] for c in arch.output_gate.context)
        self.ctx_l = tuple(sel[c] for c in arch.loss_gate.context)
        if arch.input_gate is not None:
            self.ctx_u = tuple(sel[c] for c in arch.input_gate.context)
            # standalone gate: its sigmoid squash already bounds it on (0,1)
            self.kappa_u = sigmoid(self.pu["c"])
        if arch.mr_gate is not None:
            self.c_eq = mr_equilibrium(arch.mr_gate, self.pmr)
            self.scaled_ceq = (self.c_eq - self.state_mu) * self.state_inv

    def scale_state(self, x):
        return (x - self.state_mu) * self.state_inv

    def scale_pot(self, d):
        return (d - self.pot_mu) * self.pot_inv

    def step(self, x, xs_prev, u, d):
        """One day.  Returns (x_new, row dict)."""
        arch = self.arch
        clamp = False
        if arch.bc_gate is not None:
            u_c, bc_clamped = gates.bias_correct(arch.bc_gate, self.pbc, u)
            clamp = clamp or bc_clamped
        else:
            u_c = u
        xs = self.scale_state(x)
        ds = self.scale_pot(d)
        ctx = (xs, xs_prev, ds)
        if arch.input_gate is not None:
            g_u = eval_gate(arch.input_gate, self.pu, self.kappa_u,
                            tuple(ctx[i] for i in self.ctx_u))
            u_in = g_u * u_c
        else:
            u_in = u_c
        g_o = eval_gate(arch.output_gate, self.po, self.kappa_o,
                        tuple(ctx[i] for i in self.ctx_o))
        g_l = eval_gate(arch.loss_gate, self.pl, self.kappa_l,
                        tuple(ctx[i] for i in self.ctx_l))
        if arch.loss_gate.constrained:
            g_lc = gates.constrain_loss_smooth(g_l, d, x)
        else:
            g_lc = g_l
        rem = 1.0 - g_o - g_lc
        o = g_o * x
        l = g_lc * x
        if arch.mr_gate is not None:
            g_mr, q_mr = eval_mr_gate(arch.mr_gate, self.pmr, x, xs,
                                      self.scaled_ceq, self.c_eq, rem)
            x_new = x + u_in - o - l - q_mr
            # MR can extract more than the available state when the
            # equilibrium distance exceeds the state itself; absorb the
            # deficit back into q_mr and floor the state at zero.
            neg = relu(-x_new)
            if value_of(neg) > 0.0:
                clamp = True
            q_mr = q_mr - neg
            x_new = x_new + neg
        else:
            g_mr, q_mr = 0.0, 0.0
            x_new = x + u_in - o - l
        return x_new, {
            "x": x, "g_out": g_o, "g_loss": g_l, "g_loss_con": g_lc,
            "g_rem": rem, "g_mr": g_mr, "o": o, "l": l, "q_mr": q_mr,
            "u_corrected": u_c, "u_in": u_in, "clamp": clamp,
        }


def step(arch, params, state, u, d, prev_scaled_state=None):
    """Single-step contract: returns (CellState, trace row dict)."""
    if u < 0 or d < 0:
        raise ContractError("forcing fluxes must be non-negative")
    bound = _BoundModel(arch, _values_of(params))
    xs_prev = (prev_scaled_state if prev_scaled_state is not None
               else bound.scale_state(state.x))
    x_new, row = bound.step(state.x, xs_prev, u, d)
    x_new = value_of(x_new)
    if not math.isfinite(x_new):
        raise NumericFaultError("non-finite state after step", timestep=0)
    return CellState(x_new), {k: (value_of(v) if k != "clamp" else v)
                              for k, v in row.items()}


def _values_of(params):
    if isinstance(params, ParameterVector):
        return params.values
    return params


def _spinup_indices(dates, spinup_years, wy_start_month):
    if spinup_years == 0:
        return np.array([], dtype=int)
    years = complete_water_years(dates, wy_start_month)
    if not years:
        raise InsufficientDataError(
            "spin-up requires at least one complete water year")
    first = years[0][1]
    return np.concatenate([first] * spinup_years)


def run_sequence(arch, values, u, d, n_skip, collect_trace):
    """Shared inner loop for numeric simulation and tape recording.

    ``values`` may hold floats or tape Vars.  Returns (outputs, rows,
    x_start, x_final) where outputs is the post-skip list of O_t and rows
    is None unless ``collect_trace``.
    """
    bound = _BoundModel(arch, values)
    n = len(u)
    x = 0.0
    xs_prev = bound.scale_state(0.0)
    outputs = []
    rows = [] if collect_trace else None
    x_start = 0.0
    for t in range(n):
        if t == n_skip:
            x_start = value_of(x)
        x, row = bound.step(x, xs_prev, u[t], d[t])
        xv = value_of(x)
        if not math.isfinite(xv):
            raise NumericFaultError(
                f"non-finite state at timestep {t}", timestep=t)
        if t >= n_skip:
            outputs.append(row["o"])
            if collect_trace:
                rows.append(row)
        # the next step's state@t-1 channel sees the state this step saw
        xs_prev = bound.scale_state(row["x"])
    if n_skip >= n:
        x_start = value_of(x)
    return outputs, rows, x_start, value_of(x)


def simulate(arch, params, fs, spinup_years=3,
             wy_start_month=DEFAULT_WY_START_MONTH):
    """Run the cell over a forcing series after spinning up on repeats of
    the first complete water year.  Deterministic; initial state 0 mm."""
    values = _values_of(params)
    spin = _spinup_indices(fs.dates, spinup_years, wy_start_month)
    u = np.concatenate([fs.precip[spin], fs.precip])
    d = np.concatenate([fs.pot_loss[spin], fs.pot_loss])
    outputs, rows, x_start, x_final = run_sequence(
        arch, values, u, d, n_skip=spin.shape[0], collect_trace=True)
    n = len(fs)
    cols = {c: np.empty(n) for c in SimulationTrace.COLUMNS if c != "clamp"}
    clamp = np.zeros(n, dtype=bool)
    for i, row in enumerate(rows):
        for c in cols:
            cols[c][i] = value_of(row[c])
        clamp[i] = row["clamp"]
    return SimulationTrace(dates=fs.dates, clamp=clamp, x_start=x_start,
                           x_final=x_final, **cols)


def mass_ledger(trace):
    """Cumulative fluxes and the conservation residual
    u_in - O - L - q_mr - delta_x (exactly zero up to float rounding)."""
    if len(trace) == 0:
        z = np.zeros(0)
        return MassLedger(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, z, z, z, z)
    cum_u = np.cumsum(trace.u_in)
    cum_o = np.cumsum(trace.o)
    cum_l = np.cumsum(trace.l)
    cum_q = np.cumsum(trace.q_mr)
    delta_x = trace.x_final - trace.x_start
    residual = cum_u[-1] - cum_o[-1] - cum_l[-1] - cum_q[-1] - delta_x
    return MassLedger(float(cum_u[-1]), float(cum_o[-1]), float(cum_l[-1]),
                      float(cum_q[-1]), float(delta_x), float(residual),
                      cum_u, cum_o, cum_l, cum_q)
