"""Reverse-mode automatic differentiation on a scalar operation tape.

A computation is recorded once as a flat program (opcode + parent indices +
value per node) and can then be replayed many times with new leaf values via
numba-compiled forward/backward interpreters.  Recording happens eagerly in
Python, so every `Var` always carries its current value; that lets model code
branch on recorded values where an operation's contract demands it.

Kink conventions: relu/abs/sign (and min/max at ties) propagate a zero
derivative exactly at the kink, so clip constructions of the form
``f - relu(f - bound)`` differentiate through the unclipped branch.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import NumericFaultError

# opcodes
LEAF = 0
CONST = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
NEG = 6
EXP = 7
LOG = 8
TANH = 9
SIGMOID = 10
RELU = 11
ABS = 12
SIGN = 13
MIN = 14
MAX = 15
POW = 16
SUM = 17  # sums the contiguous node range [p1, p2)
COPY = 18

OP_NAMES = {
    LEAF: "leaf", CONST: "const", ADD: "add", SUB: "sub", MUL: "mul",
    DIV: "div", NEG: "neg", EXP: "exp", LOG: "log", TANH: "tanh",
    SIGMOID: "sigmoid", RELU: "relu", ABS: "abs", SIGN: "sign",
    MIN: "min", MAX: "max", POW: "power", SUM: "sum", COPY: "copy",
}


@njit(cache=True, nogil=True)
def _forward(op, p1, p2, val):
    for i in range(op.shape[0]):
        o = op[i]
        if o <= CONST:
            continue
        a = p1[i]
        b = p2[i]
        if o == ADD:
            val[i] = val[a] + val[b]
        elif o == SUB:
            val[i] = val[a] - val[b]
        elif o == MUL:
            val[i] = val[a] * val[b]
        elif o == DIV:
            val[i] = val[a] / val[b]
        elif o == NEG:
            val[i] = -val[a]
        elif o == EXP:
            val[i] = math.exp(val[a])
        elif o == LOG:
            val[i] = math.log(val[a])
        elif o == TANH:
            val[i] = math.tanh(val[a])
        elif o == SIGMOID:
            x = val[a]
            if x >= 0.0:
                val[i] = 1.0 / (1.0 + math.exp(-x))
            else:
                e = math.exp(x)
                val[i] = e / (1.0 + e)
        elif o == RELU:
            val[i] = val[a] if val[a] > 0.0 else 0.0
        elif o == ABS:
            val[i] = abs(val[a])
        elif o == SIGN:
            if val[a] > 0.0:
                val[i] = 1.0
            elif val[a] < 0.0:
                val[i] = -1.0
            else:
                val[i] = 0.0
        elif o == MIN:
            val[i] = min(val[a], val[b])
        elif o == MAX:
            val[i] = max(val[a], val[b])
        elif o == POW:
            val[i] = val[a] ** val[b]
        elif o == SUM:
            s = 0.0
            for j in range(a, b):
                s += val[j]
            val[i] = s
        elif o == COPY:
            val[i] = val[a]


@njit(cache=True, nogil=True)
def _backward(op, p1, p2, val, adj):
    for i in range(op.shape[0] - 1, -1, -1):
        g = adj[i]
        if g == 0.0:
            continue
        o = op[i]
        if o <= CONST:
            continue
        a = p1[i]
        b = p2[i]
        if o == ADD:
            adj[a] += g
            adj[b] += g
        elif o == SUB:
            adj[a] += g
            adj[b] -= g
        elif o == MUL:
            adj[a] += g * val[b]
            adj[b] += g * val[a]
        elif o == DIV:
            adj[a] += g / val[b]
            adj[b] -= g * val[i] / val[b]
        elif o == NEG:
            adj[a] -= g
        elif o == EXP:
            adj[a] += g * val[i]
        elif o == LOG:
            adj[a] += g / val[a]
        elif o == TANH:
            adj[a] += g * (1.0 - val[i] * val[i])
        elif o == SIGMOID:
            adj[a] += g * val[i] * (1.0 - val[i])
        elif o == RELU:
            if val[a] > 0.0:
                adj[a] += g
        elif o == ABS:
            if val[a] > 0.0:
                adj[a] += g
            elif val[a] < 0.0:
                adj[a] -= g
        elif o == SIGN:
            pass
        elif o == MIN:
            if val[a] < val[b]:
                adj[a] += g
            elif val[b] < val[a]:
                adj[b] += g
        elif o == MAX:
            if val[a] > val[b]:
                adj[a] += g
            elif val[b] > val[a]:
                adj[b] += g
        elif o == POW:
            if val[a] != 0.0 or val[b] >= 1.0:
                adj[a] += g * val[b] * val[a] ** (val[b] - 1.0)
            if val[a] > 0.0:
                adj[b] += g * val[i] * math.log(val[a])
        elif o == SUM:
            for j in range(a, b):
                adj[j] += g
        elif o == COPY:
            adj[a] += g


class Var:
    """Handle to one node of a tape; behaves like a float in arithmetic."""

    __slots__ = ("tape", "i")

    def __init__(self, tape, i):
        self.tape = tape
        self.i = i

    @property
    def val(self):
        return self.tape.val[self.i]

    def __float__(self):
        return float(self.val)

    def __repr__(self):
        return f"Var({self.val!r})"

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        return self.tape.const(float(other))

    def __add__(self, other):
        o = self._lift(other)
        return self.tape._emit(ADD, self.i, o.i, self.val + o.val)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return self.tape._emit(SUB, self.i, o.i, self.val - o.val)

    def __rsub__(self, other):
        o = self._lift(other)
        return self.tape._emit(SUB, o.i, self.i, o.val - self.val)

    def __mul__(self, other):
        o = self._lift(other)
        return self.tape._emit(MUL, self.i, o.i, self.val * o.val)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return self.tape._emit(DIV, self.i, o.i, self.val / o.val)

    def __rtruediv__(self, other):
        o = self._lift(other)
        return self.tape._emit(DIV, o.i, self.i, o.val / self.val)

    def __neg__(self):
        return self.tape._emit(NEG, self.i, -1, -self.val)

    def __pow__(self, other):
        o = self._lift(other)
        return self.tape._emit(POW, self.i, o.i, self.val ** o.val)


class Tape:
    """Append-only record of a scalar computation."""

    def __init__(self):
        self.op = []
        self.p1 = []
        self.p2 = []
        self._val = []
        self.val = _ValView(self._val)
        self._const_cache = {}

    def __len__(self):
        return len(self.op)

    def _emit(self, op, a, b, value):
        self.op.append(op)
        self.p1.append(a)
        self.p2.append(b)
        self._val.append(value)
        return Var(self, len(self.op) - 1)

    def leaf(self, value):
        return self._emit(LEAF, -1, -1, float(value))

    def const(self, value):
        v = self._const_cache.get(value)
        if v is None:
            v = self._emit(CONST, -1, -1, float(value))
            self._const_cache[value] = v
        return v

    def arrays(self):
        return (
            np.asarray(self.op, dtype=np.int8),
            np.asarray(self.p1, dtype=np.int64),
            np.asarray(self.p2, dtype=np.int64),
            np.asarray(self._val, dtype=np.float64),
        )


class _ValView:
    """Index-by-node view over the tape's python value list."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data

    def __getitem__(self, i):
        return self.data[i]


# ---------------------------------------------------------------------------
# generic math that works on floats and Vars alike

def value_of(x):
    return x.val if isinstance(x, Var) else float(x)


def _exp_inf(x):
    # overflow saturates to inf (matching the compiled replay) instead of
    # raising; non-finite results surface as numeric faults downstream
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def vexp(x):
    if isinstance(x, Var):
        return x.tape._emit(EXP, x.i, -1, _exp_inf(x.val))
    return _exp_inf(x)


def vlog(x):
    if isinstance(x, Var):
        return x.tape._emit(LOG, x.i, -1, math.log(x.val))
    return math.log(x)


def vtanh(x):
    if isinstance(x, Var):
        return x.tape._emit(TANH, x.i, -1, math.tanh(x.val))
    return math.tanh(x)


def _sigmoid_stable(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    if isinstance(x, Var):
        return x.tape._emit(SIGMOID, x.i, -1, _sigmoid_stable(x.val))
    return _sigmoid_stable(x)


def relu(x):
    if isinstance(x, Var):
        return x.tape._emit(RELU, x.i, -1, x.val if x.val > 0.0 else 0.0)
    return x if x > 0.0 else 0.0


def vabs(x):
    if isinstance(x, Var):
        return x.tape._emit(ABS, x.i, -1, abs(x.val))
    return abs(x)


def vsign(x):
    v = value_of(x)
    s = 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)
    if isinstance(x, Var):
        return x.tape._emit(SIGN, x.i, -1, s)
    return s


def vmin(x, y):
    if isinstance(x, Var) or isinstance(y, Var):
        t = x.tape if isinstance(x, Var) else y.tape
        xv = x if isinstance(x, Var) else t.const(float(x))
        yv = y if isinstance(y, Var) else t.const(float(y))
        return t._emit(MIN, xv.i, yv.i, min(xv.val, yv.val))
    return min(x, y)


def vmax(x, y):
    if isinstance(x, Var) or isinstance(y, Var):
        t = x.tape if isinstance(x, Var) else y.tape
        xv = x if isinstance(x, Var) else t.const(float(x))
        yv = y if isinstance(y, Var) else t.const(float(y))
        return t._emit(MAX, xv.i, yv.i, max(xv.val, yv.val))
    return max(x, y)


def vsqrt(x):
    if isinstance(x, Var):
        return x ** 0.5
    return math.sqrt(x)


def vsum(items):
    """Sum a sequence of floats/Vars; on a tape this emits one n-ary sum."""
    items = list(items)
    tape = None
    for it in items:
        if isinstance(it, Var):
            tape = it.tape
            break
    if tape is None:
        return math.fsum(items)
    # lay values out contiguously so a single SUM node can cover them
    start = len(tape.op)
    for it in items:
        if isinstance(it, Var):
            tape._emit(COPY, it.i, -1, it.val)
        else:
            tape._emit(CONST, -1, -1, float(it))
    end = len(tape.op)
    total = math.fsum(value_of(it) for it in items)
    return tape._emit(SUM, start, end, total)


# ---------------------------------------------------------------------------
# differentiation entry points

def _first_nonfinite(arr):
    bad = np.flatnonzero(~np.isfinite(arr))
    return int(bad[0]) if bad.size else None


def grad(fn, values):
    """Record ``fn`` at ``values`` and return (loss, gradient).

    ``fn`` receives a list of Vars, one per entry of ``values``, and must
    return a scalar (a Var, or a plain number if the result does not depend
    on the parameters).
    """
    values = np.asarray(values, dtype=float)
    tape = Tape()
    pvars = [tape.leaf(v) for v in values]
    out = fn(pvars)
    if not isinstance(out, Var):
        return float(out), np.zeros(values.shape[0])
    op, p1, p2, val = tape.arrays()
    if not np.isfinite(val[out.i]):
        raise NumericFaultError(
            f"non-finite loss at node {out.i} ({OP_NAMES[op[out.i]]})",
            node=out.i)
    adj = np.zeros_like(val)
    adj[out.i] = 1.0
    _backward(op, p1, p2, val, adj)
    g = adj[[v.i for v in pvars]]
    if not np.all(np.isfinite(g)):
        node = _first_nonfinite(adj)
        raise NumericFaultError(
            f"non-finite gradient, first bad node {node} "
            f"({OP_NAMES[op[node]]})", node=node)
    return float(val[out.i]), g


def check_grad(fn, values, h=None, tol=1e-4):
    """Compare reverse-mode gradients against central finite differences.

    The finite-difference side evaluates ``fn`` on plain floats, fully
    independent of the tape.  Returns a report dict; never raises on
    disagreement (callers assert on ``report['max_rel_error']``).
    """
    values = np.asarray(values, dtype=float)
    loss, g = grad(fn, values)

    def feval(vals):
        out = fn([float(v) for v in vals])
        return float(out)

    n = values.shape[0]
    fd = np.zeros(n)
    errs = np.zeros(n)
    for i in range(n):
        hi = h if h is not None else 1e-5 * max(1.0, abs(values[i]))
        vp = values.copy()
        vp[i] += hi
        vm = values.copy()
        vm[i] -= hi
        fd[i] = (feval(vp) - feval(vm)) / (2.0 * hi)
        scale = max(abs(g[i]), abs(fd[i]), 1e-8)
        errs[i] = abs(g[i] - fd[i]) / scale
    return {
        "loss": loss,
        "grad": g,
        "fd": fd,
        "rel_errors": errs,
        "max_rel_error": float(errs.max()) if n else 0.0,
        "ok": bool(n == 0 or errs.max() < tol),
        "tol": tol,
    }


class LossProgram:
    """A recorded scalar loss, replayable with new parameter values.

    ``build`` receives the list of parameter Vars and returns
    ``(loss_var, watched_vars)``; watched node values (e.g. per-timestep
    simulated outputs) are exposed on every replay.  Memory is O(number of
    recorded operations); a 15,706-step simulation at ~60 ops per step stays
    around a few tens of MB.
    """

    def __init__(self, build, n_params):
        tape = Tape()
        pvars = [tape.leaf(0.0) for _ in range(n_params)]
        loss_var, watched = build(pvars)
        self.op, self.p1, self.p2, self._template = tape.arrays()
        self.param_idx = np.array([v.i for v in pvars], dtype=np.int64)
        self.loss_idx = loss_var.i
        self.watched_idx = np.array([v.i for v in watched], dtype=np.int64)
        self.n_params = n_params

    def _run_forward(self, values):
        val = self._template.copy()
        val[self.param_idx] = np.asarray(values, dtype=float)
        _forward(self.op, self.p1, self.p2, val)
        return val

    def value(self, values):
        val = self._run_forward(values)
        return float(val[self.loss_idx])

    def value_and_grad(self, values):
        loss, g, _ = self.evaluate(values)
        return loss, g

    def evaluate(self, values):
        """Replay; returns (loss, gradient, watched values)."""
        val = self._run_forward(values)
        loss = float(val[self.loss_idx])
        if not math.isfinite(loss):
            node = _first_nonfinite(val)
            raise NumericFaultError(
                f"non-finite value, first bad node {node} "
                f"({OP_NAMES[self.op[node]]})", node=node)
        adj = np.zeros_like(val)
        adj[self.loss_idx] = 1.0
        _backward(self.op, self.p1, self.p2, val, adj)
        g = adj[self.param_idx]
        if not np.all(np.isfinite(g)):
            node = _first_nonfinite(adj)
            raise NumericFaultError(
                f"non-finite gradient, first bad node {node} "
                f"({OP_NAMES[self.op[node]]})", node=node)
        return loss, g, val[self.watched_idx]

    def watched(self, values):
        val = self._run_forward(values)
        return float(val[self.loss_idx]), val[self.watched_idx]
