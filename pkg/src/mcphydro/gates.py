"""Gate function library: conductivity gates, the PET constraint on the
loss gate, mass-relaxation gating, and input bias correction.

All evaluation functions are written against the autodiff dispatch helpers,
so they operate identically on plain floats and on tape Vars.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .autodiff import relu, sigmoid, value_of, vabs, vexp, vmax, vsign, vsum, vtanh
from .errors import ContractError

# channel names usable as gate context
STATE_T = "state@t"
STATE_TM1 = "state@t-1"
POT_LOSS_T = "pot_loss@t"

LOSS_EPS_MM = 1e-9  # below this state the PET constraint is vacuous


class GateKind(enum.Enum):
    CONSTANT = "const"
    SIGMOID = "sig"
    SIGMOID_MULTI = "sig+"
    ANN = "ann"
    ANN_MULTI = "ann+"


class MrVariant(enum.Enum):
    STATE_DEPENDENT = "tanh"
    STATE_INDEPENDENT = "sign"


class BcVariant(enum.Enum):
    PIECEWISE_LINEAR = "pl"
    PIECEWISE_QUADRATIC = "pq"


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind
    context: tuple = ()
    n_hidden: int = 0
    constrained: bool = False  # PET constraint; loss gate only

    def __post_init__(self):
        if self.kind is GateKind.CONSTANT and self.context:
            raise ContractError("constant gate takes no context")
        if self.kind in (GateKind.SIGMOID, GateKind.ANN) and len(self.context) != 1:
            raise ContractError("single-context gate needs exactly one channel")
        if self.kind in (GateKind.SIGMOID_MULTI, GateKind.ANN_MULTI) \
                and len(self.context) < 2:
            raise ContractError("multi-context gate needs >= 2 channels")
        if self.kind in (GateKind.ANN, GateKind.ANN_MULTI) and self.n_hidden < 1:
            raise ContractError("ANN gate needs n_hidden >= 1")


@dataclass(frozen=True)
class MrGateSpec:
    variant: MrVariant
    c_mr_constrained_positive: bool = False


@dataclass(frozen=True)
class BcGateSpec:
    variant: BcVariant
    n_hidden: int
    u_max: float = 1.0  # mm/day scaling constant for precipitation

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ContractError("BC gate needs n_hidden >= 1")
        if not self.u_max > 0:
            raise ContractError("u_max must be positive")


# ---------------------------------------------------------------------------
# parameter layout
#
# Per gate: c is the log-conductivity entering the softmax, a the sigmoid
# offset.  Sigmoid gates add a slope b (one per context channel for the
# multi-context form).  ANN gates add per hidden node a slope s{j} and a
# breakpoint k{j} (plus one input weight per channel for the multi form).

def gate_param_names(spec, prefix):
    names = [f"{prefix}.c"]
    if spec.kind is GateKind.CONSTANT:
        return names
    names.append(f"{prefix}.a")
    if spec.kind is GateKind.SIGMOID:
        names.append(f"{prefix}.b")
    elif spec.kind is GateKind.SIGMOID_MULTI:
        names += [f"{prefix}.b{k}" for k in range(len(spec.context))]
    elif spec.kind is GateKind.ANN:
        for j in range(spec.n_hidden):
            names += [f"{prefix}.s{j}", f"{prefix}.k{j}"]
    elif spec.kind is GateKind.ANN_MULTI:
        for j in range(spec.n_hidden):
            names += [f"{prefix}.w{j}_{k}" for k in range(len(spec.context))]
            names += [f"{prefix}.s{j}", f"{prefix}.k{j}"]
    return names


def mr_param_names(spec, prefix="mr"):
    names = [f"{prefix}.kappa"]
    if spec.variant is MrVariant.STATE_DEPENDENT:
        names.append(f"{prefix}.a")
    names.append(f"{prefix}.ceq")
    return names


def bc_param_names(spec, prefix="bc"):
    names = []
    for j in range(spec.n_hidden):
        names += [f"{prefix}.w{j}", f"{prefix}.g{j}"]
    if spec.variant is BcVariant.PIECEWISE_QUADRATIC:
        names.append(f"{prefix}.q0")  # multiplier offset of the PQ form
    return names


def parameter_names(arch):
    """Flat, ordered trainable parameter names of an architecture.

    Declaration order is stable under added components: output gate, loss
    gate, remember-gate log-conductivity, then optional input/MR/BC blocks.
    """
    names = gate_param_names(arch.output_gate, "o")
    names += gate_param_names(arch.loss_gate, "l")
    names.append("c_r")
    if arch.input_gate is not None:
        names += gate_param_names(arch.input_gate, "u")
    if arch.mr_gate is not None:
        names += mr_param_names(arch.mr_gate)
    if arch.bc_gate is not None:
        names += bc_param_names(arch.bc_gate)
    return names


def count_parameters(arch):
    return len(parameter_names(arch))


# ---------------------------------------------------------------------------
# evaluation

def softmax_conductivities(c_values):
    """kappa_i = exp(c_i) / sum_j exp(c_j), computed max-subtracted.

    Only defined for three or more gates; the two-gate case needs no
    normalization because a sigmoid-squashed gate already bounds its
    complement.
    """
    c_values = list(c_values)
    if len(c_values) < 3:
        raise ContractError("softmax requires >= 3 conductivities")
    m = max(value_of(c) for c in c_values)
    exps = [vexp(c - m) for c in c_values]
    total = vsum(exps)
    return [e / total for e in exps]


def eval_gate(spec, params, kappa, context_values):
    """Gate value in [0, kappa] from standardized context values.

    ``params`` maps the gate's own parameter names (without prefix dots,
    e.g. "a", "b", "s0") to floats or Vars.
    """
    if spec.kind is GateKind.CONSTANT:
        if context_values:
            raise ContractError("constant gate takes no context")
        return kappa
    if len(context_values) != len(spec.context):
        raise ContractError(
            f"gate expects {len(spec.context)} context values, "
            f"got {len(context_values)}")
    a = params["a"]
    if spec.kind is GateKind.SIGMOID:
        s = a + params["b"] * context_values[0]
    elif spec.kind is GateKind.SIGMOID_MULTI:
        s = a
        for k, cv in enumerate(context_values):
            s = s + params[f"b{k}"] * cv
    elif spec.kind is GateKind.ANN:
        s = a
        x = context_values[0]
        for j in range(spec.n_hidden):
            s = s + params[f"s{j}"] * relu(x - params[f"k{j}"])
    elif spec.kind is GateKind.ANN_MULTI:
        s = a
        for j in range(spec.n_hidden):
            pre = 0.0
            for k, cv in enumerate(context_values):
                pre = params[f"w{j}_{k}"] * cv + pre
            s = s + params[f"s{j}"] * relu(pre - params[f"k{j}"])
    else:
        raise ContractError(f"unknown gate kind {spec.kind}")
    return kappa * sigmoid(s)


def constrain_loss(g_loss, pot_loss, state):
    """Clip the loss gate so the realized loss never exceeds potential loss.

    Implements g - relu(g - D/X).  When the state is at or below
    LOSS_EPS_MM the constraint is vacuous (the loss flux g*X is ~0) and the
    gate is returned unchanged.
    """
    if value_of(state) <= LOSS_EPS_MM:
        return g_loss
    return g_loss - relu(g_loss - pot_loss / state)


def constrain_loss_smooth(g_loss, pot_loss, state):
    """Branch-free variant used inside recorded simulations.

    g - relu(g - D/max(X, eps)) agrees with `constrain_loss` whenever
    D > 0 or X > eps, and additionally enforces L <= D at X ~ 0.
    """
    return g_loss - relu(g_loss - pot_loss / vmax(state, LOSS_EPS_MM))


def mr_kappa(params):
    """kappa_MR in (0, 1) from its unconstrained parameter (log-odds)."""
    return sigmoid(params["kappa"])


def mr_equilibrium(spec, params):
    """c_MR in state units; exp-reparameterized when constrained positive."""
    if spec.c_mr_constrained_positive:
        return vexp(params["ceq"])
    return params["ceq"]


def eval_mr_gate(spec, params, state, scaled_state, scaled_ceq, c_eq,
                 remember_pre):
    """Mass-relaxation gate and flux.

    Returns (g_mr, q_mr).  The raw gate f is clipped as f - relu(f -
    remember_pre) so outflow can never exceed the mass the remember gate
    retains; inflow (negative f) passes unclipped.
    """
    kap = mr_kappa(params)
    if spec.variant is MrVariant.STATE_DEPENDENT:
        f = kap * vtanh(params["a"] * (scaled_state - scaled_ceq))
    else:
        f = kap * vsign(state - c_eq)
    g_mr = f - relu(f - remember_pre)
    q_mr = g_mr * vabs(state - c_eq)
    return g_mr, q_mr


def bias_correct(spec, params, u):
    """Bias-corrected precipitation (mm/day), clamped non-negative.

    Returns (u_corrected, clamped_flag).
    """
    u_tilde = u / spec.u_max
    g = 0.0
    for j in range(spec.n_hidden):
        g = g + params[f"w{j}"] * relu(u_tilde - sigmoid(params[f"g{j}"]))
    if spec.variant is BcVariant.PIECEWISE_LINEAR:
        corrected = u + g * spec.u_max
    else:
        corrected = u * (g + params["q0"])
    clamped = value_of(corrected) < 0.0
    return vmax(corrected, 0.0), clamped
