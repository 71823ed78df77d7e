"""Text grammar for cell architectures.

Examples: ``MC{O=sig,L=sig:con}``, ``MC{O=ann:5,L=sig:con}``,
``MC{O=sig+,L=sig+:con,MR=tanh}``, ``MC{O=sig,L=sig:con,BC=pl:3}``.

Gate families for O and L: ``const``, ``sig``, ``ann:N``; a ``+`` suffix on
the family selects the two-channel (state, potential loss) form; ``:con``
enables the potential-loss cap (Loss gate only).  ``MR`` is ``tanh`` or
``sign``, with ``:pos`` constraining the equilibrium positive.  ``BC`` is
``pl:N`` or ``pq:N``.  An optional ``U`` token adds a trainable input gate
with the same families as O.
"""

from __future__ import annotations

from .errors import ParseError
from .gates import (
    BcGateSpec,
    BcVariant,
    GateKind,
    GateSpec,
    MrGateSpec,
    MrVariant,
    POT_LOSS_T,
    STATE_T,
)
from .mcp_core import ArchitectureSpec, POT_LOSS_CHANNEL, STATE_CHANNEL
from .data_model import IDENTITY_SCALING

_SINGLE_CTX = (STATE_T,)
_MULTI_CTX = (STATE_T, POT_LOSS_T)

_MR_VARIANTS = {"tanh": MrVariant.STATE_DEPENDENT,
                "sign": MrVariant.STATE_INDEPENDENT}
_BC_VARIANTS = {"pl": BcVariant.PIECEWISE_LINEAR,
                "pq": BcVariant.PIECEWISE_QUADRATIC}


def _err(text, offset, message):
    raise ParseError(f"{message} (at byte {offset} in {text!r})")


def _parse_gate(text, key, value, offset, allow_con):
    parts = value.split(":")
    fam = parts[0]
    mods = parts[1:]
    constrained = False
    n_hidden = 0
    multi = fam.endswith("+")
    base = fam[:-1] if multi else fam
    if base == "const":
        if multi:
            _err(text, offset, "constant gate has no multi-context form")
        kind = GateKind.CONSTANT
    elif base == "sig":
        kind = GateKind.SIGMOID_MULTI if multi else GateKind.SIGMOID
    elif base == "ann":
        kind = GateKind.ANN_MULTI if multi else GateKind.ANN
        if not mods or not mods[0].isdigit():
            _err(text, offset, f"{key}=ann needs a hidden-node count, e.g. ann:3")
        n_hidden = int(mods.pop(0))
    else:
        _err(text, offset, f"unknown gate family {fam!r} for {key}")
    for m in mods:
        if m == "con":
            if not allow_con:
                _err(text, offset,
                     "the potential-loss cap ':con' applies to the Loss "
                     f"gate only, not {key}")
            constrained = True
        else:
            _err(text, offset, f"unknown modifier {m!r} on {key}")
    if kind is GateKind.CONSTANT:
        ctx = ()
    else:
        ctx = _MULTI_CTX if multi else _SINGLE_CTX
    return GateSpec(kind, ctx, n_hidden, constrained)


def _parse_mr(text, value, offset):
    parts = value.split(":")
    if parts[0] not in _MR_VARIANTS:
        _err(text, offset, f"MR must be tanh or sign, got {parts[0]!r}")
    pos = False
    for m in parts[1:]:
        if m == "pos":
            pos = True
        else:
            _err(text, offset, f"unknown MR modifier {m!r}")
    return MrGateSpec(_MR_VARIANTS[parts[0]], pos)


def _parse_bc(text, value, offset):
    parts = value.split(":")
    if parts[0] not in _BC_VARIANTS or len(parts) != 2 or not parts[1].isdigit():
        _err(text, offset, f"BC must be pl:N or pq:N, got {value!r}")
    return BcGateSpec(_BC_VARIANTS[parts[0]], int(parts[1]))


def parse_arch(text):
    """Parse an architecture string into an ArchitectureSpec.

    The returned spec carries identity scaling for every channel any gate
    references; callers substitute data-derived scaling before training.
    """
    s = text.strip()
    if not s.startswith("MC{") or not s.endswith("}"):
        _err(text, 0, "architecture must look like MC{...}")
    body = s[3:-1]
    gates_seen = {}
    pos = 3
    for token in body.split(","):
        if "=" not in token:
            _err(text, pos, f"expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        key = key.strip()
        if key in gates_seen:
            _err(text, pos, f"duplicate key {key!r}")
        if key in ("O", "L", "U"):
            gates_seen[key] = _parse_gate(text, key, value.strip(), pos,
                                          allow_con=(key == "L"))
        elif key == "MR":
            gates_seen[key] = _parse_mr(text, value.strip(), pos)
        elif key == "BC":
            gates_seen[key] = _parse_bc(text, value.strip(), pos)
        else:
            _err(text, pos, f"unknown key {key!r}")
        pos += len(token) + 1
    if "O" not in gates_seen or "L" not in gates_seen:
        _err(text, len(s), "both O and L gates are required")
    scaling = {STATE_CHANNEL: IDENTITY_SCALING,
               POT_LOSS_CHANNEL: IDENTITY_SCALING}
    return ArchitectureSpec(
        output_gate=gates_seen["O"],
        loss_gate=gates_seen["L"],
        input_gate=gates_seen.get("U"),
        mr_gate=gates_seen.get("MR"),
        bc_gate=gates_seen.get("BC"),
        scaling=scaling,
    )


def _gate_text(spec, key):
    multi = spec.kind in (GateKind.SIGMOID_MULTI, GateKind.ANN_MULTI)
    if spec.kind is GateKind.CONSTANT:
        fam = "const"
    elif spec.kind in (GateKind.SIGMOID, GateKind.SIGMOID_MULTI):
        fam = "sig+" if multi else "sig"
    else:
        fam = (f"ann+:{spec.n_hidden}" if multi else f"ann:{spec.n_hidden}")
    if spec.constrained:
        fam += ":con"
    return f"{key}={fam}"


def canonical_arch(arch):
    """Canonical text form; parse_arch(canonical_arch(a)) round-trips."""
    parts = [_gate_text(arch.output_gate, "O"), _gate_text(arch.loss_gate, "L")]
    if arch.input_gate is not None:
        parts.append(_gate_text(arch.input_gate, "U"))
    if arch.mr_gate is not None:
        t = "tanh" if arch.mr_gate.variant is MrVariant.STATE_DEPENDENT else "sign"
        if arch.mr_gate.c_mr_constrained_positive:
            t += ":pos"
        parts.append(f"MR={t}")
    if arch.bc_gate is not None:
        v = "pl" if arch.bc_gate.variant is BcVariant.PIECEWISE_LINEAR else "pq"
        parts.append(f"BC={v}:{arch.bc_gate.n_hidden}")
    return "MC{" + ",".join(parts) + "}"
