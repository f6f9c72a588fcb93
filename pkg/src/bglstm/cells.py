"""Recurrent cell variants and their exact forward/backward recurrences.

Three cells share one implementation skeleton:

* ``standard``      -- gates f, i, o and a tanh candidate;
                       c_t = f * c_{t-1} + i * cand
* ``bi_gated``      -- forget gate removed (f fixed at 1), sigmoid candidate;
                       c_t = c_{t-1} + i * cand
                       (with ``ungated_candidate`` the input gate is kept as
                       a parameter but dropped from the update:
                       c_t = c_{t-1} + cand)
* ``no_input_gate`` -- input gate removed (i fixed at 1);
                       c_t = f * c_{t-1} + cand

Each gate g has one weight matrix of shape (hidden, hidden+input) applied
to the concatenation [h_{t-1}, x_t] plus a bias of shape (hidden,).
Backward passes are exact reverse-mode gradients, validated against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError
from .numerics import Rng, affine, glorot_init, sigmoid, tanh_act

VARIANT_TAGS = ("standard", "bi_gated", "no_input_gate")

_GATES = {
    "standard": ("f", "i", "c", "o"),
    "bi_gated": ("i", "c", "o"),
    "no_input_gate": ("f", "c", "o"),
}


@dataclass(frozen=True)
class CellVariant:
    """Which gates exist and which nonlinearity produces the candidate state."""

    tag: str
    candidate_activation: str
    ungated_candidate: bool = False

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ConfigError(f"unknown cell variant {self.tag!r}")
        if self.candidate_activation not in ("tanh", "sigmoid"):
            raise ConfigError(f"unknown candidate activation {self.candidate_activation!r}")
        if self.ungated_candidate and self.tag != "bi_gated":
            raise ConfigError("ungated_candidate only applies to the bi_gated variant")

    @property
    def gates(self) -> tuple:
        return _GATES[self.tag]

    def describe(self) -> str:
        name = self.tag + ("/ungated-candidate" if self.ungated_candidate else "")
        return f"{name}({self.candidate_activation})"


def standard(candidate_activation: str = "tanh") -> CellVariant:
    return CellVariant("standard", candidate_activation)


def bi_gated(ungated_candidate: bool = False, candidate_activation: str = "sigmoid") -> CellVariant:
    return CellVariant("bi_gated", candidate_activation, ungated_candidate)


def no_input_gate(candidate_activation: str = "tanh") -> CellVariant:
    return CellVariant("no_input_gate", candidate_activation)


@dataclass
class CellWeights:
    """Per-gate weights W[g]: (hidden, hidden+input) and biases b[g]: (hidden,).

    Only the gates of the owning variant are stored; absent gates have no
    entries at all.
    """

    input_dim: int
    hidden_dim: int
    W: dict
    b: dict

    def copy(self) -> "CellWeights":
        return CellWeights(
            self.input_dim,
            self.hidden_dim,
            {g: w.copy() for g, w in self.W.items()},
            {g: v.copy() for g, v in self.b.items()},
        )


@dataclass
class CellState:
    """Hidden output h and cell memory c, feature axis last."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch_shape: tuple = ()) -> "CellState":
        shape = tuple(batch_shape) + (hidden_dim,)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StepCache:
    """Intermediates from one cell_step needed by the backward pass."""

    z: np.ndarray       # [h_{t-1}, x_t]
    acts: dict          # gate -> activation value
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class SequenceCache:
    variant: CellVariant
    steps: list = field(default_factory=list)


@dataclass
class SequenceGrads:
    """Gradients from sequence_backward: weight-shaped dicts plus state/input grads."""

    dW: dict
    db: dict
    d_init: CellState
    d_xs: np.ndarray


def init_cell_weights(variant: CellVariant, input_dim: int, hidden_dim: int, rng: Rng) -> CellWeights:
    """Glorot-uniform weights, zero biases, one (W, b) pair per present gate."""
    if input_dim < 1 or hidden_dim < 1:
        raise InvalidInputError("cell dims must be >= 1")
    W = {}
    b = {}
    for g in variant.gates:
        W[g] = glorot_init(hidden_dim, hidden_dim + input_dim, rng)
        b[g] = np.zeros(hidden_dim)
    return CellWeights(input_dim, hidden_dim, W, b)


def param_count(variant: CellVariant, input_dim: int, hidden_dim: int) -> int:
    """Total trainable scalars: |gates| * (hidden*(hidden+input) + hidden)."""
    if input_dim < 1 or hidden_dim < 1:
        raise InvalidInputError("cell dims must be >= 1")
    per_gate = hidden_dim * (hidden_dim + input_dim) + hidden_dim
    return len(variant.gates) * per_gate


def _candidate(variant: CellVariant, pre: np.ndarray) -> np.ndarray:
    return tanh_act(pre) if variant.candidate_activation == "tanh" else sigmoid(pre)


def _check_step_shapes(w: CellWeights, prev: CellState, x: np.ndarray) -> None:
    if x.shape[-1] != w.input_dim:
        raise ShapeError(f"input has feature dim {x.shape[-1]}, cell expects {w.input_dim}")
    if prev.h.shape[-1] != w.hidden_dim or prev.c.shape[-1] != w.hidden_dim:
        raise ShapeError(
            f"state dims {prev.h.shape[-1]}/{prev.c.shape[-1]} do not match hidden {w.hidden_dim}"
        )
    if prev.h.shape != prev.c.shape or prev.h.shape[:-1] != x.shape[:-1]:
        raise ShapeError("state and input batch shapes do not agree")


def cell_step(variant: CellVariant, w: CellWeights, prev: CellState, x: np.ndarray):
    """One recurrence step. x: (..., input_dim); returns (CellState, StepCache)."""
    x = np.asarray(x, dtype=np.float64)
    _check_step_shapes(w, prev, x)
    z = np.concatenate([prev.h, x], axis=-1)

    acts = {}
    for g in variant.gates:
        pre = affine(w.W[g], z, w.b[g])
        acts[g] = _candidate(variant, pre) if g == "c" else sigmoid(pre)

    cand = acts["c"]
    if variant.tag == "standard":
        c = acts["f"] * prev.c + acts["i"] * cand
    elif variant.tag == "bi_gated":
        c = prev.c + (cand if variant.ungated_candidate else acts["i"] * cand)
    else:  # no_input_gate: input gate pinned to ones
        c = acts["f"] * prev.c + cand

    tanh_c = np.tanh(c)
    h = acts["o"] * tanh_c
    return CellState(h, c), StepCache(z, acts, prev.c, c, tanh_c)


def sequence_forward(variant: CellVariant, w: CellWeights, init: CellState, xs: np.ndarray):
    """Run cell_step over xs (T, ..., input_dim); returns (hs, final, cache)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise InvalidInputError("xs must be a nonempty (T, ..., input_dim) sequence")
    cache = SequenceCache(variant)
    state = init
    hs = np.empty(xs.shape[:-1] + (w.hidden_dim,))
    for t in range(xs.shape[0]):
        state, step = cell_step(variant, w, state, xs[t])
        cache.steps.append(step)
        hs[t] = state.h
    return hs, state, cache


def _sigmoid_grad(a: np.ndarray) -> np.ndarray:
    return a * (1.0 - a)


def _accumulate(dW, db, g, da, z, hidden):
    da2 = da.reshape(-1, hidden)
    z2 = z.reshape(-1, z.shape[-1])
    dW[g] += da2.T @ z2
    db[g] += da2.sum(axis=0)


def _step_backward(variant, w, step: StepCache, dh, dc_in, dW, db):
    """Reverse one step; returns (dh_prev, dc_prev, dx)."""
    o = step.acts["o"]
    cand = step.acts["c"]
    hidden = w.hidden_dim

    do = dh * step.tanh_c
    dc = dc_in + dh * o * (1.0 - step.tanh_c**2)

    das = {"o": do * _sigmoid_grad(o)}

    if variant.tag == "standard":
        f = step.acts["f"]
        i = step.acts["i"]
        das["f"] = dc * step.c_prev * _sigmoid_grad(f)
        das["i"] = dc * cand * _sigmoid_grad(i)
        dcand = dc * i
        dc_prev = dc * f
    elif variant.tag == "bi_gated":
        i = step.acts["i"]
        if variant.ungated_candidate:
            das["i"] = np.zeros_like(i)
            dcand = dc
        else:
            das["i"] = dc * cand * _sigmoid_grad(i)
            dcand = dc * i
        dc_prev = dc
    else:  # no_input_gate
        f = step.acts["f"]
        das["f"] = dc * step.c_prev * _sigmoid_grad(f)
        dcand = dc
        dc_prev = dc * f

    if variant.candidate_activation == "tanh":
        das["c"] = dcand * (1.0 - cand**2)
    else:
        das["c"] = dcand * _sigmoid_grad(cand)

    dz = np.zeros_like(step.z)
    for g in variant.gates:
        _accumulate(dW, db, g, das[g], step.z, hidden)
        dz += das[g] @ w.W[g]

    return dz[..., :hidden], dc_prev, dz[..., hidden:]


def sequence_backward(
    variant: CellVariant,
    w: CellWeights,
    cache: SequenceCache,
    grad_hs: np.ndarray,
    grad_final: CellState | None = None,
) -> SequenceGrads:
    """Exact reverse-mode gradients of sum_t <grad_hs[t], hs[t]> (+ optional
    <grad_final, final state>) w.r.t. weights, biases, initial state and inputs.
    """
    grad_hs = np.asarray(grad_hs, dtype=np.float64)
    steps = cache.steps
    if len(steps) == 0 or grad_hs.shape[0] != len(steps):
        raise InvalidInputError(
            f"grad_hs length {grad_hs.shape[0]} does not match cached {len(steps)} steps"
        )
    if cache.variant != variant:
        raise InvalidInputError("cache was produced by a different cell variant")

    dW = {g: np.zeros_like(w.W[g]) for g in variant.gates}
    db = {g: np.zeros_like(w.b[g]) for g in variant.gates}
    d_xs = np.empty(grad_hs.shape[:-1] + (w.input_dim,))

    if grad_final is not None:
        dh_carry = grad_final.h.astype(np.float64, copy=True)
        dc_carry = grad_final.c.astype(np.float64, copy=True)
    else:
        dh_carry = np.zeros_like(grad_hs[0])
        dc_carry = np.zeros_like(grad_hs[0])

    for t in range(len(steps) - 1, -1, -1):
        dh = grad_hs[t] + dh_carry
        dh_carry, dc_carry, d_xs[t] = _step_backward(variant, w, steps[t], dh, dc_carry, dW, db)

    return SequenceGrads(dW, db, CellState(dh_carry, dc_carry), d_xs)
