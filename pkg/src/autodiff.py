"""
Differentiation engine for physics residuals.

Input derivatives are carried forward explicitly as second-order jets
(value, d/dx, d/dt, d2/dx2). Parameter gradients are taken in reverse mode on
top of that: the jet components are torch tensors built from a parameter leaf
held by a `Tape`, so torch autograd records every elementary operation and one
reverse sweep yields the exact gradient of any loss that contains input
derivatives (reverse-over-forward).

All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import torch

from src.exceptions import DomainError, UsageError

DTYPE = torch.float64

Scalar = float | int | torch.Tensor


def as_tensor(value) -> torch.Tensor:
    return torch.as_tensor(value, dtype=DTYPE)


class JetOp(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    TANH = "tanh"
    EXP = "exp"
    SIN = "sin"
    SCALE = "scale"


@dataclass(frozen=True)
class Jet2:
    """Value plus first derivatives in (x, t) and the second derivative in x.

    Components may be scalars or batched tensors; they broadcast like tensors.
    """

    val: torch.Tensor
    dx: torch.Tensor
    dt: torch.Tensor
    dxx: torch.Tensor

    @classmethod
    def seed_x(cls, x) -> Jet2:
        x = as_tensor(x)
        return cls(x, torch.ones_like(x), torch.zeros_like(x), torch.zeros_like(x))

    @classmethod
    def seed_t(cls, t) -> Jet2:
        t = as_tensor(t)
        return cls(t, torch.zeros_like(t), torch.ones_like(t), torch.zeros_like(t))

    @classmethod
    def constant(cls, c) -> Jet2:
        c = as_tensor(c)
        zero = torch.zeros_like(c)
        return cls(c, zero, zero, zero)

    def components(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (u, u_t, u_x, u_xx), the order residual operators consume."""
        return self.val, self.dt, self.dx, self.dxx

    def __add__(self, other) -> Jet2:
        return jet_apply(JetOp.ADD, [self, _lift(other)])

    def __radd__(self, other) -> Jet2:
        return jet_apply(JetOp.ADD, [_lift(other), self])

    def __sub__(self, other) -> Jet2:
        return jet_apply(JetOp.SUB, [self, _lift(other)])

    def __rsub__(self, other) -> Jet2:
        return jet_apply(JetOp.SUB, [_lift(other), self])

    def __mul__(self, other) -> Jet2:
        if isinstance(other, (int, float)):
            return jet_apply(JetOp.SCALE, [self], factor=other)
        return jet_apply(JetOp.MUL, [self, _lift(other)])

    def __rmul__(self, other) -> Jet2:
        return self.__mul__(other)

    def __truediv__(self, other) -> Jet2:
        return jet_apply(JetOp.DIV, [self, _lift(other)])

    def __rtruediv__(self, other) -> Jet2:
        return jet_apply(JetOp.DIV, [_lift(other), self])

    def __neg__(self) -> Jet2:
        return jet_apply(JetOp.SCALE, [self], factor=-1.0)

    def tanh(self) -> Jet2:
        return jet_apply(JetOp.TANH, [self])

    def exp(self) -> Jet2:
        return jet_apply(JetOp.EXP, [self])

    def sin(self) -> Jet2:
        return jet_apply(JetOp.SIN, [self])


def _lift(value) -> Jet2:
    return value if isinstance(value, Jet2) else Jet2.constant(value)


def _unary(a: Jet2, f: torch.Tensor, f1: torch.Tensor, f2: torch.Tensor) -> Jet2:
    # chain rule: (g o a)'' = g'(a) a'' + g''(a) a'^2
    return Jet2(f, f1 * a.dx, f1 * a.dt, f1 * a.dxx + f2 * a.dx * a.dx)


def _mul(f: Jet2, g: Jet2) -> Jet2:
    return Jet2(
        f.val * g.val,
        f.dx * g.val + f.val * g.dx,
        f.dt * g.val + f.val * g.dt,
        f.dxx * g.val + 2.0 * f.dx * g.dx + f.val * g.dxx,
    )


def _reciprocal(g: Jet2) -> Jet2:
    if bool(torch.any(g.val == 0)):
        raise DomainError("Jet division by a value of zero")
    r = 1.0 / g.val
    return _unary(g, r, -r * r, 2.0 * r * r * r)


def jet_apply(op: JetOp | str, args: Sequence[Jet2], factor: Scalar | None = None) -> Jet2:
    """Applies one elementary operation to jets, propagating exact Taylor coefficients."""
    op = JetOp(op)
    if op is JetOp.ADD:
        f, g = args
        return Jet2(f.val + g.val, f.dx + g.dx, f.dt + g.dt, f.dxx + g.dxx)
    if op is JetOp.SUB:
        f, g = args
        return Jet2(f.val - g.val, f.dx - g.dx, f.dt - g.dt, f.dxx - g.dxx)
    if op is JetOp.MUL:
        return _mul(args[0], args[1])
    if op is JetOp.DIV:
        return _mul(args[0], _reciprocal(args[1]))
    if op is JetOp.SCALE:
        if factor is None:
            raise UsageError("scale requires a constant factor")
        (a,) = args
        return Jet2(factor * a.val, factor * a.dx, factor * a.dt, factor * a.dxx)

    (a,) = args
    if op is JetOp.TANH:
        s = torch.tanh(a.val)
        s1 = 1.0 - s * s
        return _unary(a, s, s1, -2.0 * s * s1)
    if op is JetOp.EXP:
        e = torch.exp(a.val)
        return _unary(a, e, e, e)
    if op is JetOp.SIN:
        s, c = torch.sin(a.val), torch.cos(a.val)
        return _unary(a, s, c, -s)
    raise UsageError(f"Unsupported jet operation: {op}")


def affine(a: Jet2, weight: torch.Tensor, bias: torch.Tensor) -> Jet2:
    """Jet of `a @ weight + bias`; the bias only shifts the value component."""
    val = a.val @ weight + bias
    if a.dx.shape == a.dt.shape == a.dxx.shape:
        dx, dt, dxx = torch.stack([a.dx, a.dt, a.dxx]) @ weight
    else:
        dx, dt, dxx = a.dx @ weight, a.dt @ weight, a.dxx @ weight
    return Jet2(val, dx, dt, dxx)


class Tape:
    """Single-use record of parameter-dependent computations.

    `params` is the leaf every recorded computation must start from. Recording
    itself is delegated to torch autograd, which stores the operation graph and
    runs the reverse sweep in anti-topological order. A tape is confined to the
    thread that built it.
    """

    def __init__(self, values):
        self.params = as_tensor(values).detach().clone().requires_grad_(True)
        self._swept = False

    @property
    def num_parameters(self) -> int:
        return self.params.numel()

    @property
    def swept(self) -> bool:
        return self._swept


def reverse_gradient(tape: Tape, output: torch.Tensor) -> torch.Tensor:
    """Returns d(output)/d(params) for every parameter recorded on `tape`."""
    if tape.swept:
        raise UsageError("Tape was already swept; build a new tape for each evaluation")
    if not torch.is_tensor(output) or output.numel() != 1:
        raise UsageError("Reverse sweep needs a scalar output")
    if output is not tape.params and output.grad_fn is None:
        raise UsageError("Output node is not on the tape")

    (grad,) = torch.autograd.grad(output.reshape(()), tape.params, allow_unused=True)
    if grad is None:
        raise UsageError("Output node is not on the tape")
    tape._swept = True
    return grad.detach()


def value_and_grad(fn: Callable[[torch.Tensor], torch.Tensor], values) -> tuple[float, torch.Tensor]:
    """Evaluates a scalar function of the parameters and its reverse-mode gradient."""
    tape = Tape(values)
    output = fn(tape.params)
    return float(output.detach()), reverse_gradient(tape, output)
