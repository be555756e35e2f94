"""Named parameter storage, Adam, and finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .autodiff import Tensor


class ConfigurationError(ValueError):
    pass


class GradientCheckError(FloatingPointError):
    pass


class ParameterStore:
    """Ordered map of name -> (value, gradient), every value a 2-D float64 array."""

    def __init__(self) -> None:
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"parameter {name!r} must be 2-D, got shape {arr.shape}")
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def bind(self) -> dict[str, Tensor]:
        """Fresh gradient-tracking leaves for one forward pass."""
        return {n: Tensor(v, requires_grad=True) for n, v in self.values.items()}

    def accumulate(self, bound: dict[str, Tensor]) -> None:
        for name, leaf in bound.items():
            if leaf.grad is not None:
                self.grads[name] += leaf.grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self.values.items():
            out.add(name, value.copy())
            out.grads[name] = self.grads[name].copy()
        return out


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place; gradients are cleared afterward."""
    for name in params:
        if name not in params.grads or params.grads[name].shape != params.values[name].shape:
            raise ConfigurationError(f"missing gradient slot for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, value in params.values.items():
        g = params.grads[name]
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: ParameterStore,
    h: float = 1e-5,
    names: list[str] | None = None,
) -> dict[str, float]:
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn`` receives the bound leaves of ``params`` and must return a
    scalar tensor. Returns the maximum relative error
    ``|a - b| / max(1e-8, |a| + |b|)`` per parameter.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    bound = params.bind()
    loss = loss_fn(bound)
    if not np.isfinite(loss.value):
        raise GradientCheckError("non-finite loss at the unperturbed point")
    if loss.requires_grad:
        loss.backward()
    errors: dict[str, float] = {}
    for name in names or list(params):
        leaf = bound[name]
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        value = params.values[name]
        worst = 0.0
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            f_plus = loss_fn(params.bind()).item()
            value[idx] = orig - h
            f_minus = loss_fn(params.bind()).item()
            value[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradientCheckError(
                    f"non-finite loss when perturbing {name}{list(idx)} by +/-{h}"
                )
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
        errors[name] = worst
    return errors
