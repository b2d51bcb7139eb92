"""Gradient descent on objectives built from ``infer``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import jax
import jax.numpy as jnp
import numpy as np

from diffppl.autodiff import NonFiniteError


@dataclass(frozen=True)
class GdConfig:
    """Gradient descent settings.

    ``seed_policy="fixed"`` reuses one sampler key at every step, which makes
    the objective a deterministic function of the parameters. ``"fresh"``
    folds the step index into the key instead.
    """

    steps: int = 100
    learning_rate: float = 0.1
    seed_policy: Literal["fixed", "fresh"] = "fixed"
    momentum: float = 0.0

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("steps must be a positive integer")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.seed_policy not in ("fixed", "fresh"):
            raise ValueError(f"unknown seed policy {self.seed_policy!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class OptimizationTrace:
    iterates: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    gradient_norms: list[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def step_key(key, step: int, policy: str):
    return key if policy == "fixed" else jax.random.fold_in(key, step)


def gradient_descent(
    loss: Callable,
    init,
    config: GdConfig = GdConfig(),
    key=None,
    *,
    callback: Callable | None = None,
) -> OptimizationTrace:
    """Minimise ``loss(x, key)`` by (optionally heavy-ball) gradient descent.

    The trace holds ``config.steps + 1`` entries: the initial point and every
    update, each with its loss and gradient norm.
    """
    if key is None:
        key = jax.random.PRNGKey(0)
    value_and_grad = jax.jit(jax.value_and_grad(loss))
    x = jnp.asarray(init, dtype=float)
    velocity = jnp.zeros_like(x)
    trace = OptimizationTrace()
    for k in range(config.steps + 1):
        val, g = value_and_grad(x, step_key(key, k, config.seed_policy))
        val = float(val)
        g_np = np.asarray(g)
        if not np.isfinite(val):
            raise NonFiniteError(f"loss is not finite at iterate {k}")
        if not np.all(np.isfinite(g_np)):
            raise NonFiniteError(f"gradient is not finite at iterate {k} (sampler reconstruction drift or divergence)")
        trace.iterates.append(np.asarray(x))
        trace.losses.append(val)
        trace.gradient_norms.append(float(np.linalg.norm(g_np)))
        if callback is not None:
            callback(k, trace)
        if k == config.steps:
            break
        velocity = config.momentum * velocity - config.learning_rate * g
        x = x + velocity
    return trace


def finite_diff_gradient(loss: Callable, x, h: float, key=None) -> np.ndarray:
    """Central differences of ``loss(x, key)`` with the key held fixed."""
    if not h > 0:
        raise ValueError("h must be positive")
    if key is None:
        key = jax.random.PRNGKey(0)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        xp, xm = x + e, x - e
        if scalar:
            xp, xm = xp[0], xm[0]
        out.flat[i] = (float(loss(jnp.asarray(xp), key)) - float(loss(jnp.asarray(xm), key))) / (2 * h)
    return out[0] if scalar else out


@dataclass(frozen=True)
class GradientCheckRow:
    index: int
    analytic: float
    finite_difference: float
    relative_error: float
    checked: bool  # |analytic| above the threshold


def gradient_check(loss: Callable, x, h: float, key=None, *, threshold: float = 1e-3) -> list[GradientCheckRow]:
    """Compare the reverse-mode gradient of ``loss(x, key)`` with CRN central differences.

    Relative error is ``|a - f| / max(|a|, |f|)``; coordinates whose analytic
    gradient is at most ``threshold`` in magnitude are reported but flagged as
    unchecked.
    """
    if key is None:
        key = jax.random.PRNGKey(0)
    analytic = np.atleast_1d(np.asarray(jax.jit(jax.grad(loss))(jnp.asarray(x, dtype=float), key)))
    fd = np.atleast_1d(finite_diff_gradient(loss, x, h, key))
    rows = []
    for i, (a, f) in enumerate(zip(analytic, fd)):
        scale = max(abs(a), abs(f))
        rel = abs(a - f) / scale if scale > 0 else 0.0
        rows.append(GradientCheckRow(i, float(a), float(f), float(rel), bool(abs(a) > threshold)))
    return rows
