"""Differentiation front end used by the sampler and the models.

Reverse mode, forward mode and one level of forward-over-reverse nesting are
delegated to JAX; this module fixes the calling conventions, shape checks and
the fail-fast policy for non-finite values that the rest of the package
relies on.
"""

from __future__ import annotations

from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

Array = jax.Array

#: Offset inside the softened Euclidean norm; keeps gradients defined at 0.
NORM_SOFTENING = 1e-12


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared while evaluating or differentiating a function."""


class ShapeError(ValueError):
    pass


def softnorm(x: Array) -> Array:
    """Euclidean norm ``sqrt(x.x + 1e-12)``, differentiable at the origin."""
    x = jnp.asarray(x)
    return jnp.sqrt(jnp.sum(x * x) + NORM_SOFTENING)


# Primitive set the bundled models are written against. Unary entries map an
# array to an array of the same shape; binary entries take two arrays.
UNARY = {
    "negate": jnp.negative,
    "exp": jnp.exp,
    "log": jnp.log,
    "sqrt": jnp.sqrt,
    "sin": jnp.sin,
    "cos": jnp.cos,
    "tanh": jnp.tanh,
    "sigmoid": jax.nn.sigmoid,
    "sum": jnp.sum,
    "softnorm": softnorm,
}
BINARY = {
    "add": jnp.add,
    "subtract": jnp.subtract,
    "multiply": jnp.multiply,
    "divide": jnp.divide,
    "power": jnp.power,
    "dot": jnp.dot,
}
# Clamps; only used off the differentiated path.
CLAMP = {"minimum": jnp.minimum, "maximum": jnp.maximum}


def _is_concrete(tree) -> bool:
    return not any(isinstance(leaf, jax.core.Tracer) for leaf in jax.tree_util.tree_leaves(tree))


def check_finite(tree, what: str) -> None:
    """Raise :class:`NonFiniteError` if any leaf of ``tree`` holds NaN/Inf.

    Traced values are skipped; the check only applies at eager call sites.
    """
    if not _is_concrete(tree):
        return
    for path, leaf in jax.tree_util.tree_flatten_with_path(tree)[0]:
        arr = np.asarray(leaf)
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            where = jax.tree_util.keystr(path) or "<value>"
            raise NonFiniteError(f"non-finite value in {what}{where}")


def _locate_nonfinite(f: Callable, *args) -> str:
    """Re-run ``f`` with JAX's NaN/Inf debugging on to name the offending op."""
    try:
        with jax.debug_nans(True), jax.debug_infs(True), jax.disable_jit():
            f(*args)
    except FloatingPointError as exc:
        return str(exc).splitlines()[0]
    return "unknown operation"


def _guard(f: Callable, out, what: str, *args) -> None:
    try:
        check_finite(out, what)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{exc} ({_locate_nonfinite(f, *args)})") from None


def _same_shape(a, b, what: str) -> None:
    sa = jax.tree_util.tree_map(jnp.shape, a)
    sb = jax.tree_util.tree_map(jnp.shape, b)
    if sa != sb:
        raise ShapeError(f"{what}: expected shape {sa}, got {sb}")


def value_and_grad(f: Callable, x):
    """Return ``(f(x), grad f(x))`` for scalar-valued ``f``."""
    out = jax.eval_shape(f, x)
    if out.shape != ():
        raise ShapeError(f"grad requires a scalar-valued function, got shape {out.shape}")
    val, g = jax.value_and_grad(f)(x)
    _guard(jax.value_and_grad(f), (val, g), "grad", x)
    return val, g


def grad(f: Callable, x):
    """Gradient of a scalar function, same structure as ``x``."""
    return value_and_grad(f, x)[1]


def vjp(f: Callable, x, cotangent):
    """Vector-Jacobian product ``cotangent^T J_f(x)``."""
    out, pullback = jax.vjp(f, x)
    _same_shape(out, cotangent, "vjp cotangent")
    (res,) = pullback(cotangent)
    _guard(lambda x_: jax.vjp(f, x_)[1](cotangent), res, "vjp", x)
    return res


def jvp(f: Callable, x, tangent):
    """Jacobian-vector product ``J_f(x) tangent``."""
    _same_shape(x, tangent, "jvp tangent")
    _, res = jax.jvp(f, (x,), (tangent,))
    _guard(lambda x_: jax.jvp(f, (x_,), (tangent,)), res, "jvp", x)
    return res


def hvp(f: Callable, x, v):
    """Hessian-vector product by forward-over-reverse: ``jvp(grad f, x, v)``."""
    _same_shape(x, v, "hvp direction")
    out = jax.eval_shape(f, x)
    if out.shape != ():
        raise ShapeError(f"hvp requires a scalar-valued function, got shape {out.shape}")
    return jvp(jax.grad(f), x, v)
