"""Generative models with ``sample``/``observe`` statements.

A model is an ordinary Python function that calls :func:`sample` for each
latent variable and :func:`observe` for each conditioning statement::

    def thermometer(M):
        T = sample("T", Normal(70.0, 5.0))
        observe("M", Normal(T, 2.0), M)
        return T

Running it under a handler gives the log-joint density over a flat,
unconstrained latent vector. Bounded latents are mapped to the real line
with a logistic transform and the matching log-Jacobian term.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Any, Callable

import jax
import jax.numpy as jnp
import numpy as np

from diffppl import autodiff  # noqa: F401  (enables float64)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Normal:
    mean: Any
    stddev: Any

    def __post_init__(self):
        if not isinstance(self.stddev, jax.core.Tracer) and np.any(np.asarray(self.stddev) <= 0):
            raise ValueError(f"Normal stddev must be positive, got {self.stddev}")


@dataclass(frozen=True)
class Uniform:
    """Uniform on ``[low, high]``.

    With ``circular=True`` the interval is a circle (an angle): the
    unconstrained coordinate wraps around instead of being squashed.
    """

    low: float
    high: float
    circular: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Uniform needs low < high, got ({self.low}, {self.high})")


def log_prob(dist, x):
    """Elementwise log density of ``x`` under ``dist`` (not summed)."""
    x = jnp.asarray(x)
    if isinstance(dist, Normal):
        z = (x - dist.mean) / dist.stddev
        return -0.5 * z * z - jnp.log(dist.stddev) - _LOG_SQRT_2PI
    if isinstance(dist, Uniform):
        if autodiff._is_concrete(x) and np.any((np.asarray(x) < dist.low) | (np.asarray(x) > dist.high)):
            raise ValueError(f"value outside Uniform({dist.low}, {dist.high}) support")
        return jnp.full(jnp.shape(x), -math.log(dist.high - dist.low))
    raise TypeError(f"unsupported distribution {dist!r}")


@dataclass(frozen=True)
class LatentSite:
    name: str
    shape: tuple[int, ...]
    dist: Normal | Uniform
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))


@dataclass(frozen=True)
class ObservationSite:
    name: str
    value: Any
    noise_stddev: Any


def to_constrained(site: LatentSite, z):
    """Map unconstrained ``z`` to the site's support.

    Returns ``(x, log_det_jacobian)`` with the log-determinant summed over
    elements.
    """
    z = jnp.asarray(z)
    if z.shape != site.shape:
        raise ValueError(f"site {site.name!r}: expected shape {site.shape}, got {z.shape}")
    if isinstance(site.dist, Uniform) and site.dist.circular:
        lo, hi = site.dist.low, site.dist.high
        return lo + jnp.mod(z - lo, hi - lo), jnp.zeros(())
    if isinstance(site.dist, Uniform):
        lo, hi = site.dist.low, site.dist.high
        x = lo + (hi - lo) * jax.nn.sigmoid(z)
        # log sigmoid(z) + log(1 - sigmoid(z)) = -softplus(-z) - softplus(z)
        logdet = jnp.sum(math.log(hi - lo) - jax.nn.softplus(-z) - jax.nn.softplus(z))
        return x, logdet
    return z, jnp.zeros(())


def to_unconstrained(site: LatentSite, x):
    x = jnp.asarray(x)
    if isinstance(site.dist, Uniform) and site.dist.circular:
        return x
    if isinstance(site.dist, Uniform):
        lo, hi = site.dist.low, site.dist.high
        u = (x - lo) / (hi - lo)
        return jnp.log(u) - jnp.log1p(-u)
    return x


# -- effect handlers ---------------------------------------------------------

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class _Handler:
    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()


class _Discover(_Handler):
    """Record site layout; latents take a fixed placeholder value."""

    def __init__(self):
        self.sites: list[LatentSite] = []
        self.observations: list[ObservationSite] = []
        self.offset = 0

    def sample(self, name, dist, shape):
        if any(s.name == name for s in self.sites):
            raise ValueError(f"duplicate latent site {name!r}")
        site = LatentSite(name, shape, dist, self.offset)
        self.sites.append(site)
        self.offset += site.size
        return to_constrained(site, jnp.zeros(shape))[0]

    def observe(self, name, dist, value):
        if any(o.name == name for o in self.observations):
            raise ValueError(f"duplicate observation site {name!r}")
        self.observations.append(ObservationSite(name, value, dist.stddev))


class _Evaluate(_Handler):
    """Read latents from ``z`` and accumulate the log-joint."""

    def __init__(self, sites: dict[str, LatentSite], z, blocked=frozenset()):
        self.sites = sites
        self.z = z
        self.blocked = blocked
        self.terms: dict[str, Any] = {}

    def sample(self, name, dist, shape):
        site = self.sites[name]
        zi = self.z[site.offset:site.offset + site.size].reshape(site.shape)
        x, logdet = to_constrained(site, zi)
        self.terms[name] = jnp.sum(log_prob(dist, x)) + logdet
        return x

    def observe(self, name, dist, value):
        if jnp.shape(value) != jnp.shape(dist.mean):
            raise ValueError(
                f"observation {name!r}: prediction shape {jnp.shape(dist.mean)} "
                f"!= observed shape {jnp.shape(value)}"
            )
        if name not in self.blocked:
            self.terms[name] = jnp.sum(log_prob(dist, value))


class _Prior(_Handler):
    def __init__(self, key):
        self.key = key
        self.values: dict[str, Any] = {}

    def sample(self, name, dist, shape):
        self.key, sub = jax.random.split(self.key)
        if isinstance(dist, Uniform):
            x = jax.random.uniform(sub, shape, minval=dist.low, maxval=dist.high)
        else:
            x = dist.mean + dist.stddev * jax.random.normal(sub, shape)
        self.values[name] = x
        return x

    def observe(self, name, dist, value):
        pass


def sample(name: str, dist, shape: tuple[int, ...] = ()):
    """Declare a latent variable; returns its value in constrained space."""
    stack = _stack()
    if not stack:
        raise RuntimeError("sample() called outside of a model handler")
    return stack[-1].sample(name, dist, tuple(shape))


def observe(name: str, dist: Normal, value) -> None:
    """Condition on ``value`` being a draw from ``dist``."""
    stack = _stack()
    if not stack:
        raise RuntimeError("observe() called outside of a model handler")
    if not isinstance(dist, Normal):
        raise TypeError("observations must be Normal")
    stack[-1].observe(name, dist, value)


# -- compiled model ----------------------------------------------------------


class Model:
    """A model function plus its site layout.

    The layout is discovered by running ``fn`` once on representative
    arguments; observations and parameters passed later must have the same
    shapes.
    """

    def __init__(self, fn: Callable, *example_args, name: str | None = None):
        self.fn = fn
        self.name = name or fn.__name__
        with _Discover() as d:
            fn(*example_args)
        if not d.sites:
            raise ValueError("model declares no latent variables")
        self.latent_sites: tuple[LatentSite, ...] = tuple(d.sites)
        self.observation_names = tuple(o.name for o in d.observations)
        self.latent_dim = d.offset
        self._by_name = {s.name: s for s in self.latent_sites}

    def site(self, name: str) -> LatentSite:
        return self._by_name[name]

    def observation_sites(self, *args) -> list[ObservationSite]:
        with _Discover() as d:
            self.fn(*args)
        return d.observations

    def __repr__(self):
        return f"Model({self.name}, latent_dim={self.latent_dim})"


def _check_z(model: Model, z):
    if jnp.shape(z) != (model.latent_dim,):
        raise ValueError(f"{model.name}: expected latent vector of length {model.latent_dim}, got shape {jnp.shape(z)}")


def log_joint_terms(model: Model, z, *args, blocked=frozenset()) -> dict[str, Any]:
    """Per-site contributions to the log-joint, keyed by site name."""
    _check_z(model, z)
    with _Evaluate(model._by_name, jnp.asarray(z), frozenset(blocked)) as h:
        model.fn(*args)
    return h.terms


def log_joint(model: Model, z, *args, blocked=frozenset()):
    """Unnormalized log posterior density over the unconstrained latents.

    Priors are evaluated in constrained space and carry the log-Jacobian of
    the transform; observation sites named in ``blocked`` are left out.
    """
    terms = log_joint_terms(model, z, *args, blocked=blocked)
    return sum(terms.values(), jnp.zeros(()))


def returned(model: Model, z, *args):
    """Value the model returns when its latents are set from ``z``."""
    _check_z(model, z)
    with _Evaluate(model._by_name, jnp.asarray(z)):
        return model.fn(*args)


def prior_sample(model: Model, key, *args):
    """Draw every latent from its prior; returns the unconstrained vector."""
    with _Prior(key) as h:
        model.fn(*args)
    parts = [to_unconstrained(s, h.values[s.name]).reshape(-1) for s in model.latent_sites]
    return jnp.concatenate(parts)


def constrain(model: Model, z) -> dict[str, Any]:
    """Split ``z`` into named constrained-space values."""
    _check_z(model, z)
    out = {}
    for s in model.latent_sites:
        out[s.name] = to_constrained(s, jnp.asarray(z)[s.offset:s.offset + s.size].reshape(s.shape))[0]
    return out


def unconstrain(model: Model, values: dict[str, Any]):
    """Inverse of :func:`constrain`."""
    return jnp.concatenate(
        [to_unconstrained(s, jnp.asarray(values[s.name], dtype=float)).reshape(-1) for s in model.latent_sites]
    )
