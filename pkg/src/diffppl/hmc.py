"""Differentiable Hamiltonian Monte Carlo.

The sampler runs a single persistent chain with identity mass matrix and no
accept/reject step, so every sample is a smooth function of the observations
and parameters the model is conditioned on. Gradients are computed by a
hand-written reverse sweep that rebuilds each trajectory by running the
leapfrog integrator backwards, so only the end state of every trajectory is
kept in memory, whatever the number of leapfrog steps.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

from diffppl import ppl
from diffppl.autodiff import NonFiniteError


class DivergenceError(NonFiniteError):
    """The sampler produced a non-finite state."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class ReconstructionError(RuntimeError):
    """Reversed trajectory no longer matches the stored forward state."""


@dataclass(frozen=True)
class HmcHyperparams:
    """Sampler settings.

    Attributes:
        n_samples: Number of trajectories, one sample each.
        n_leapfrog: Leapfrog steps per trajectory.
        eps: Integrator step size.
        skip: Leading samples dropped as burn-in.
        drift_tol: Largest tolerated max-norm mismatch between a reversed
            trajectory start and the stored position it should land on.
        init_candidates: The chain starts from the most probable of this
            many prior draws (1 = a plain prior draw).
        init_ascent_steps: Optional Adam steps of log-density ascent applied
            to the starting point before sampling.
        init_ascent_rate: Adam learning rate for those steps.
    """

    n_samples: int = 1000
    n_leapfrog: int = 300
    eps: float = 0.01
    skip: int = 100
    drift_tol: float = 1e-3
    init_candidates: int = 1
    init_ascent_steps: int = 0
    init_ascent_rate: float = 0.05

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be a positive integer")
        if int(self.n_leapfrog) < 1:
            raise ValueError("n_leapfrog must be a positive integer")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 <= int(self.skip) < int(self.n_samples):
            raise ValueError("skip must satisfy 0 <= skip < n_samples")
        if int(self.init_candidates) < 1:
            raise ValueError("init_candidates must be a positive integer")

    @property
    def n_retained(self) -> int:
        return self.n_samples - self.skip


class SampleSet(NamedTuple):
    positions: jax.Array  # (N, d) trajectory end positions
    end_momenta: jax.Array  # (N, d) trajectory end momenta
    initial_position: jax.Array  # (d,)
    keys: jax.Array  # (N, 2) momentum key per trajectory
    init_key: jax.Array  # key the starting point was drawn with


def leapfrog_step(q, p, eps, force: Callable):
    """One leapfrog step; ``force`` is the gradient of the log density."""
    p_half = p + 0.5 * eps * force(q)
    q_new = q + eps * p_half
    p_new = p_half + 0.5 * eps * force(q_new)
    return q_new, p_new


def inverse_leapfrog_step(q, p, eps, force: Callable):
    """Algebraic inverse of :func:`leapfrog_step`."""
    p_half = p - 0.5 * eps * force(q)
    q_old = q - eps * p_half
    p_old = p_half - 0.5 * eps * force(q_old)
    return q_old, p_old


def _log_density(model):
    return lambda z, theta: ppl.log_joint(model, z, *theta)


def _trajectory(q, p, eps, n_steps, force):
    def body(_, carry):
        q, p, g = carry
        p = p + 0.5 * eps * g
        q = q + eps * p
        g = force(q)
        p = p + 0.5 * eps * g
        return q, p, g

    q, p, _ = lax.fori_loop(0, n_steps, body, (q, p, force(q)))
    return q, p


def _split_keys(key, n):
    init_key, chain_key = jax.random.split(key)
    return init_key, jax.random.split(chain_key, n)


def _ascend(logp, z, steps, rate):
    # Adam on -logp; only used to pick a starting point
    b1, b2 = 0.9, 0.999

    def body(i, carry):
        z, m, v = carry
        g = jax.grad(logp)(z)
        g = jnp.where(jnp.isfinite(g), g, 0.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        t = i + 1
        step = rate * (m / (1 - b1**t)) / (jnp.sqrt(v / (1 - b2**t)) + 1e-8)
        return z + step, m, v

    z, _, _ = lax.fori_loop(0, steps, body, (z, jnp.zeros_like(z), jnp.zeros_like(z)))
    return z


def _initial_position(model, hyper, key, theta):
    logp = lambda z: ppl.log_joint(model, z, *theta)
    if hyper.init_candidates == 1:
        z = ppl.prior_sample(model, key, *theta)
        if hyper.init_ascent_steps:
            z = _ascend(logp, z, hyper.init_ascent_steps, hyper.init_ascent_rate)
        return z
    keys = jax.random.split(key, hyper.init_candidates)
    cands = jax.vmap(lambda k: ppl.prior_sample(model, k, *theta))(keys)
    if hyper.init_ascent_steps:
        cands = jax.vmap(lambda z: _ascend(logp, z, hyper.init_ascent_steps, hyper.init_ascent_rate))(cands)
    scores = jax.vmap(logp)(cands)
    scores = jnp.where(jnp.isfinite(scores), scores, -jnp.inf)
    return cands[jnp.argmax(scores)]


@functools.partial(jax.jit, static_argnums=(0, 1))
def _sample(model, hyper: HmcHyperparams, key, theta):
    logp = _log_density(model)
    force = jax.grad(logp)
    init_key, keys = _split_keys(key, hyper.n_samples)
    q0 = lax.stop_gradient(_initial_position(model, hyper, init_key, theta))
    dim = model.latent_dim

    def one(q, k):
        p = jax.random.normal(k, (dim,))
        q, p = _trajectory(q, p, hyper.eps, hyper.n_leapfrog, lambda x: force(x, theta))
        return q, (q, p)

    _, (positions, momenta) = lax.scan(one, q0, keys)
    return SampleSet(positions, momenta, q0, keys, init_key)


def _locate_divergence(model, theta, ss: SampleSet, hyper: HmcHyperparams):
    bad = ~np.all(np.isfinite(np.asarray(ss.positions)), axis=1)
    i = int(np.argmax(bad))
    q = ss.initial_position if i == 0 else ss.positions[i - 1]
    p = jax.random.normal(ss.keys[i], (model.latent_dim,))
    force = jax.jit(lambda z: jax.grad(_log_density(model))(z, theta))
    for step in range(hyper.n_leapfrog):
        q, p = leapfrog_step(q, p, hyper.eps, force)
        if not (np.all(np.isfinite(np.asarray(q))) and np.all(np.isfinite(np.asarray(p)))):
            return i, step
    return i, None


def _check_divergence(model, theta, ss, hyper):
    if not isinstance(ss.positions, jax.core.Tracer) and not np.all(np.isfinite(np.asarray(ss.positions))):
        traj, step = _locate_divergence(model, theta, ss, hyper)
        raise DivergenceError(
            f"{model.name}: sampler diverged in trajectory {traj}, leapfrog step {step} "
            f"(eps={hyper.eps}, L={hyper.n_leapfrog}); try a smaller step size",
            trajectory=traj,
            step=step,
        )


def hmc_sample(model: ppl.Model, *args, hyper: HmcHyperparams = HmcHyperparams(), key) -> SampleSet:
    """Run the chain for ``model`` conditioned on ``args``.

    The chain starts from a prior draw; each trajectory resamples a standard
    normal momentum and continues from the previous end position.
    """
    theta = tuple(jnp.asarray(a, dtype=float) if not isinstance(a, jax.Array) else a for a in args)
    ss = _sample(model, hyper, key, theta)
    _check_divergence(model, theta, ss, hyper)
    return ss


@functools.partial(jax.jit, static_argnums=(0, 1))
def _backward(model, hyper: HmcHyperparams, ss: SampleSet, theta, position_adjoints):
    logp = _log_density(model)
    full_grad = jax.grad(logp, argnums=(0, 1))
    eps = hyper.eps

    def curvature(q, v):
        # One forward-over-reverse pass gives the force at q, the Hessian
        # product H v and the mixed product d/dtheta (force . v).
        (g, _), (hv, mixed) = jax.jvp(lambda z: full_grad(z, theta), (q,), (v,))
        return g, hv, mixed

    def add(tree, other, scale):
        return jax.tree_util.tree_map(lambda a, b: a + scale * b, tree, other)

    def reverse_step(_, carry):
        q, p, g, a_q, a_p, theta_bar = carry
        # adjoint of p' = p_half + eps/2 force(q')
        _, hv, mixed = curvature(q, a_p)
        a_q = a_q + 0.5 * eps * hv
        theta_bar = add(theta_bar, mixed, 0.5 * eps)
        a_half = a_p + eps * a_q  # through q' = q + eps p_half
        # rebuild the state entering this step
        p_half = p - 0.5 * eps * g
        q_prev = q - eps * p_half
        g_prev, hv, mixed = curvature(q_prev, a_half)
        p_prev = p_half - 0.5 * eps * g_prev
        # adjoint of p_half = p + eps/2 force(q)
        a_q = a_q + 0.5 * eps * hv
        theta_bar = add(theta_bar, mixed, 0.5 * eps)
        return q_prev, p_prev, g_prev, a_q, a_half, theta_bar

    starts = jnp.concatenate([ss.initial_position[None], ss.positions[:-1]])
    theta_zero = jax.tree_util.tree_map(jnp.zeros_like, theta)

    def one(carry, xs):
        a_q, theta_bar, drift = carry
        q_end, p_end, adj, start = xs
        g_end = jax.grad(logp)(q_end, theta)
        state = (q_end, p_end, g_end, a_q + adj, jnp.zeros_like(q_end), theta_bar)
        q0, _, _, a_q, _, theta_bar = lax.fori_loop(0, hyper.n_leapfrog, reverse_step, state)
        drift = jnp.maximum(drift, jnp.max(jnp.abs(q0 - start)))
        return (a_q, theta_bar, drift), None

    init = (jnp.zeros_like(ss.initial_position), theta_zero, jnp.zeros(()))
    xs = (ss.positions, ss.end_momenta, position_adjoints, starts)
    (start_bar, theta_bar, drift), _ = lax.scan(one, init, xs, reverse=True)
    # the starting point may itself depend on theta (warm start)
    _, pullback = jax.vjp(lambda th: _initial_position(model, hyper, ss.init_key, th), theta)
    (init_bar,) = pullback(start_bar)
    theta_bar = jax.tree_util.tree_map(jnp.add, theta_bar, init_bar)
    return theta_bar, drift


def backward(model: ppl.Model, ss: SampleSet, position_adjoints, *args, hyper: HmcHyperparams = HmcHyperparams()):
    """Pull adjoints on the sampled positions back onto ``args``.

    ``position_adjoints`` has one row per trajectory (zeros for burn-in).
    Returns a tuple with one adjoint per argument.
    """
    theta = tuple(jnp.asarray(a, dtype=float) for a in args)
    position_adjoints = jnp.asarray(position_adjoints, dtype=float)
    if position_adjoints.shape != ss.positions.shape:
        raise ValueError(f"expected adjoints of shape {ss.positions.shape}, got {position_adjoints.shape}")
    theta_bar, drift = _backward(model, hyper, ss, theta, position_adjoints)
    drift = float(drift)
    if not drift <= hyper.drift_tol:
        raise ReconstructionError(
            f"{model.name}: reversed trajectories drifted by {drift:.3g} (> {hyper.drift_tol}); "
            "reduce eps or n_leapfrog"
        )
    return theta_bar


def sample_values(model: ppl.Model, ss: SampleSet, *args, retained_only=True, hyper: HmcHyperparams | None = None):
    """Model return values (constrained space) for each sample."""
    positions = ss.positions
    if retained_only and hyper is not None:
        positions = positions[hyper.skip:]
    return jax.vmap(lambda z: ppl.returned(model, z, *args))(positions)


# -- infer -------------------------------------------------------------------


def _mean_return(model, positions, theta):
    vals = jax.vmap(lambda z: ppl.returned(model, z, *theta))(positions)
    return jax.tree_util.tree_map(lambda v: jnp.mean(v, axis=0), vals)


@functools.partial(jax.custom_vjp, nondiff_argnums=(0, 1))
def _infer(model, hyper, key, theta):
    ss = _sample(model, hyper, key, theta)
    return _mean_return(model, ss.positions[hyper.skip:], theta)


def _infer_fwd(model, hyper, key, theta):
    ss = _sample(model, hyper, key, theta)
    return _mean_return(model, ss.positions[hyper.skip:], theta), (ss, theta)


def _infer_bwd(model, hyper, res, out_bar):
    ss, theta = res
    retained = ss.positions[hyper.skip:]
    _, pullback = jax.vjp(lambda z, th: _mean_return(model, z, th), retained, theta)
    adj_retained, theta_direct = pullback(out_bar)
    adj = jnp.zeros_like(ss.positions).at[hyper.skip:].set(adj_retained)
    theta_bar, drift = _backward(model, hyper, ss, theta, adj)
    ok = drift <= hyper.drift_tol
    theta_bar = jax.tree_util.tree_map(
        lambda a, b: jnp.where(ok, a + b, jnp.nan), theta_bar, theta_direct
    )
    return None, theta_bar


_infer.defvjp(_infer_fwd, _infer_bwd)


def infer(model: ppl.Model, *args, hyper: HmcHyperparams = HmcHyperparams(), key) -> Any:
    """Posterior mean of the model's return value, differentiable in ``args``.

    Averages over the retained samples (indices ``skip .. N-1``). Reverse-mode
    gradients go through the reversible backward sweep; a reconstruction
    drift above ``hyper.drift_tol`` turns the gradient into NaN.
    """
    theta = tuple(a if isinstance(a, jax.Array) else jnp.asarray(a, dtype=float) for a in args)
    if not any(isinstance(leaf, jax.core.Tracer) for leaf in jax.tree_util.tree_leaves(theta)):
        ss = hmc_sample(model, *theta, hyper=hyper, key=key)
        return _mean_return(model, ss.positions[hyper.skip:], theta)
    return _infer(model, hyper, key, theta)
