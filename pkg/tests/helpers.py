"""Oracles shared by the hmc tests and the acceptance suite."""

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

from diffppl import hmc, ppl
from diffppl.models import color, tables


def tape_positions(model, hyper, key, theta):
    """Same chain as ``hmc.hmc_sample``, written to be differentiated by storage.

    Trajectories use ``lax.scan`` over leapfrog steps so JAX's reverse mode
    keeps every intermediate state. The sampler's own key splitting and
    starting point are reused, so the forward pass is the same chain.
    """
    logp = lambda z: ppl.log_joint(model, z, *theta)
    force = jax.grad(logp)
    init_key, keys = hmc._split_keys(key, hyper.n_samples)
    q0 = hmc._initial_position(model, hyper, init_key, theta)

    def trajectory(q, k):
        p = jax.random.normal(k, (model.latent_dim,))

        def step(state, _):
            return hmc.leapfrog_step(*state, hyper.eps, force), None

        (q, _), _ = lax.scan(step, (q, p), None, length=hyper.n_leapfrog)
        return q, q

    _, positions = lax.scan(trajectory, q0, keys)
    return positions


def tape_infer(model, hyper, key, theta):
    """Posterior mean from :func:`tape_positions` (store-everything gradients)."""
    positions = tape_positions(model, hyper, key, theta)
    vals = jax.vmap(lambda z: ppl.returned(model, z, *theta))(positions[hyper.skip:])
    return jax.tree_util.tree_map(lambda v: jnp.mean(v, axis=0), vals)


def _bytes(compiled):
    m = compiled.memory_analysis()
    return m.argument_size_in_bytes + m.output_size_in_bytes + m.temp_size_in_bytes


def reversible_program_bytes(model, hyper, theta, key):
    """Peak buffer bytes XLA plans for sampling plus the reversible backward."""

    def program(theta, key):
        ss = hmc._sample(model, hyper, key, theta)
        theta_bar, _ = hmc._backward(model, hyper, ss, theta, jnp.ones_like(ss.positions))
        return ss.positions, theta_bar

    return _bytes(jax.jit(program).lower(theta, key).compile())


def tape_program_bytes(model, hyper, theta, key):
    """Same measurement for the store-everything reference."""

    def program(theta):
        positions, pullback = jax.vjp(lambda th: tape_positions(model, hyper, key, th), theta)
        return positions, pullback(jnp.ones_like(positions))

    return _bytes(jax.jit(program).lower(theta).compile())


# -- unambiguous scenes ------------------------------------------------------
# Round-trip recovery is only defined for scenes the model can identify. These
# filters pick prior-like scenes whose generating values are pinned down by the
# image up to small posterior spread.


def unambiguous_color_scenes(rng, n):
    """Albedo pairs under neutral light: channels in [0.15, 0.85] and, in every
    RGB channel, at least one object at 0.7 or above (so the light level is
    identifiable from the brighter patch)."""
    out = []
    while len(out) < n:
        c1, c2 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        both = np.concatenate([c1, c2])
        if np.maximum(c1, c2).min() < 0.7 or both.min() < 0.15 or both.max() > 0.85:
            continue
        out.append((c1, c2))
    return out


def unambiguous_table_scenes(rng, n, *, ratio=1.15, min_size=0.8, min_depth=2.0):
    """Single-table scenes (camera, size, position) drawn from the prior and kept
    only when the image fixes the global scale.

    A projected scene is unchanged when camera radius, table size and position
    all scale by the same k; the priors bound k to [k_lo, k_hi]. Scenes are
    kept when k_hi / k_lo <= ratio, every corner is at least ``min_depth`` in
    front of the camera, the view is oblique (|sin 2 theta| >= 0.5), the camera
    is raised (|h| / r >= 0.15) and no extent is below ``min_size``.
    """
    out = []
    while len(out) < n:
        r, th, h = rng.uniform(8, 16), rng.uniform(0, 2 * np.pi), rng.normal(0, 3)
        s, p = rng.uniform(0.5, 4, 3), rng.normal(0, 2, 2)
        k_lo = max(8 / r, 0.5 / s.min())
        k_hi = min(16 / r, 4 / s.max())
        cam = tables.make_camera_at(r, th, h)
        depth = np.asarray(tables.camera_depths(cam, tables.box_corners(s, p)))
        if k_hi / k_lo > ratio or depth.min() < min_depth:
            continue
        if abs(np.sin(2 * th)) < 0.5 or abs(h) / r < 0.15 or s.min() < min_size:
            continue
        out.append(((r, th, h), s, p))
    return out


def table_size_error(scene, key, hyper=None):
    """Max per-axis error of the inferred size for a single-table scene."""
    (r, th, h), s, p = scene
    cam = tables.make_camera_at(r, th, h)
    obs = tables.render_tables(cam, jnp.asarray(s)[None], jnp.asarray(p)[None])
    sizes, _ = hmc.infer(tables.tables_model(obs), obs, hyper=hyper or tables.DEFAULT_HYPER, key=key)
    return float(np.max(np.abs(np.asarray(sizes[0]) - s)))


def color_error(c1, c2, key, hyper=None):
    """Max per-channel error of inferred albedos under neutral light."""
    img = color.render_patches(color.planck_to_rgb(6500.0), jnp.asarray(c1), jnp.asarray(c2))
    i1, i2 = hmc.infer(color.color_model(img), img, hyper=hyper or color.DEFAULT_HYPER, key=key)
    return float(max(np.max(np.abs(np.asarray(i1) - c1)), np.max(np.abs(np.asarray(i2) - c2))))
