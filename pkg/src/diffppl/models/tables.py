"""Size constancy: boxes on a ground plane seen by a pinhole camera.

The "image" is the list of projected box corners. Corners are ordered
bottom face first, then top face; each face runs (-x,-y), (+x,-y), (+x,+y),
(-x,+y) around the footprint centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from diffppl import hmc
from diffppl.autodiff import softnorm
from diffppl.optimize import GdConfig
from diffppl.ppl import Model, Normal, Uniform, observe, sample

RADIUS_RANGE = (8.0, 16.0)
ANGLE_RANGE = (0.0, 2 * math.pi)
HEIGHT_STDDEV = 3.0
SIZE_RANGE = (0.5, 4.0)
POSITION_STDDEV = 2.0
VERTEX_NOISE = 0.01
FOCAL_LENGTH = 1.0
WORLD_UP = (0.0, 0.0, 1.0)
# hinge on corner depth used by the objective when a corner nears the camera
MIN_DEPTH = 1.0
DEPTH_PENALTY = 100.0
# optimized stimuli keep height and positions within this many prior sds
STIMULUS_SPREAD = 3.0

DEFAULT_HYPER = hmc.HmcHyperparams(
    n_samples=300, n_leapfrog=100, eps=0.005, skip=100, init_candidates=32, init_ascent_steps=300
)
DEFAULT_GD = GdConfig(steps=40, learning_rate=0.3, momentum=0.5)
N_TABLES = 2

_SIGNS = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float) * 0.5


class ProjectionError(ValueError):
    """A corner lies on or behind the camera plane."""


@dataclass(frozen=True)
class Camera:
    position: jax.Array  # (3,)
    rotation: jax.Array  # rows: right, up, forward
    focal_length: float = FOCAL_LENGTH


@dataclass(frozen=True)
class TableBox:
    size: jax.Array  # (3,) extents
    position: jax.Array  # (2,) footprint centre on z=0

    def corners(self):
        return box_corners(self.size, self.position)


def box_corners(size, position):
    size = jnp.asarray(size)
    position = jnp.asarray(position)
    foot = position[None, :] + jnp.asarray(_SIGNS) * size[None, :2]
    bottom = jnp.concatenate([foot, jnp.zeros((4, 1))], axis=1)
    top = jnp.concatenate([foot, jnp.full((4, 1), 1.0) * size[2]], axis=1)
    return jnp.concatenate([bottom, top])


def make_camera_at(r, theta, h, focal_length=FOCAL_LENGTH) -> Camera:
    """Camera on a cylinder around the z axis, looking at the origin."""
    position = jnp.stack([r * jnp.cos(theta), r * jnp.sin(theta), jnp.asarray(h, dtype=float)])
    forward = -position / jnp.sqrt(jnp.sum(position**2))
    right = jnp.cross(forward, jnp.asarray(WORLD_UP))
    right = right / jnp.sqrt(jnp.sum(right**2))
    up = jnp.cross(right, forward)
    return Camera(position, jnp.stack([right, up, forward]), focal_length)


def camera_depths(camera: Camera, points):
    return (jnp.asarray(points) - camera.position) @ camera.rotation[2]


def project_points(camera: Camera, points):
    local = (jnp.asarray(points) - camera.position) @ camera.rotation.T
    return camera.focal_length * local[:, :2] / local[:, 2:3]


def perspective_project(camera: Camera, table: TableBox):
    """Pinhole projection of the 8 corners, shape (8, 2), ordering kept."""
    corners = table.corners()
    depth = camera_depths(camera, corners)
    if not isinstance(depth, jax.core.Tracer) and np.any(np.asarray(depth) <= 0):
        raise ProjectionError(f"corner behind the camera (min depth {float(jnp.min(depth)):.3g})")
    return project_points(camera, corners)


def tables_program(observed):
    r = sample("r", Uniform(*RADIUS_RANGE))
    theta = sample("theta", Uniform(*ANGLE_RANGE, circular=True))
    h = sample("h", Normal(0.0, HEIGHT_STDDEV))
    camera = make_camera_at(r, theta, h)
    sizes, positions = [], []
    for i in range(observed.shape[0]):
        size = sample(f"size{i}", Uniform(*SIZE_RANGE), (3,))
        pos = sample(f"pos{i}", Normal(0.0, POSITION_STDDEV), (2,))
        image = project_points(camera, box_corners(size, pos))
        observe(f"table{i}", Normal(image, VERTEX_NOISE), observed[i])
        sizes.append(size)
        positions.append(pos)
    return jnp.stack(sizes), jnp.stack(positions)


_MODELS: dict[int, Model] = {}


def tables_model(observed_tables) -> Model:
    """Model conditioned on ``observed_tables`` of shape (n_tables, 8, 2)."""
    shape = jnp.shape(observed_tables)
    if len(shape) != 3 or shape[1:] != (8, 2) or shape[0] < 1:
        raise ValueError(f"expected observations of shape (n >= 1, 8, 2), got {shape}")
    n = shape[0]
    if n not in _MODELS:
        _MODELS[n] = Model(tables_program, jnp.zeros((n, 8, 2)), name=f"tables{n}")
    return _MODELS[n]


def render_tables(camera: Camera, sizes, positions):
    return jnp.stack([project_points(camera, box_corners(s, p)) for s, p in zip(sizes, positions)])


def depth_penalty(camera: Camera, sizes, positions):
    """Smooth hinge keeping every corner at least MIN_DEPTH in front."""
    total = jnp.zeros(())
    for s, p in zip(sizes, positions):
        d = camera_depths(camera, box_corners(s, p))
        total = total + jnp.sum(jnp.maximum(MIN_DEPTH - d, 0.0) ** 2)
    return DEPTH_PENALTY * total


def tables_loss(camera_params, true_sizes, true_positions, *, key, hyper=DEFAULT_HYPER):
    """How much farther table 0 really is than the model believes.

    Negative values mean the inferred position of table 0 is nearer the
    origin than its true position.
    """
    r, theta, h = camera_params[0], camera_params[1], camera_params[2]
    camera = make_camera_at(r, theta, h)
    observed = render_tables(camera, true_sizes, true_positions)
    model = tables_model(observed)
    _, inferred_positions = hmc.infer(model, observed, hyper=hyper, key=key)
    return (
        softnorm(inferred_positions[0])
        - softnorm(true_positions[0])
        + depth_penalty(camera, true_sizes, true_positions)
    )


def scene_from_params(u, n_tables):
    """Unconstrained vector -> (camera (r, theta, h), sizes, positions).

    Radius and table sizes stay inside their prior supports through logistic
    maps; height and positions are squashed into +-3 prior standard
    deviations, which keeps the stimulus a plausible scene. The angle is free.
    """
    lo, hi = RADIUS_RANGE
    r = lo + (hi - lo) * jax.nn.sigmoid(u[0])
    h = STIMULUS_SPREAD * HEIGHT_STDDEV * jnp.tanh(u[2])
    cam = jnp.stack([r, u[1], h])
    rest = u[3:].reshape(n_tables, 5)
    slo, shi = SIZE_RANGE
    sizes = slo + (shi - slo) * jax.nn.sigmoid(rest[:, :3])
    positions = STIMULUS_SPREAD * POSITION_STDDEV * jnp.tanh(rest[:, 3:])
    return cam, sizes, positions


def params_from_scene(camera_params, sizes, positions):
    lo, hi = RADIUS_RANGE
    logit = lambda x: jnp.log(x) - jnp.log1p(-x)
    r, theta, h = camera_params
    slo, shi = SIZE_RANGE
    s = logit((jnp.asarray(sizes) - slo) / (shi - slo))
    p = jnp.arctanh(jnp.asarray(positions) / (STIMULUS_SPREAD * POSITION_STDDEV))
    rest = jnp.concatenate([s, p], axis=1).reshape(-1)
    head = jnp.stack(
        [
            logit((jnp.asarray(r, float) - lo) / (hi - lo)),
            jnp.asarray(theta, float),
            jnp.arctanh(jnp.asarray(h, float) / (STIMULUS_SPREAD * HEIGHT_STDDEV)),
        ]
    )
    return jnp.concatenate([head, rest])


def tables_objective(u, key, *, n_tables=N_TABLES, hyper=DEFAULT_HYPER):
    cam, sizes, positions = scene_from_params(u, n_tables)
    return tables_loss(cam, sizes, positions, key=key, hyper=hyper)


def random_initial_params(seed: int, n_tables: int = N_TABLES):
    """Seeded starting scene for illusion search, as an unconstrained vector."""
    rng = np.random.default_rng(seed)
    camera = (rng.uniform(9.0, 15.0), rng.uniform(0.0, 2 * math.pi), np.clip(rng.normal(0.0, HEIGHT_STDDEV), -8.0, 8.0))
    sizes = rng.uniform(1.0, 3.5, (n_tables, 3))
    positions = np.clip(rng.normal(0.0, POSITION_STDDEV, (n_tables, 2)), -5.0, 5.0)
    return params_from_scene(camera, sizes, positions)
