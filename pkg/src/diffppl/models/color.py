"""Color constancy: two Lambertian objects under one black-body light.

The renderer is deliberately tiny. Each object shows ``len(SHADING)`` faces
and a face's pixel is ``light * albedo * shading``; this keeps the
light/albedo ambiguity that makes color constancy hard while staying fully
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from diffppl import hmc
from diffppl.optimize import GdConfig
from diffppl.autodiff import softnorm
from diffppl.ppl import Model, Normal, Uniform, observe, sample

SHADING = (1.0, 0.8, 0.6)
IMAGE_SHAPE = (2, len(SHADING), 3)
PIXEL_NOISE = 0.1
TEMP_MEAN = 6500.0
TEMP_STDDEV = 1000.0
BRIGHTNESS_RANGE = (0.0, 2.0)
TEMP_RANGE = (1000.0, 12000.0)
DEFAULT_LAMBDA = 0.5

DEFAULT_HYPER = hmc.HmcHyperparams(n_samples=300, n_leapfrog=40, eps=0.05, skip=100)
DEFAULT_GD = GdConfig(steps=30, learning_rate=0.2)

# Rational fit of the Planckian locus in CIE 1960 (u, v) (Krystek 1985),
# valid 1000 K - 15000 K. Denominators have no real roots, so the map is
# smooth for every temperature.
_U_NUM = (0.860117757, 1.54118254e-4, 1.28641212e-7)
_U_DEN = (1.0, 8.42420235e-4, 7.08145163e-7)
_V_NUM = (0.317398726, 4.22806245e-5, 4.20481691e-8)
_V_DEN = (1.0, -2.89741816e-5, 1.61456053e-7)

# CIE XYZ -> linear sRGB (D65 white)
_XYZ_TO_RGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)


def _quad(c, t):
    return c[0] + c[1] * t + c[2] * t * t


def _planck_xyz(temp):
    u = _quad(_U_NUM, temp) / _quad(_U_DEN, temp)
    v = _quad(_V_NUM, temp) / _quad(_V_DEN, temp)
    d = 2 * u - 8 * v + 4
    x, y = 3 * u / d, 2 * v / d
    # unit luminance
    return jnp.stack([x / y, jnp.ones_like(x), (1 - x - y) / y], axis=-1)


_NORMALIZER = float(np.max(_XYZ_TO_RGB @ np.asarray(_planck_xyz(jnp.asarray(TEMP_MEAN)))))


def planck_rgb_unchecked(temp):
    """:func:`planck_to_rgb` without the range check, for use inside models."""
    return _planck_xyz(jnp.asarray(temp)) @ jnp.asarray(_XYZ_TO_RGB.T) / _NORMALIZER


def planck_to_rgb(temp):
    """Linear RGB of a black body at ``temp`` kelvin.

    Luminance is held fixed across temperatures and the result is scaled so
    that the largest channel at 6500 K equals 1.
    """
    if not isinstance(temp, jax.core.Tracer):
        t = np.asarray(temp)
        if np.any(t < TEMP_RANGE[0]) or np.any(t > TEMP_RANGE[1]):
            raise ValueError(f"temperature {temp} K outside the fitted range {TEMP_RANGE}")
    return planck_rgb_unchecked(temp)


def render_patches(light, color1, color2, shading=SHADING):
    """Render both objects; returns pixels of shape (2, faces, 3)."""
    light = jnp.asarray(light)
    albedo = jnp.stack([jnp.asarray(color1), jnp.asarray(color2)])
    s = jnp.asarray(shading)
    return light[None, None, :] * albedo[:, None, :] * s[None, :, None]


def color_program(observed_img):
    # temperature sampled in standard units; same prior as N(6500, 1000)
    temp = TEMP_MEAN + TEMP_STDDEV * sample("temp_std", Normal(0.0, 1.0))
    brightness = sample("brightness", Uniform(*BRIGHTNESS_RANGE))
    light = planck_rgb_unchecked(temp) * brightness
    color1 = sample("color1", Uniform(0.0, 1.0), (3,))
    color2 = sample("color2", Uniform(0.0, 1.0), (3,))
    img = render_patches(light, color1, color2)
    observe("img", Normal(img, PIXEL_NOISE), observed_img)
    return color1, color2


_MODEL = Model(color_program, jnp.zeros(IMAGE_SHAPE), name="color")


def color_model(observed_img=None) -> Model:
    """The color constancy model; ``observed_img`` only has to have the right shape."""
    if observed_img is not None and jnp.shape(observed_img) != IMAGE_SHAPE:
        raise ValueError(f"observed image must have shape {IMAGE_SHAPE}, got {jnp.shape(observed_img)}")
    return _MODEL


@dataclass(frozen=True)
class ColorScene:
    temp: float
    brightness: float
    color1: tuple[float, float, float]
    color2: tuple[float, float, float]

    def __post_init__(self):
        if not (np.isfinite(self.temp) and self.temp > 0):
            raise ValueError("temp must be finite and positive")
        if not BRIGHTNESS_RANGE[0] <= self.brightness <= BRIGHTNESS_RANGE[1]:
            raise ValueError("brightness outside [0, 2]")
        for c in (self.color1, self.color2):
            if len(c) != 3 or min(c) < 0 or max(c) > 1:
                raise ValueError("albedo components must lie in [0, 1]")

    def render(self):
        light = planck_to_rgb(self.temp) * self.brightness
        return render_patches(light, jnp.asarray(self.color1), jnp.asarray(self.color2))


def scene_from_params(u):
    """Map an unconstrained 8-vector to (temp, brightness, color1, color2).

    Temperature is in standard units around 6500 K and clipped to the fitted
    range; brightness and albedos go through logistic maps onto their bounds.
    """
    temp = jnp.clip(TEMP_MEAN + TEMP_STDDEV * u[0], *TEMP_RANGE)
    brightness = BRIGHTNESS_RANGE[1] * jax.nn.sigmoid(u[1])
    return temp, brightness, jax.nn.sigmoid(u[2:5]), jax.nn.sigmoid(u[5:8])


def params_from_scene(temp, brightness, color1, color2):
    logit = lambda x: jnp.log(x) - jnp.log1p(-x)
    return jnp.concatenate(
        [
            jnp.atleast_1d((temp - TEMP_MEAN) / TEMP_STDDEV),
            jnp.atleast_1d(logit(brightness / BRIGHTNESS_RANGE[1])),
            logit(jnp.asarray(color1)),
            logit(jnp.asarray(color2)),
        ]
    )


def color_loss(temp, brightness, true_color1, true_color2, *, key, hyper=DEFAULT_HYPER, lam=DEFAULT_LAMBDA):
    """Adversarial objective: low when inferred colors are far from the truth.

    ``lam`` weights an extra term rewarding two distinct true colors.
    """
    light = planck_rgb_unchecked(temp) * brightness
    img = render_patches(light, true_color1, true_color2)
    seen1, seen2 = hmc.infer(_MODEL, img, hyper=hyper, key=key)
    return (
        -softnorm(true_color1 - seen1)
        - softnorm(true_color2 - seen2)
        - lam * softnorm(true_color1 - true_color2)
    )


def color_objective(u, key, *, hyper=DEFAULT_HYPER, lam=DEFAULT_LAMBDA):
    """:func:`color_loss` over the unconstrained parameter vector."""
    return color_loss(*scene_from_params(u), key=key, hyper=hyper, lam=lam)


def random_initial_params(seed: int):
    """Seeded starting scene for illusion search, as an unconstrained vector.

    Temperature follows its prior; brightness and albedos are drawn uniformly
    away from the edges of their ranges.
    """
    rng = np.random.default_rng(seed)
    return params_from_scene(
        TEMP_MEAN + TEMP_STDDEV * rng.normal(),
        rng.uniform(0.05, 1.95),
        rng.uniform(0.05, 0.95, 3),
        rng.uniform(0.05, 0.95, 3),
    )
