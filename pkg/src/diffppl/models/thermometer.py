"""Noisy thermometer: a Normal prior on temperature, a Normal reading."""

from __future__ import annotations

from diffppl import hmc
from diffppl.optimize import GdConfig
from diffppl.ppl import Model, Normal, observe, sample

PRIOR_MEAN = 70.0
PRIOR_STDDEV = 5.0
READING_STDDEV = 2.0


def thermometer(M):
    T = sample("T", Normal(PRIOR_MEAN, PRIOR_STDDEV))
    observe("M", Normal(T, READING_STDDEV), M)
    return T


def thermometer_model() -> Model:
    return Model(thermometer, 70.0)


def posterior_mean(m: float) -> float:
    """Closed-form E[T | M=m] for the conjugate pair."""
    prec = 1 / PRIOR_STDDEV**2 + 1 / READING_STDDEV**2
    return (PRIOR_MEAN / PRIOR_STDDEV**2 + m / READING_STDDEV**2) / prec


def posterior_stddev() -> float:
    return (1 / PRIOR_STDDEV**2 + 1 / READING_STDDEV**2) ** -0.5


PAPER_HYPER = hmc.HmcHyperparams(n_samples=1000, n_leapfrog=300, eps=0.01, skip=100)
DEFAULT_GD = GdConfig(steps=100, learning_rate=0.1)
INITIAL_READING = 100.0
_MODEL = thermometer_model()


def thermometer_loss(m, key, *, target=100.0, hyper=PAPER_HYPER):
    """Squared gap between the inferred temperature for reading ``m`` and ``target``."""
    return (hmc.infer(_MODEL, m, hyper=hyper, key=key) - target) ** 2
