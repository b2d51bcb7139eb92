import jax
import numpy as np

from diffppl import hmc
from diffppl.models import thermometer as th


def test_closed_forms():
    assert abs(th.posterior_mean(100.0) - 2780 / 29) < 1e-12
    assert abs(th.posterior_stddev() - (100 / 29) ** 0.5) < 1e-12
    assert abs(th.posterior_mean(524 / 5) - 100.0) < 1e-12


def test_model_layout():
    model = th.thermometer_model()
    assert model.latent_dim == 1
    assert model.observation_names == ("M",)
    (obs,) = model.observation_sites(70.0)
    assert obs.noise_stddev == 2.0


def test_infer_at_reading_100():
    got = float(hmc.infer(th.thermometer_model(), 100.0, hyper=th.PAPER_HYPER, key=jax.random.PRNGKey(2)))
    assert abs(got - 95.959) < 0.4


def test_infer_at_prior_mean():
    got = float(hmc.infer(th.thermometer_model(), 70.0, hyper=th.PAPER_HYPER, key=jax.random.PRNGKey(2)))
    assert abs(got - 70.0) < 0.3


def test_analytic_fixed_point_closes_loop():
    got = float(hmc.infer(th.thermometer_model(), 104.8, hyper=th.PAPER_HYPER, key=jax.random.PRNGKey(0)))
    assert abs(got - 100.0) < 0.4


def test_loss_is_squared_gap():
    key = jax.random.PRNGKey(0)
    inferred = float(hmc.infer(th.thermometer_model(), 100.0, hyper=th.PAPER_HYPER, key=key))
    loss = float(th.thermometer_loss(100.0, key))
    assert np.isclose(loss, (inferred - 100.0) ** 2, rtol=1e-12)
