"""Differentiable probabilistic programming with Hamiltonian Monte Carlo.

Posterior means computed by :func:`diffppl.hmc.infer` can be differentiated
with respect to the observations, so observations can themselves be optimized
against a perceptual model.
"""

__version__ = "0.1.0"
