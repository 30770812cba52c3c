"""Spatio-temporal Bayesian workload forecasting for edge-computing planning.

Layers, bottom up: special functions (`specfun`), the Matern correlation
kernel (`kernel`), the hierarchical space-time model (`model`), the Gibbs /
Metropolis-Hastings sampler (`mcmc`), posterior prediction (`predict`),
scoring (`metrics`), data preparation (`pipeline`), the task-offloading
simulator (`simulator`), and a command-line driver (`cli`).
"""

__version__ = "0.1.0"
