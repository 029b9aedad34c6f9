"""
Sequential LFM - sequential inference for latent force models.

This package converts mechanistic ODE output models driven by Gaussian-process forces into linear
Gauss-Markov state-space models, runs exact Kalman/RTS inference on them, and infers switching forces
with Gaussian-sum filtering and smoothing over a switching linear dynamic system.
"""

__version__ = "0.1.0"
