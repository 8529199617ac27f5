"""Numerical laboratory for an age-size structured transport-diffusion model.

Modules
-------
domain, coefficients, operators   grids, model data, finite-difference operators
forward                           operator-splitting time stepper
weights, carleman                 weight bases, conjugated operator, weighted estimate
geometry, continuation            unique-continuation geometry and reconstruction
config, report, cli               batch experiments
"""

__version__ = "0.1.0"
