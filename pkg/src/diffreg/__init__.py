"""Diffeomorphic image registration with stationary velocity fields.

Gauss-Newton-Krylov optimization over the velocity, with pseudospectral
differential operators, semi-Lagrangian or Runge-Kutta transport and
two-level preconditioning of the reduced Hessian.
"""
from .inverse import Model, NewtonConfig, ReducedSpace, newton_solve
from .precond import PrecondChoice
from .problems import RegistrationProblem, make_smooth_problem, make_synthetic_pair
from .spectral import Grid
from .transport import SchemeConfig, Transport

__all__ = ["Grid", "Model", "NewtonConfig", "PrecondChoice", "ReducedSpace",
           "RegistrationProblem", "SchemeConfig", "Transport", "make_smooth_problem",
           "make_synthetic_pair", "newton_solve"]
__version__ = "0.1.0"
