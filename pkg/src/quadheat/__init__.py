"""Forced quadratic heat equation ``u_t = u_xx - u**2 + phi(x)`` on the line."""

from .grid import Grid, GridFunction, PotentialProfile, action, energy, norms, residual
from .imex import IMEXSolver, Reaction, Trajectory, evolve, imex_step, resolvent
from .equilibrium import EquilibriumFinder, find_equilibria, necessary_condition, trace_Z

__version__ = "0.1.0"
