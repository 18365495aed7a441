"""Episodic Bayesian optimal control with cutting-plane value approximation."""

from .bayes import ConjugateFamily, PosteriorState, ScenarioBatch, likelihood_ratio, sample_scenarios, update_posterior
from .lp import LinearProgram, LpSolution, LpStatus, solve_lp
from .model import ControlProblem, build_inventory, stage_cost, step
from .sddp import Cut, CutSet, evaluate_lb, run_eboc, solve_stage_subproblem

__version__ = "0.1.0"
