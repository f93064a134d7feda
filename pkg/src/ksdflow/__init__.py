"""Kernel Stein discrepancy descent and baseline particle flows."""
from .diagnostics import (amari_distance, ksd_between, logreg_accuracy, logreg_predict_proba,
                          stein_identity_check, symmetry_residual)
from .flows import (DivergenceError, FlowConfig, FlowTrace, GridSearch, ParticleSet,
                    RandomSearch, gd_step, ksd_grad, ksd_loss, mmd_step, run_flow, stein_points,
                    svgd_step)
from .kernel import IMQ, GaussianRBF, fd_check, make_kernel, median_bandwidth
from .optim import LbfgsConfig, Objective, gd_minimize, lbfgs_minimize
from .stein import SteinEvaluation, SteinKernel, evaluate_particles
from .targets import (AnnealedScore, Banana, CallableScore, Gaussian, GaussianMixture,
                      ICAPosterior, LogisticPosterior, ScoreModel, anneal, symmetric_mixture)

__version__ = "0.1.0"
