"""Mean-field interacting particles on a spatial grid driven by correlated noise:
simulation, reference laws, fluctuation analysis and the limiting Langevin dynamics."""

from .coefficients import (CoefficientModel, MeasureSummary, Nonlinearity, PairwiseKernel, SeparableKernel,
                           audit_regularity, build_model, diffusion_sigma, drift_b, lacunary_profile,
                           MODELS)
from .fluctuations import (CovarianceEstimate, FluctuationRecord, MartingaleObserver, MartingaleRecord,
                           SemimartingaleObserver, estimate_g, fluctuation_pairings, gaussianity_test,
                           initial_covariance_Q, initial_reference, martingale_term, quadratic_variation,
                           reference_pairings)
from .fokker_planck import FPGrid1D, FPSolution, solve_fp_1d, w1_samples_vs_density
from .langevin import GalerkinSystem, assemble_galerkin, covariance_ode, simulate_spde
from .noise import (CoarsenedSampler, ConfigurationError, Mollifier, NoiseFieldSampler, correlation_R,
                    mollifier_eval)
from .particles import (InitialDataSampler, LawPath, NumericalError, ParticleSystemState, SpatialGrid,
                        coupled_error, coupled_run, reference_law, reflected_euler_step,
                        simulate_mckean_ensemble, simulate_particle_system)
from .testfunctions import (TestFunction, TestFunctionDictionary, apply_L, apply_linearized_L,
                            build_dictionary, eval_V, weighted_norm)
from .transport import WeightedPointCloud, empirical_measure, joint_empirical, wasserstein

__version__ = "0.1.0"
