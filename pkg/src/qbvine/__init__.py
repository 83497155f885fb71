"""QB-Vine: quasi-Bayesian vine density estimation."""
__version__ = "0.1.0"

from .marginal import (InitialPredictive, PredictiveMarginal, AveragedMarginal, alpha_weight,
                       h_rho, gaussian_copula_density, fit_marginal, cdf_eval, pdf_eval,
                       average_marginals, select_rho)
from .numerics import InterpolatedInverseCdf, build_inverse_cdf, inverse_eval
from .scoring import energy_score, energy_score_total, energy_score_gradient, log_predictive_score
from .paircopula import PairCopulaKde, fit_pair, pc_density, select_bandwidth
from .vine import (VineEdge, VineStructure, VineModel, kendall_tau, select_structure, fit_vine,
                   vine_log_density, vine_sample)
from .model import (QbVineConfig, QbVineModel, ConditionalModel, fit, fit_conditional,
                    joint_log_density, sample, transform_labels, conditional_log_density,
                    predict_class, load_model)
from .data import Dataset, GmmSpec, load_csv, standardize, destandardize, split, gmm_generate
