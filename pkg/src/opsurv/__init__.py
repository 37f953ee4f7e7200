"""Survival analysis with orthogonal-polynomial densities and Gauss-Legendre CDFs."""

__version__ = "0.1.0"

from ._accel import BACKEND
from .data import (GroundTruth, SplitDataset, SurvivalData, SurvivalRecord, TimeScale,
                   fit_time_scale, generate_synthetic, load_csv, split)
from .hermite import BasisSpec, eval_basis_row, eval_hermite_function, eval_normalized_hermite
from .metrics import (KaplanMeierCurve, MetricsReport, brier_at, event_time_quantiles,
                      evaluate_predictions, harrell_c_index, integrated_brier, km_estimate,
                      td_c_index)
from .model import (CoefficientOutput, FittedModel, ModelConfig, NetworkParams, cdf, cif,
                    density, forward, hazard, init_params, survival)
from .quadrature import QuadratureRule, antiderivative_at, build_rule
from .training import (TrainConfig, adam_step, grad_check, gradients, likelihood_loss,
                       ranking_loss, total_loss, train)
