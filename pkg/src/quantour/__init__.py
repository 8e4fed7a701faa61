"""Directional quantile envelopes, allometric ratios and ratio-based risk classification."""

from ._accel import backend_name
from .allometry import (AllometricFit, RatioCutoff, allometric_direction, fit_allometric, ratio,
                        ratio_cutoff, slope_homogeneity, tangent_lines)
from .cohort import Cohort, SyntheticSpec, generate, load_csv
from .dqe import Direction, Envelope, build_envelope, conditional_envelopes, contains, directional_quantile
from .multiallometry import multi_ratio, pca_allometry
from .quantile_core import empirical_quantile, quantile_regression
from .riskmodel import (CutoffTable, GrowthCategory, RatioStratum, build_cutoffs, classify, classify_cohort,
                        fit_glm, risk_table)

__version__ = "0.1.0"
