"""Copula-based mixture models identified with GICE, plus GMM/K-Means baselines."""

from cbmm.baselines import GmmModel, bic, gmm_em_fit, gmm_to_cbmm, kmeans, select_k_bic
from cbmm.copulas import ALL_COPULAS, CopulaFamily, CopulaSpec
from cbmm.exceptions import (
    CbmmError,
    CollapseError,
    DegenerateDataError,
    DomainError,
    FitError,
    InsufficientDataError,
    ParameterDomainError,
    SelectionError,
    UndefinedPosteriorError,
)
from cbmm.gice import FitTrace, GiceConfig, convergence_index, gice_fit
from cbmm.marginals import ALL_MARGINALS, MarginalFamily, MarginalSpec
from cbmm.metrics import accuracy, error_ratio, kolmogorov_distance_2d, mean_silhouette
from cbmm.mixture import Cbmm, Component, mixture_cdf, mixture_density, posterior, simulate

__version__ = "0.1.0"
