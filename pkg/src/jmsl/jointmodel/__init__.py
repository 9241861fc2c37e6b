from .likelihood import (
    association_features,
    cumulative_hazard,
    functional_form,
    linear_predictor,
    linear_predictor_slope,
    log_hazard,
    log_likelihood_subject,
    log_prior,
    log_prior_terms,
)
from .mcmc import MCMCConfig, PosteriorDraws, batch_means_se, fit_mcmc, sample_tau, tau_conditional
from .model import (
    ExtrapolationWarning,
    FormSpec,
    JointModel,
    JointModelSpec,
    ParameterVector,
    PriorSpec,
    baseline_basis_from_data,
)
