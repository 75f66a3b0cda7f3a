"""Local-asymptotic analysis of estimators and specification tests.

The library represents distributions on finite support so that score-space
projections are exact, constructs local deviation paths, implements
efficient GMM / OLS / 2SLS and the overidentification and estimator-contrast
tests, predicts asymptotic bias and local power in closed form, and verifies
those predictions by Monte Carlo.
"""

from .chi2 import TestStatistic, chisq_quantile, local_power, noncentral_chisq_cdf
from .dist import (
    Dataset,
    DiscreteDistribution,
    draw_sample,
    expectation,
    make_distribution,
    replication_seed,
    same_distribution,
    variance,
)
from .gmm import (
    GmmEstimate,
    efficient_influence,
    estimate_gmm,
    j_statistic,
    kl_projection,
    population_dataset,
)
from .instances import (
    GmmInstance,
    IvInstance,
    g1_instance,
    instance_by_name,
    iv1_instance,
    linear_iv_moment_model,
    overidentified_mean_model,
    resolve_score,
    tangent_bases,
    three_way_bases,
)
from .iv import (
    IVDataset,
    LinearEstimate,
    dwh_statistic,
    estimate_2sls,
    estimate_ols,
    hausman_contrast_basis,
    iv_efficient_scores,
    iv_influence_functions,
    iv_predicted_biases,
    ivdataset_from_rows,
)
from .mc import (
    ComparisonReport,
    ExperimentConfig,
    ExperimentSummary,
    compare_to_theory,
    run_experiment,
)
from .models import IVModel, MomentModel
from .paths import (
    LocalPath,
    hellinger_residual,
    log_likelihood_ratio,
    numerical_score,
    path_distribution,
    sample_local,
)
from .predict import (
    Prediction,
    TestPrediction,
    build_prediction,
    hall_split,
    hausman_noncentrality,
    j_noncentrality,
    predicted_bias,
    with_noncentrality,
)
from .scores import (
    DecompositionReport,
    ScoreFunction,
    SubspaceBasis,
    centered_score,
    decompose_score,
    gmm_tangent_basis,
    inner_product,
    iv_tangent_bases,
    orthonormal_basis,
    project,
    zero_score,
)

__version__ = "0.1.0"
