"""Gaussian mixtures as a data type for uncertain quantities.

Closed-form algebra (convolution, fusion, mixing, marginals, conditionals,
L2 distance), seeded sampling, EM fitting with AIC/BIC selection, mixture
reduction, and measurement-system posteriors.
"""

__version__ = "0.1.0"

from .errors import (
    DimensionError,
    DisjointSupportError,
    FormatError,
    GmmError,
    NumericalError,
    SingularCovarianceError,
    ValidationError,
)
from .core import (
    BlockIndex,
    GaussianComponent,
    GaussianMixture,
    MomentSummary,
    affine,
    gaussian_fallback,
    logpdf,
    moments,
    param_count,
    pdf,
    validate,
)
from .algebra import (
    FusionResult,
    SourceWeights,
    condition,
    convolve,
    fuse,
    l2_distance,
    marginalize,
    mix,
    negate,
    overlap_matrix,
)
from .sampling import SampleBatch, SeededStream, box_muller, sample_gaussian, sample_gmm, sample_points
from .fitting import Dataset, EmConfig, FitReport, ModelSelection, em_fit, log_likelihood, select_model
from .reduction import ReductionReport, moment_match_merge, reduce
from .measurement import (
    Box,
    ConditionalStats,
    CurveSpec,
    MeasurementModel,
    Predicate,
    QcEstimate,
    conditional_stats,
    fit_device,
    posterior_from_observation,
    propagate_product,
    qc_probability,
    simulate_device,
    validation_norms,
)
from .fileformat import GmmDocument, UnsupportedVersionError, parse, read_gmm, serialize, write_gmm
