"""Unsupervised four-group classification of two-sample tiling-array data."""

from .data_io import (
    GeneStructure,
    IngestionError,
    Probe,
    ProbeSeries,
    load_gene_structures,
    load_probe_series,
    normalize_dyeswap,
    write_gene_structures,
    write_probe_series,
)
from .emission import ConstrainedGaussianSet, ScatterSet, accumulate_scatter, log_density, log_densities
from .hmm import (
    GROUP_NAMES,
    FitReport,
    ModelParams,
    ModelSpec,
    PosteriorTable,
    StopCriteria,
    classify_probes,
    e_step_mixture,
    fit,
    forward_backward,
    mean_sojourn,
    model_selection,
    stationary_distribution,
)
from .region import (
    GeneReport,
    classify_gene,
    fit_length_correction,
    region_posterior,
    region_prior,
    unistatus,
)
from .simulate import SimScenario, sample_emissions, sample_states, simulate

__version__ = "0.1.0"
