"""Posterior and prior homogeneity of non-connected regions, and gene calls.

For a region ``g`` (a gene's exonic probes) and group ``k``

* ``Q_X[k] = P(Z_t = k for every exonic t | X, C)``
* ``Q_prior[k] = P(Z_t = k for every exonic t | C)``

are computed exactly by re-running the scaled forward recursion over the
gene span with the exonic probes restricted to state ``k`` (introns stay
free).  Everything is accumulated in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ._kernels import constrained_pass_kernel
from .data_io import GeneStructure, ProbeSeries
from .hmm import GROUP_NAMES, K, ModelParams, PosteriorTable, forward_backward


@dataclass(frozen=True, eq=False)
class RegionPosterior:
    gene_id: str
    log_q_x: np.ndarray
    log_q_prior: np.ndarray
    n_probes: int
    n_exons: int

    @property
    def q_x(self) -> np.ndarray:
        return np.exp(self.log_q_x)

    @property
    def q_prior(self) -> np.ndarray:
        return np.exp(self.log_q_prior)

    @property
    def homogeneity(self) -> float:
        return float(self.q_x.sum())

    @property
    def raw_log_ratio(self) -> float:
        return raw_log_ratio(self.log_q_x, self.log_q_prior)


def _span(gene: GeneStructure, n: int) -> tuple[int, int, np.ndarray]:
    start, stop = gene.start, gene.stop
    if start < 0 or stop > n:
        raise IndexError(f"gene {gene.gene_id}: probe interval [{start}, {stop}) outside series of length {n}")
    mask = np.zeros(stop - start, dtype=np.bool_)
    for a, b in gene.exons:
        mask[a - start : b - start] = True
    return start, stop, mask


def log_region_posterior(series: ProbeSeries, params: ModelParams, gene: GeneStructure,
                         posterior: PosteriorTable | None = None) -> np.ndarray:
    """``log Q_X[k]`` for the four groups."""
    if posterior is None or posterior.alpha is None:
        posterior = forward_backward(series, params)
    start, stop, mask = _span(gene, len(series))
    chains = params.chain_index(series.category)
    trans = params.chain_matrices
    init = params.initial[chains[0]]
    prev = posterior.alpha[start - 1] if start > 0 else init
    return constrained_pass_kernel(
        np.ascontiguousarray(prev),
        np.ascontiguousarray(init),
        trans,
        np.ascontiguousarray(chains[start:stop]),
        np.ascontiguousarray(posterior.phi[start:stop]),
        np.ascontiguousarray(posterior.scale[start:stop]),
        mask,
        np.ascontiguousarray(posterior.beta[stop - 1]),
        start == 0,
    )


def region_posterior(series, params, gene, posterior=None) -> np.ndarray:
    """``Q_X[k] = P(all exonic probes of gene in group k | X, C)``."""
    return np.exp(log_region_posterior(series, params, gene, posterior))


def log_region_prior(params: ModelParams, gene: GeneStructure, categories: np.ndarray) -> np.ndarray:
    """``log Q_prior[k]``: the chain starts from the stationary law of the
    first exonic probe's category and intron states are summed out."""
    categories = np.asarray(categories, dtype=np.int64)
    start, stop, mask = _span(gene, len(categories))
    chains = params.chain_index(categories[start:stop])
    m = stop - start
    return constrained_pass_kernel(
        np.zeros(K),
        np.ascontiguousarray(params.initial[chains[0]]),
        params.chain_matrices,
        np.ascontiguousarray(chains),
        np.ones((m, K)),
        np.ones(m),
        mask,
        np.ones(K),
        True,
    )


def region_prior(params, gene, categories) -> np.ndarray:
    return np.exp(log_region_prior(params, gene, categories))


def displayed_prior_product(params: ModelParams, gene: GeneStructure, exon_chain: int, intron_chain: int) -> np.ndarray:
    """Closed product ``m^E_k (pi^E_kk)^(L-1) prod_q [(pi^I)^gap_q]_kk``.

    Exact for single-exon genes of one category.  With introns it treats
    the step from the last intron probe into the next exon as an exon
    self-transition, so it differs from :func:`region_prior`.
    """
    pe = params.chain_matrices[exon_chain]
    pi_ = params.chain_matrices[intron_chain]
    m = params.initial[exon_chain]
    exonic = gene.n_probes
    out = m * np.diagonal(pe) ** (exonic - 1)
    for (a0, b0), (a1, b1) in zip(gene.exons[:-1], gene.exons[1:]):
        out = out * np.diagonal(np.linalg.matrix_power(pi_, a1 - b0))
    return out


def raw_log_ratio(log_q_x, log_q_prior) -> float:
    """``log sum_k Q_X[k] - log sum_k Q_prior[k]`` (``-inf`` if the posterior mass underflows)."""
    num = float(logsumexp(log_q_x))
    den = float(logsumexp(log_q_prior))
    if not np.isfinite(den):
        raise ValueError("prior homogeneity mass is zero")
    return num - den if np.isfinite(num) else -math.inf


@dataclass(frozen=True)
class LengthCorrection:
    intercept: float = 0.0
    per_probe: float = 0.0
    per_exon: float = 0.0

    def predict(self, n_probes, n_exons):
        return self.intercept + self.per_probe * np.asarray(n_probes) + self.per_exon * np.asarray(n_exons)


def fit_length_correction(raw, n_probes, n_exons) -> LengthCorrection:
    """Least-squares line of raw log-ratios on exonic probe count and exon count.

    Genes with non-finite ratios are ignored.  A covariate that is constant
    or collinear with the others is dropped (coefficient 0) with a warning.
    """
    raw = np.asarray(raw, dtype=float)
    ok = np.isfinite(raw)
    if ok.sum() < 3:
        raise ValueError("length correction needs at least 3 genes with a finite log-ratio")
    cols = {
        "per_probe": np.asarray(n_probes, dtype=float)[ok],
        "per_exon": np.asarray(n_exons, dtype=float)[ok],
    }
    y = raw[ok]
    kept = []
    for name, col in cols.items():
        design = np.column_stack([np.ones(len(y))] + [cols[c] for c in kept] + [col])
        if np.linalg.matrix_rank(design) == design.shape[1]:
            kept.append(name)
        else:
            warnings.warn(f"length correction: covariate {name} is collinear; dropped")
    design = np.column_stack([np.ones(len(y))] + [cols[c] for c in kept])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    values = {"intercept": float(coef[0])}
    values.update({name: float(c) for name, c in zip(kept, coef[1:])})
    return LengthCorrection(**values)


def unistatus(log_q_x, log_q_prior, n_probes: int, n_exons: int,
              correction: LengthCorrection = LengthCorrection()) -> float:
    """Length-corrected log-ratio of posterior to prior homogeneity mass."""
    raw = raw_log_ratio(log_q_x, log_q_prior)
    if not np.isfinite(raw):
        return -math.inf
    return float(raw - correction.predict(n_probes, n_exons))


@dataclass(frozen=True, eq=False)
class GeneReport:
    gene_id: str
    q_x: np.ndarray
    q_prior: np.ndarray
    raw_log_ratio: float
    unistatus: float
    homogeneous: bool
    assigned_class: int | None  # 0-based group, None when heterogeneous
    conditional: np.ndarray | None

    @property
    def class_name(self) -> str:
        return GROUP_NAMES[self.assigned_class] if self.homogeneous else "heterogeneous"


def classify_gene(gene_id: str, log_q_x, log_q_prior, unistatus_value: float,
                  threshold: float = 0.0) -> GeneReport:
    """Two-step call: homogeneity test on unistatus, then argmax of ``Q_X / sum Q_X``."""
    log_q_x = np.asarray(log_q_x, dtype=float)
    homogeneous = bool(unistatus_value > threshold) and bool(np.isfinite(log_q_x).any())
    conditional = None
    cls = None
    if homogeneous:
        shifted = np.exp(log_q_x - log_q_x.max())
        conditional = shifted / shifted.sum()
        cls = int(np.argmax(conditional))
    raw = raw_log_ratio(log_q_x, log_q_prior)
    return GeneReport(
        gene_id=gene_id,
        q_x=np.exp(log_q_x),
        q_prior=np.exp(np.asarray(log_q_prior, dtype=float)),
        raw_log_ratio=raw,
        unistatus=float(unistatus_value),
        homogeneous=homogeneous,
        assigned_class=cls,
        conditional=conditional,
    )


def region_posteriors(series: ProbeSeries, params: ModelParams, genes: Sequence[GeneStructure],
                      posterior: PosteriorTable | None = None) -> list[RegionPosterior]:
    if posterior is None or posterior.alpha is None:
        posterior = forward_backward(series, params)
    out = []
    for g in genes:
        out.append(
            RegionPosterior(
                g.gene_id,
                log_region_posterior(series, params, g, posterior),
                log_region_prior(params, g, series.category),
                g.n_probes,
                g.n_exons,
            )
        )
    return out


def classify_genes(regions: Sequence[RegionPosterior], threshold: float = 0.0,
                   correction: LengthCorrection | None = None) -> tuple[list[GeneReport], LengthCorrection]:
    """Fit the length correction on all regions (unless given) and call every gene."""
    if correction is None:
        correction = fit_length_correction(
            [r.raw_log_ratio for r in regions],
            [r.n_probes for r in regions],
            [r.n_exons for r in regions],
        )
    reports = [
        classify_gene(
            r.gene_id, r.log_q_x, r.log_q_prior,
            unistatus(r.log_q_x, r.log_q_prior, r.n_probes, r.n_exons, correction),
            threshold,
        )
        for r in regions
    ]
    return reports, correction


def expressed_runs(labels, categories, allowed_categories, min_length: int = 2,
                   expressed=(1, 2, 3)) -> list[tuple[int, int, int]]:
    """Maximal runs of consecutive expressed probes inside the allowed categories.

    Returns ``(start, stop, majority_label)`` with ``stop`` exclusive;
    majority ties go to the lower group.
    """
    labels = np.asarray(labels)
    hit = np.isin(labels, expressed) & np.isin(np.asarray(categories), list(allowed_categories))
    runs = []
    edges = np.diff(np.concatenate([[0], hit.astype(np.int8), [0]]))
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if b - a >= min_length:
            major = int(np.bincount(labels[a:b], minlength=K).argmax())
            runs.append((int(a), int(b), major))
    return runs
