"""Annotation-heterogeneous hidden Markov models over probe series.

Four sub-models share the constrained emission law and differ in how the
hidden group sequence is modelled:

====  ==============  ============  =========================================
name  use_annotation  use_markov    hidden process
====  ==============  ============  =========================================
m1    no              no            one mixing vector (plain mixture)
m2    no              yes           one transition matrix
m3    yes             no            one mixing vector per category
m4    yes             yes           one transition matrix per category
====  ==============  ============  =========================================

Transitions into probe ``t`` use the category of probe ``t``.  A Markov
chain starts from the stationary law of the first probe's matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import entr, logsumexp, xlogy

from . import emission as em
from ._kernels import forward_backward_kernel
from .data_io import ProbeSeries

K = em.K
GROUP_NAMES = ("noise", "identical", "over", "under")
TRANSITION_PSEUDOCOUNT = 1e-10


class NumericalFailure(RuntimeError):
    def __init__(self, message, probe=None, iteration=None):
        super().__init__(message)
        self.probe = probe
        self.iteration = iteration


@dataclass(frozen=True)
class ModelSpec:
    use_annotation: bool = True
    use_markov: bool = True
    n_categories: int = 3

    @property
    def name(self) -> str:
        return {(False, False): "m1", (False, True): "m2", (True, False): "m3", (True, True): "m4"}[
            (self.use_annotation, self.use_markov)
        ]

    @property
    def n_chains(self) -> int:
        """Number of distinct transition matrices / mixing vectors."""
        return self.n_categories if self.use_annotation else 1

    @classmethod
    def from_name(cls, name: str, n_categories: int = 3) -> ModelSpec:
        flags = {"m1": (False, False), "m2": (False, True), "m3": (True, False), "m4": (True, True)}
        try:
            ann, markov = flags[name.lower()]
        except KeyError:
            raise ValueError(f"unknown model {name!r}; expected one of m1, m2, m3, m4") from None
        return cls(ann, markov, n_categories)

    def n_free_parameters(self) -> int:
        """8 means + 3 angles + 4 leading eigenvalues + 1 shared eigenvalue,
        plus K(K-1) per transition matrix or K-1 per mixing vector."""
        per_chain = K * (K - 1) if self.use_markov else K - 1
        return 16 + self.n_chains * per_chain


def _check_primitive(pi: np.ndarray) -> None:
    support = pi > 0
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    if n_comp != 1:
        raise ValueError(
            "transition matrix is reducible; add a small smoothing mass to every entry"
        )
    # Wielandt: a primitive k x k matrix has a strictly positive power (k-1)^2 + 1
    power = np.eye(len(pi), dtype=bool)
    for _ in range((len(pi) - 1) ** 2 + 1):
        power = (power.astype(np.int64) @ support.astype(np.int64)) > 0
    if not power.all():
        raise ValueError(
            "transition matrix is periodic; add a small smoothing mass to every entry"
        )


def stationary_distribution(pi) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix, normalised to sum 1."""
    pi = np.asarray(pi, dtype=float)
    k = len(pi)
    if pi.shape != (k, k) or np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("expected a square row-stochastic matrix")
    _check_primitive(pi)
    a = pi.T - np.eye(k)
    a[-1, :] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    m = np.linalg.solve(a, rhs)
    # one step of refinement on the residual keeps m pi = m at machine precision
    m = m + np.linalg.solve(a, rhs - a @ m)
    m = np.clip(m, 0.0, None)
    return m / m.sum()


def mean_sojourn(pi_kk: float) -> float:
    """Expected run length ``1 / (1 - pi_kk)``; ``inf`` when ``pi_kk == 1``."""
    if not 0.0 <= pi_kk <= 1.0:
        raise ValueError(f"self-transition probability must lie in [0, 1], got {pi_kk}")
    if pi_kk == 1.0:
        return math.inf
    return 1.0 / (1.0 - pi_kk)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Emission law plus transitions.

    ``transitions`` has shape (n_chains, K, K) for Markov specs and
    (n_chains, K) for mixture specs.
    """

    spec: ModelSpec
    emissions: em.ConstrainedGaussianSet
    transitions: np.ndarray

    def __post_init__(self):
        tr = np.array(self.transitions, dtype=float)
        shape = (self.spec.n_chains, K, K) if self.spec.use_markov else (self.spec.n_chains, K)
        if tr.shape != shape:
            raise ValueError(f"transitions for {self.spec.name} must have shape {shape}, got {tr.shape}")
        if np.any(tr < 0) or not np.all(np.isfinite(tr)):
            raise ValueError("transition probabilities must be finite and non-negative")
        sums = tr.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")
        # exact rows are kept bit-for-bit so serialized parameters round-trip
        tr = np.where(np.abs(sums - 1.0)[..., None] > 1e-12, tr / sums[..., None], tr)
        tr.setflags(write=False)
        object.__setattr__(self, "transitions", tr)

    @cached_property
    def initial(self) -> np.ndarray:
        """Group proportions per chain: stationary law or mixing vector."""
        if self.spec.use_markov:
            return np.stack([stationary_distribution(p) for p in self.transitions])
        return self.transitions.copy()

    @cached_property
    def chain_matrices(self) -> np.ndarray:
        """Transition matrices, with a mixture written as rows all equal to its mixing vector."""
        if self.spec.use_markov:
            return np.ascontiguousarray(self.transitions)
        return np.ascontiguousarray(np.repeat(self.transitions[:, None, :], K, axis=1))

    def chain_index(self, categories: np.ndarray) -> np.ndarray:
        categories = np.asarray(categories, dtype=np.int64)
        if not self.spec.use_annotation:
            return np.zeros(len(categories), dtype=np.int64)
        if len(categories) and categories.max() >= self.spec.n_categories:
            raise ValueError("probe category outside the model's categories")
        return categories

    def replace(self, **changes) -> ModelParams:
        fields = dict(spec=self.spec, emissions=self.emissions, transitions=self.transitions)
        fields.update(changes)
        return ModelParams(**fields)

    def sojourn_table(self) -> np.ndarray:
        """Mean run length per chain and group."""
        if self.spec.use_markov:
            diag = np.diagonal(self.transitions, axis1=1, axis2=2)
        else:
            diag = self.transitions
        return np.vectorize(mean_sojourn)(np.clip(diag, 0.0, 1.0))


@dataclass(eq=False)
class PosteriorTable:
    """Smoothed posteriors of one series.

    ``xi`` (pairwise posteriors, shape (n-1, K, K)) is only filled on
    request; ``xi_counts`` holds its sums per chain.  ``alpha``, ``beta``,
    ``phi`` and ``scale`` are the scaled forward/backward quantities reused
    by region queries.
    """

    tau: np.ndarray
    loglik: float
    xi: np.ndarray | None = None
    xi_counts: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    phi: np.ndarray | None = None
    scale: np.ndarray | None = None


def _emission_logs(series: ProbeSeries, params: ModelParams) -> np.ndarray:
    return np.ascontiguousarray(em.log_densities(params.emissions, series.x))


def forward_backward(series: ProbeSeries, params: ModelParams, return_xi: bool = False) -> PosteriorTable:
    """Exact smoothed posteriors of the hidden chain, with per-step scaling."""
    chains = params.chain_index(series.category)
    init = params.initial[chains[0]]
    alpha, beta, phi, c, log_c, tau, xi_counts, xi, fail = forward_backward_kernel(
        _emission_logs(series, params), params.chain_matrices, chains, init, return_xi
    )
    if fail >= 0:
        raise NumericalFailure(
            f"chromosome {series.chromosome}: zero likelihood at probe index {fail} "
            f"(position {series.position[fail]})",
            probe=int(fail),
        )
    return PosteriorTable(
        tau=tau,
        loglik=float(log_c.sum()),
        xi=xi if return_xi else None,
        xi_counts=xi_counts,
        alpha=alpha,
        beta=beta,
        phi=phi,
        scale=c,
    )


def e_step_mixture(series: ProbeSeries, params: ModelParams) -> PosteriorTable:
    """Posteriors under independent groups: ``tau_tk ∝ pi_k^{C_t} phi_k(x_t)``."""
    chains = params.chain_index(series.category)
    weights = params.initial[chains]
    with np.errstate(divide="ignore"):
        joint = np.log(weights) + _emission_logs(series, params)
    norm = logsumexp(joint, axis=1)
    bad = np.flatnonzero(~np.isfinite(norm))
    if bad.size:
        raise NumericalFailure(
            f"chromosome {series.chromosome}: zero likelihood at probe index {bad[0]}",
            probe=int(bad[0]),
        )
    return PosteriorTable(tau=np.exp(joint - norm[:, None]), loglik=float(norm.sum()))


def e_step(series: ProbeSeries, params: ModelParams) -> PosteriorTable:
    if params.spec.use_markov:
        return forward_backward(series, params)
    return e_step_mixture(series, params)


def _as_list(series) -> list[ProbeSeries]:
    return [series] if isinstance(series, ProbeSeries) else list(series)


def m_step_transitions(posteriors, series, spec: ModelSpec, prev: np.ndarray | None = None) -> np.ndarray:
    """Closed-form transition / mixing update from one or several posterior tables.

    A chain without any informative probe keeps its value from ``prev``
    (uniform if ``prev`` is None) and a warning is emitted.
    """
    posteriors = [posteriors] if isinstance(posteriors, PosteriorTable) else list(posteriors)
    series = _as_list(series)
    nc = spec.n_chains
    if spec.use_markov:
        counts = np.zeros((nc, K, K))
        for post, s in zip(posteriors, series):
            if post.xi_counts is not None:
                xc = post.xi_counts
            else:
                xc = np.zeros((nc, K, K))
                chains = np.zeros(len(s), dtype=np.int64) if not spec.use_annotation else s.category
                for t in range(1, len(s)):
                    xc[chains[t]] += post.xi[t - 1]
            if xc.shape[0] != nc:
                xc = xc.sum(axis=0, keepdims=True) if nc == 1 else xc
            counts += xc
        totals = counts.sum(axis=(1, 2))
        counts = counts + TRANSITION_PSEUDOCOUNT
        new = counts / counts.sum(axis=2, keepdims=True)
    else:
        counts = np.zeros((nc, K))
        totals = np.zeros(nc)
        for post, s in zip(posteriors, series):
            chains = s.category if spec.use_annotation else np.zeros(len(s), dtype=np.int64)
            np.add.at(counts, chains, post.tau)
            totals += np.bincount(chains, minlength=nc)[:nc]
        with np.errstate(invalid="ignore", divide="ignore"):
            new = counts / totals[:, None]
    for p in np.flatnonzero(totals <= 0):
        warnings.warn(f"category {p} has no probes to estimate its transitions; kept previous value")
        if prev is not None:
            new[p] = prev[p]
        else:
            new[p] = np.full(new.shape[1:], 1.0 / K)
    return new


@dataclass(frozen=True)
class StopCriteria:
    tol: float = 1e-6
    max_iter: int = 500
    restarts: int = 3
    seed: int = 0


@dataclass(eq=False)
class FitReport:
    params: ModelParams
    posteriors: list[PosteriorTable]
    loglik_trace: list[float]
    n_obs: int
    converged: bool
    restarts_used: int = 0

    @property
    def spec(self) -> ModelSpec:
        return self.params.spec

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def n_iter(self) -> int:
        return len(self.loglik_trace) - 1

    @property
    def n_params(self) -> int:
        return self.spec.n_free_parameters()

    @property
    def tau(self) -> np.ndarray:
        return np.concatenate([p.tau for p in self.posteriors])

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * math.log(self.n_obs)

    @property
    def entropy(self) -> float:
        return float(entr(self.tau).sum())

    @property
    def icl(self) -> float:
        return self.bic + 2.0 * self.entropy

    @property
    def proportions(self) -> np.ndarray:
        return self.params.initial

    @property
    def sojourn(self) -> np.ndarray:
        return self.params.sojourn_table()


SEED_QUANTILES = ((0.25, 0.75), (0.1, 0.9), (0.05, 0.95))


def _quantile_seeds(x: np.ndarray, levels=(0.25, 0.75)) -> np.ndarray:
    lo = np.quantile(x, levels[0], axis=0)
    hi = np.quantile(x, levels[1], axis=0)
    return np.array([[lo[0], lo[1]], [hi[0], hi[1]], [hi[0], lo[1]], [lo[0], hi[1]]])


def initialize(series, spec: ModelSpec, seed: int | None = None, jitter: float = 0.0,
               levels=(0.25, 0.75)) -> ModelParams:
    """Data-driven starting point.

    Means start at the ``levels`` quantile corners of the two channels
    (noise low/low, identical high/high, group 3 high/low, group 4
    low/high) and are
    refined by a few Lloyd iterations; every group gets the orientation and
    eigenvalues of the pooled within-group scatter.  Transitions start at
    0.7 on the diagonal and 0.1 elsewhere, mixing vectors at 1/4.
    """
    x = np.concatenate([s.x for s in _as_list(series)])
    centers = _quantile_seeds(x, levels)
    spread = x.std(axis=0)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        centers = centers + jitter * spread * rng.standard_normal(centers.shape)
    for _ in range(10):
        dist = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
        lab = dist.argmin(axis=1)
        for k in range(K):
            if np.any(lab == k):
                centers[k] = x[lab == k].mean(axis=0)
    dev = x - centers[lab]
    pooled = dev.T @ dev / len(x)
    vals, vecs = np.linalg.eigh(pooled)
    lead = vecs[:, 1]
    theta = em.normalize_angle(np.arctan2(lead[1], lead[0]))
    u2 = max(vals[0], em.U2_FLOOR)
    u1 = max(vals[1], 1.5 * u2)
    emissions = em.ConstrainedGaussianSet(
        mu=centers, theta12=theta, theta3=theta, theta4=theta, u1=np.full(K, u1), u2=u2
    )
    if spec.use_markov:
        base = np.full((K, K), 0.1) + np.eye(K) * 0.6
        transitions = np.repeat(base[None], spec.n_chains, axis=0)
    else:
        transitions = np.full((spec.n_chains, K), 1.0 / K)
    return ModelParams(spec, emissions, transitions)


def _transition_objective(params_tr: np.ndarray, spec, counts, first_tau, first_chain) -> float:
    """Transition part of the auxiliary function, including the initial-state term."""
    if spec.use_markov:
        value = float(xlogy(counts, params_tr).sum())
        for tau0, p in zip(first_tau, first_chain):
            value += float(xlogy(tau0, stationary_distribution(params_tr[p])).sum())
        return value
    return float(xlogy(counts, params_tr).sum())


def _transition_update(posts, series_list, params: ModelParams) -> np.ndarray:
    """Closed-form update, safeguarded so the full auxiliary function never drops.

    The closed form ignores the dependence of the stationary initial law on
    the matrix; when that term would make the update worse, the step is
    shortened by halving toward the previous matrices.
    """
    spec = params.spec
    old = params.transitions
    new = m_step_transitions(posts, series_list, spec, prev=old)
    if not spec.use_markov:
        return new
    counts = sum(p.xi_counts for p in posts)
    first_tau = [p.tau[0] for p in posts]
    first_chain = [int(params.chain_index(s.category[:1])[0]) for s in series_list]
    base = _transition_objective(old, spec, counts, first_tau, first_chain)
    step = 1.0
    for _ in range(40):
        cand = old + step * (new - old)
        try:
            if _transition_objective(cand, spec, counts, first_tau, first_chain) >= base:
                return cand
        except (ValueError, np.linalg.LinAlgError):
            pass
        step *= 0.5
    return old


def _em_run(series_list, params: ModelParams, stop: StopCriteria) -> FitReport:
    trace = []
    converged = False
    x = np.concatenate([s.x for s in series_list])
    it = 0
    while True:
        try:
            posts = [e_step(s, params) for s in series_list]
        except NumericalFailure as exc:
            exc.iteration = it
            raise
        ll = float(sum(p.loglik for p in posts))
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) < stop.tol * abs(ll):
            converged = True
            break
        if it >= stop.max_iter:
            break
        tau = np.concatenate([p.tau for p in posts])
        scatter = em.accumulate_scatter(x, tau)
        emissions = em.m_step(scatter, params.emissions)
        params = ModelParams(params.spec, emissions, _transition_update(posts, series_list, params))
        it += 1
    return FitReport(params, posts, trace, len(x), converged)


def _burn_in(series_list, params, stop, iters):
    return _em_run(series_list, params, StopCriteria(tol=0.0, max_iter=iters, restarts=0, seed=stop.seed))


def fit(series, spec: ModelSpec, init: ModelParams | None = None, stop: StopCriteria = StopCriteria(),
        n_starts: int = 1, burn_in: int = 15) -> FitReport:
    """Fit a sub-model by EM.

    ``series`` is one :class:`ProbeSeries` or a list of them; several series
    are treated as independent chains sharing all parameters.

    Without ``init`` the starting points are the quantile-corner seeds of
    :func:`initialize` at each level of ``SEED_QUANTILES`` (times
    ``n_starts`` jittered copies); each runs ``burn_in`` EM iterations and
    the best one by log-likelihood is continued to convergence.  An empty
    group triggers a jittered re-initialisation, at most ``stop.restarts``
    times.
    """
    series_list = _as_list(series)
    if not series_list:
        raise ValueError("no probe series to fit")
    if init is not None:
        starts = [init]
    else:
        starts = [
            initialize(series_list, spec, seed=stop.seed + 1000 * j + i, jitter=0.0 if j == 0 else 0.25,
                       levels=levels)
            for j in range(n_starts)
            for i, levels in enumerate(SEED_QUANTILES)
        ]
    attempt = 0
    best = None
    for params in starts:
        if len(starts) > 1:
            try:
                trial = _burn_in(series_list, params, stop, burn_in)
            except em.DegenerateGroupError:
                continue
            if best is None or trial.loglik > best.loglik:
                best = trial
        else:
            best = FitReport(params, [], [-math.inf], 0, False)
    params = best.params if best is not None else starts[0]
    while True:
        try:
            report = _em_run(series_list, params, stop)
            report.restarts_used = attempt
            return report
        except em.DegenerateGroupError:
            attempt += 1
            if attempt > stop.restarts:
                raise
            params = initialize(series_list, spec, seed=stop.seed + attempt, jitter=0.25)


def model_selection(reports: Sequence[FitReport]) -> dict[str, list[str]]:
    """Model names ranked by ascending BIC and ICL; ties keep name order."""
    ordered = sorted(reports, key=lambda r: r.spec.name)
    return {
        "bic": [r.spec.name for r in sorted(ordered, key=lambda r: r.bic)],
        "icl": [r.spec.name for r in sorted(ordered, key=lambda r: r.icl)],
    }


def classify_probes(tau) -> tuple[np.ndarray, np.ndarray]:
    """Most probable group per probe (0-based) and a flag for exact ties."""
    tau = np.asarray(tau, dtype=float)
    labels = tau.argmax(axis=1)
    top = tau[np.arange(len(tau)), labels]
    ties = (tau == top[:, None]).sum(axis=1) > 1
    return labels, ties


def params_to_text(params: ModelParams, category_names: Sequence[str] | None = None) -> str:
    """Flat ``key = value`` text; floats are written with full precision."""
    spec = params.spec
    if category_names is None:
        category_names = [str(p + 1) for p in range(spec.n_categories)]
    chain_names = list(category_names) if spec.use_annotation else ["all"]
    lines = [
        f"model = {spec.name}",
        f"categories = {','.join(category_names)}",
    ]
    lines += [f"{key} = {value!r}" for key, value in em.emission_to_items(params.emissions)]
    for p, name in enumerate(chain_names):
        if spec.use_markov:
            for k in range(K):
                for l in range(K):
                    lines.append(f"pi.{name}.{k + 1}.{l + 1} = {float(params.transitions[p, k, l])!r}")
        else:
            for k in range(K):
                lines.append(f"pi.{name}.{k + 1} = {float(params.transitions[p, k])!r}")
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def params_from_text(text: str) -> tuple[ModelParams, tuple[str, ...]]:
    return params_from_values(parse_key_values(text))


def params_from_values(values: dict[str, str]) -> tuple[ModelParams, tuple[str, ...]]:
    if "model" not in values or "categories" not in values:
        raise ValueError("parameter text needs 'model' and 'categories' entries")
    names = tuple(c for c in values["categories"].split(",") if c)
    spec = ModelSpec.from_name(values["model"], len(names))
    emissions = em.emission_from_items(values)
    chain_names = list(names) if spec.use_annotation else ["all"]
    try:
        if spec.use_markov:
            tr = [[[float(values[f"pi.{c}.{k}.{l}"]) for l in range(1, K + 1)] for k in range(1, K + 1)]
                  for c in chain_names]
        else:
            tr = [[float(values[f"pi.{c}.{k}"]) for k in range(1, K + 1)] for c in chain_names]
    except KeyError as exc:
        raise ValueError(f"missing transition parameter {exc.args[0]}") from None
    return ModelParams(spec, emissions, np.array(tr)), names
