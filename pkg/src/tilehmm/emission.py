"""Four bivariate Gaussian groups with constrained covariances.

Each covariance is written ``Sigma_k = D_k diag(u1[k], u2) D_k'`` where
``D_k`` is the rotation by angle ``theta_k``:

* groups 1 and 2 (noise, identical) share one orientation ``theta12``;
* groups 3 and 4 have free orientations ``theta3`` and ``theta4``;
* the second eigenvalue ``u2`` is common to all groups and ``u1[k] > u2``.

Groups are indexed 0..3 in arrays; the first column of ``D_k`` is the
leading eigenvector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

K = 4
LOG_2PI = float(np.log(2.0 * np.pi))
EIG_MARGIN = 1e-6  # u1 >= u2 * (1 + EIG_MARGIN) after repair
U2_FLOOR = 1e-8
MIN_GROUP_WEIGHT = 1e-8


class DegenerateGroupError(ValueError):
    """A mixture group received (numerically) zero posterior weight."""

    def __init__(self, group: int, weight: float):
        super().__init__(f"group {group + 1} is empty (effective count {weight:.3g})")
        self.group = group
        self.weight = weight


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def normalize_angle(theta: float) -> float:
    """Map an axis angle to [0, pi); an eigenvector's sign carries no meaning."""
    t = float(np.mod(theta, np.pi))
    return 0.0 if t >= np.pi else t


@dataclass(frozen=True, eq=False)
class ConstrainedGaussianSet:
    mu: np.ndarray
    theta12: float
    theta3: float
    theta4: float
    u1: np.ndarray
    u2: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(K, 2)
        u1 = np.array(self.u1, dtype=float).reshape(K)
        u2 = float(self.u2)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(u1)) and np.isfinite(u2)):
            raise ValueError("emission parameters must be finite")
        if u2 <= 0:
            raise ValueError(f"u2 must be positive, got {u2}")
        if np.any(u1 <= u2):
            raise ValueError(f"leading eigenvalues {u1} must exceed u2={u2}")
        mu.setflags(write=False)
        u1.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        for name in ("theta12", "theta3", "theta4"):
            object.__setattr__(self, name, normalize_angle(getattr(self, name)))

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.theta12, self.theta12, self.theta3, self.theta4])

    @property
    def rotations(self) -> np.ndarray:
        return np.stack([rotation(t) for t in self.angles])

    @property
    def covariances(self) -> np.ndarray:
        d = self.rotations
        lam = np.zeros((K, 2, 2))
        lam[:, 0, 0] = self.u1
        lam[:, 1, 1] = self.u2
        return d @ lam @ np.transpose(d, (0, 2, 1))

    def replace(self, **changes) -> ConstrainedGaussianSet:
        fields = dict(
            mu=self.mu, theta12=self.theta12, theta3=self.theta3,
            theta4=self.theta4, u1=self.u1, u2=self.u2,
        )
        fields.update(changes)
        return ConstrainedGaussianSet(**fields)


def log_densities(params: ConstrainedGaussianSet, x: np.ndarray) -> np.ndarray:
    """Log-density of every point under every group, shape (n, 4)."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    out = np.empty((len(x), K))
    for k, (theta, u1) in enumerate(zip(params.angles, params.u1)):
        c, s = np.cos(theta), np.sin(theta)
        dx = x[:, 0] - params.mu[k, 0]
        dy = x[:, 1] - params.mu[k, 1]
        # coordinates along the two principal axes
        a = c * dx + s * dy
        b = -s * dx + c * dy
        out[:, k] = -LOG_2PI - 0.5 * (np.log(u1) + np.log(params.u2)) - 0.5 * (
            a * a / u1 + b * b / params.u2
        )
    return out


def log_density(params: ConstrainedGaussianSet, k: int, x) -> float:
    """Log-density of a single point ``x`` under group ``k`` (0-based)."""
    return float(log_densities(params, np.asarray(x, dtype=float))[0, k])


@dataclass(frozen=True, eq=False)
class ScatterSet:
    """Posterior-weighted sufficient statistics of the four groups.

    ``scatter[k]`` is ``sum_t tau_tk (x_t - mean_k)(x_t - mean_k)'``.
    """

    counts: np.ndarray
    means: np.ndarray
    scatter: np.ndarray

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    @property
    def w1(self) -> np.ndarray:
        return self.scatter[:, 0, 0]

    @property
    def w2(self) -> np.ndarray:
        return self.scatter[:, 0, 1]

    @property
    def w4(self) -> np.ndarray:
        return self.scatter[:, 1, 1]


def accumulate_scatter(x, tau: np.ndarray) -> ScatterSet:
    """Weighted counts, means and scatter matrices of the four groups.

    ``x`` is an (n, 2) array or anything with an ``x`` attribute
    (e.g. a :class:`~tilehmm.data_io.ProbeSeries`).
    """
    x = np.asarray(getattr(x, "x", x), dtype=float).reshape(-1, 2)
    tau = np.asarray(tau, dtype=float)
    counts = tau.sum(axis=0)
    for k in range(K):
        if not counts[k] > MIN_GROUP_WEIGHT:
            raise DegenerateGroupError(k, float(counts[k]))
    means = (tau.T @ x) / counts[:, None]
    scatter = np.empty((K, 2, 2))
    for k in range(K):
        d = x - means[k]
        wd = d * tau[:, k : k + 1]
        scatter[k] = wd.T @ d
        scatter[k, 0, 1] = scatter[k, 1, 0] = 0.5 * (scatter[k, 0, 1] + scatter[k, 1, 0])
    return ScatterSet(counts, means, scatter)


def expected_complete_loglik(scatter: ScatterSet, params: ConstrainedGaussianSet) -> float:
    """Emission part of the EM auxiliary function at ``params``."""
    total = 0.0
    cov = params.covariances
    for k in range(K):
        prec = np.linalg.inv(cov[k])
        diff = scatter.means[k] - params.mu[k]
        total -= 0.5 * (
            scatter.counts[k] * (2 * LOG_2PI + np.log(params.u1[k]) + np.log(params.u2))
            + np.trace(prec @ scatter.scatter[k])
            + scatter.counts[k] * diff @ prec @ diff
        )
    return float(total)


def rotated_scatter(w: np.ndarray, theta: float) -> tuple[float, float]:
    """Diagonal of ``D' W D``: scatter along the leading and second axes."""
    c, s = np.cos(theta), np.sin(theta)
    b1 = c * c * w[0, 0] + 2 * c * s * w[0, 1] + s * s * w[1, 1]
    b2 = s * s * w[0, 0] - 2 * c * s * w[0, 1] + c * c * w[1, 1]
    return float(b1), float(b2)


def orientation_objective(d, scatter: ScatterSet, u1_pair, u2: float, sign: int = 1):
    """Trace term of groups 1-2 as a function of the cosine ``d`` of the shared axis.

    ``sign`` selects the off-diagonal sign of ``D = (d, -s; s, d)`` with
    ``s = sign * sqrt(1 - d^2)``.  The second-axis term carries
    ``-2 w2 d s``; this is the function the shared-orientation estimator
    minimises.
    """
    d = np.asarray(d, dtype=float)
    s = sign * np.sqrt(np.clip(1.0 - d * d, 0.0, None))
    total = 0.0
    for k in range(2):
        w1, w2, w4 = scatter.w1[k], scatter.w2[k], scatter.w4[k]
        lead = d * d * w1 + 2 * w2 * d * s + w4 * s * s
        second = d * d * w4 - 2 * w2 * d * s + w1 * s * s
        total = total + lead / u1_pair[k] + second / u2
    return total


@dataclass(frozen=True)
class OrientationEstimate:
    angle: float
    d: float
    sign: int
    degenerate: bool = False


def estimate_shared_orientation(scatter: ScatterSet, u1_pair, u2: float) -> OrientationEstimate:
    """Closed-form shared axis of groups 1 and 2 given their eigenvalues.

    Candidates come from ``d^2 - 1/2 = +-N14 / (2 sqrt(N14^2 + 4 N2^2))``
    with both off-diagonal signs; the candidate with the smallest
    :func:`orientation_objective` is returned.
    """
    u1_pair = np.asarray(u1_pair, dtype=float)[:2]
    if not (np.all(u1_pair > u2) and u2 > 0):
        raise ValueError("shared orientation needs u1 > u2 > 0 for groups 1 and 2")
    factor = (u2 - u1_pair) / (u1_pair * u2)
    n14 = float(np.sum((scatter.w1[:2] - scatter.w4[:2]) * factor))
    n2 = float(np.sum(scatter.w2[:2] * factor))
    norm = np.hypot(n14, 2.0 * n2)
    scale = float(np.sum(np.abs(scatter.scatter[:2]) * np.abs(factor)[:, None, None]))
    if norm <= 1e-14 * max(scale, 1e-300):
        return OrientationEstimate(0.0, 1.0, 1, degenerate=True)
    best = None
    for pm, sign in itertools.product((1.0, -1.0), (1, -1)):
        d2 = min(max(0.5 + pm * n14 / (2.0 * norm), 0.0), 1.0)
        d = np.sqrt(d2)
        value = float(orientation_objective(d, scatter, u1_pair, u2, sign))
        if best is None or value < best[0]:
            best = (value, d, sign)
    _, d, sign = best
    angle = normalize_angle(sign * np.arccos(min(d, 1.0)))
    return OrientationEstimate(angle, float(d), sign)


def estimate_free_orientation(w: np.ndarray) -> OrientationEstimate:
    """Angle of the leading eigenvector of a 2x2 scatter matrix, in [0, pi)."""
    w = np.asarray(w, dtype=float)
    a, b, c = w[0, 0], 0.5 * (w[0, 1] + w[1, 0]), w[1, 1]
    scale = abs(a) + abs(b) + abs(c)
    if abs(b) <= 1e-14 * scale and abs(a - c) <= 1e-14 * scale:
        return OrientationEstimate(0.0, 1.0, 1, degenerate=True)
    angle = normalize_angle(0.5 * np.arctan2(2.0 * b, a - c))
    return OrientationEstimate(angle, float(np.cos(angle)), 1)


def _profile_eigenvalues(b1, b2, counts, active):
    """Maximiser with the groups in ``active`` pinned to u1 = u2 (1 + margin)."""
    c = 1.0 + EIG_MARGIN
    n = counts.sum()
    u2 = (b2.sum() + (b1[active] / c).sum()) / (n + counts[active].sum())
    u2 = max(u2, U2_FLOOR)
    u1 = np.where(active, c * u2, b1 / counts)
    return u1, u2


def _eigen_objective(u1, u2, b1, b2, counts):
    return float(-0.5 * np.sum(counts * (np.log(u1) + np.log(u2)) + b1 / u1 + b2 / u2))


def estimate_eigenvalues(scatter: ScatterSet, angles) -> tuple[np.ndarray, float]:
    """Eigenvalues maximising the auxiliary function for fixed orientations.

    Unconstrained: ``u1[k] = b1[k] / n_k`` and ``u2 = sum_k b2[k] / n``
    where ``b`` is the diagonal of ``D_k' W_k D_k``.  When some
    ``u1[k] <= u2`` those groups are pinned to ``u1[k] = u2 (1 + 1e-6)`` and
    ``u2`` is re-solved; the best feasible active set is returned, which is
    the exact maximiser of this concave problem on the constrained set.
    """
    counts = np.asarray(scatter.counts, dtype=float)
    b = np.array([rotated_scatter(scatter.scatter[k], angles[k]) for k in range(K)])
    b1 = np.maximum(b[:, 0], 0.0)
    b2 = np.maximum(b[:, 1], 0.0)
    u1, u2 = _profile_eigenvalues(b1, b2, counts, np.zeros(K, dtype=bool))
    c = 1.0 + EIG_MARGIN
    if np.all(u1 >= c * u2):
        return u1, u2
    best = None
    for mask in itertools.product((False, True), repeat=K):
        active = np.array(mask)
        cand_u1, cand_u2 = _profile_eigenvalues(b1, b2, counts, active)
        cand_u1 = np.maximum(cand_u1, c * cand_u2)
        if np.any(cand_u1[~active] < c * cand_u2 * (1 - 1e-12)):
            continue
        value = _eigen_objective(cand_u1, cand_u2, b1, b2, counts)
        if best is None or value > best[0]:
            best = (value, cand_u1, cand_u2)
    return best[1], best[2]


def m_step(scatter: ScatterSet, prev: ConstrainedGaussianSet) -> ConstrainedGaussianSet:
    """One conditional-maximisation sweep of the emission parameters.

    Means go to the weighted group means; eigenvalues are updated with the
    previous orientations, then orientations (shared for groups 1-2, free
    for 3-4), then eigenvalues again.  Each stage maximises the auxiliary
    function over its block, so the sweep never decreases it.
    """
    angles = prev.angles.copy()
    u1, u2 = estimate_eigenvalues(scatter, angles)
    shared = estimate_shared_orientation(scatter, u1[:2], u2)
    if not shared.degenerate:
        angles[0] = angles[1] = shared.angle
    for k in (2, 3):
        free = estimate_free_orientation(scatter.scatter[k])
        if not free.degenerate:
            angles[k] = free.angle
    u1, u2 = estimate_eigenvalues(scatter, angles)
    return ConstrainedGaussianSet(
        mu=scatter.means, theta12=angles[0], theta3=angles[2], theta4=angles[3], u1=u1, u2=u2
    )


def emission_to_items(params: ConstrainedGaussianSet) -> list[tuple[str, float]]:
    items = []
    for k in range(K):
        items.append((f"mu.{k + 1}.x1", params.mu[k, 0]))
        items.append((f"mu.{k + 1}.x2", params.mu[k, 1]))
    items += [("theta12", params.theta12), ("theta3", params.theta3), ("theta4", params.theta4)]
    items += [(f"u1.{k + 1}", params.u1[k]) for k in range(K)]
    items.append(("u2", params.u2))
    return [(key, float(v)) for key, v in items]


def emission_from_items(values: dict[str, str]) -> ConstrainedGaussianSet:
    try:
        mu = [[float(values[f"mu.{k}.x1"]), float(values[f"mu.{k}.x2"])] for k in range(1, K + 1)]
        return ConstrainedGaussianSet(
            mu=mu,
            theta12=float(values["theta12"]),
            theta3=float(values["theta3"]),
            theta4=float(values["theta4"]),
            u1=[float(values[f"u1.{k}"]) for k in range(1, K + 1)],
            u2=float(values["u2"]),
        )
    except KeyError as exc:
        raise ValueError(f"missing emission parameter {exc.args[0]}") from None
