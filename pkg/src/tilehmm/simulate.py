"""Synthetic probe series with known hidden groups.

Random numbers come from ``numpy.random.Generator(PCG64(seed))`` and are
consumed in a fixed order, so a stream can be replayed independently:

1. ``n`` uniforms ``U_t`` drive the states by inverse CDF: ``Z_t`` is the
   first state whose cumulative probability exceeds ``U_t``;
2. ``2n`` uniforms ``(A_t, B_t)`` (drawn as one ``(n, 2)`` block) give
   standard normals by Box-Muller,
   ``z1 = sqrt(-2 log(1 - A)) cos(2 pi B)``, ``z2 = sqrt(-2 log(1 - A)) sin(2 pi B)``,
   mapped to ``x = mu_k + D_k diag(sqrt(u1_k), sqrt(u2)) z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import sample_states_kernel
from .data_io import DEFAULT_CATEGORIES, GeneStructure, ProbeSeries
from .emission import ConstrainedGaussianSet
from .hmm import K, ModelParams


@dataclass(frozen=True)
class PlantedGene:
    """A gene whose exonic probes are forced: ``exon_states[q]`` for exon q."""

    structure: GeneStructure
    exon_states: tuple[int, ...]

    def __post_init__(self):
        if len(self.exon_states) != self.structure.n_exons:
            raise ValueError(f"gene {self.structure.gene_id}: one forced state per exon required")
        if any(not 0 <= s < K for s in self.exon_states):
            raise ValueError(f"gene {self.structure.gene_id}: forced states must lie in 0..{K - 1}")

    @property
    def homogeneous(self) -> bool:
        return len(set(self.exon_states)) == 1


@dataclass(frozen=True, eq=False)
class SimScenario:
    params: ModelParams
    categories: np.ndarray
    seed: int = 0
    planted: tuple[PlantedGene, ...] = ()
    chromosome: str = "chr1"
    spacing: int = 100
    category_names: tuple[str, ...] = DEFAULT_CATEGORIES

    def __post_init__(self):
        cats = np.asarray(self.categories, dtype=np.int64)
        if cats.ndim != 1 or len(cats) == 0:
            raise ValueError("scenario needs a non-empty category sequence")
        if cats.min() < 0 or cats.max() >= len(self.category_names):
            raise ValueError("category index outside the scenario's category names")
        for g in self.planted:
            if g.structure.stop > len(cats):
                raise ValueError(f"planted gene {g.structure.gene_id} extends past probe {len(cats)}")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "planted", tuple(self.planted))

    @property
    def n(self) -> int:
        return len(self.categories)

    def forced_states(self) -> np.ndarray:
        forced = np.full(self.n, -1, dtype=np.int64)
        for g in self.planted:
            for (a, b), s in zip(g.structure.exons, g.exon_states):
                forced[a:b] = s
        return forced

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def layout_from_runs(runs: Sequence[tuple[int, int]], n: int) -> np.ndarray:
    """Repeat ``(category, length)`` runs until ``n`` probes are laid out."""
    if not runs or any(length <= 0 for _, length in runs):
        raise ValueError("layout runs must be non-empty with positive lengths")
    pattern = np.concatenate([np.full(length, cat, dtype=np.int64) for cat, length in runs])
    reps = -(-n // len(pattern))
    return np.tile(pattern, reps)[:n]


def sample_states(scenario: SimScenario, rng: np.random.Generator | None = None) -> np.ndarray:
    """Hidden groups (0-based) of every probe, with planted exons overridden."""
    rng = scenario.rng() if rng is None else rng
    params = scenario.params
    chains = params.chain_index(scenario.categories)
    init_cum = np.cumsum(params.initial, axis=-1)
    trans_cum = np.cumsum(params.chain_matrices, axis=-1)
    uniforms = rng.random(scenario.n)
    return sample_states_kernel(init_cum, trans_cum, chains, scenario.forced_states(), uniforms)


def sample_emissions(states: np.ndarray, emissions: ConstrainedGaussianSet,
                     rng: np.random.Generator) -> np.ndarray:
    """Bivariate normal draws given the states (Box-Muller on uniforms)."""
    states = np.asarray(states, dtype=np.int64)
    ab = rng.random((len(states), 2))
    radius = np.sqrt(-2.0 * np.log1p(-ab[:, 0]))
    z = np.column_stack([radius * np.cos(2 * np.pi * ab[:, 1]), radius * np.sin(2 * np.pi * ab[:, 1])])
    scales = np.sqrt(np.column_stack([emissions.u1, np.full(K, emissions.u2)]))
    factors = emissions.rotations * scales[:, None, :]  # D_k diag(sqrt(lambda))
    return emissions.mu[states] + np.einsum("nij,nj->ni", factors[states], z)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    series: ProbeSeries
    states: np.ndarray
    genes: tuple[GeneStructure, ...]
    planted: tuple[PlantedGene, ...]


def simulate(scenario: SimScenario) -> SimulatedData:
    rng = scenario.rng()
    states = sample_states(scenario, rng)
    x = sample_emissions(states, scenario.params.emissions, rng)
    position = 1 + scenario.spacing * np.arange(scenario.n, dtype=np.int64)
    series = ProbeSeries(scenario.chromosome, position, scenario.categories, x, scenario.category_names)
    return SimulatedData(series, states, tuple(g.structure for g in scenario.planted), scenario.planted)


def plant_genes(categories: np.ndarray, rng: np.random.Generator, n_homogeneous: int, n_heterogeneous: int,
                exons: tuple[int, int] = (2, 4), exon_length: tuple[int, int] = (3, 8),
                intron_length: tuple[int, int] = (1, 4), gap: int = 10, exon_category: int = 0,
                intron_category: int = 1, homogeneous_states=(1, 2, 3), chromosome: str = "chr1"
                ) -> tuple[np.ndarray, list[PlantedGene]]:
    """Lay out genes one after another and force their exon states.

    Homogeneous genes get one state from ``homogeneous_states``; the others
    are split: the first half of the exons in one state and the rest in a
    different one.  Exon probes are relabelled ``exon_category`` and intron
    probes ``intron_category``.  Returns the new categories and the genes.
    """
    cats = np.array(categories, dtype=np.int64)
    planted = []
    cursor = gap
    kinds = [True] * n_homogeneous + [False] * n_heterogeneous
    rng.shuffle(kinds)
    for i, homogeneous in enumerate(kinds):
        q = int(rng.integers(exons[0], exons[1] + 1))
        if not homogeneous:
            q = max(q, 2)
        intervals = []
        pos = cursor
        for j in range(q):
            length = int(rng.integers(exon_length[0], exon_length[1] + 1))
            intervals.append((pos, pos + length))
            pos += length
            if j < q - 1:
                pos += int(rng.integers(intron_length[0], intron_length[1] + 1))
        if pos + gap > len(cats):
            raise ValueError("not enough probes to plant all genes")
        cats[intervals[0][0]:pos] = intron_category
        for a, b in intervals:
            cats[a:b] = exon_category
        if homogeneous:
            s = int(rng.choice(homogeneous_states))
            states = (s,) * q
        else:
            first, second = rng.choice(K, size=2, replace=False)
            half = q // 2
            states = (int(first),) * half + (int(second),) * (q - half)
        structure = GeneStructure(f"g{i + 1:05d}", tuple(intervals), chromosome)
        planted.append(PlantedGene(structure, states))
        cursor = pos + gap
    return cats, planted
