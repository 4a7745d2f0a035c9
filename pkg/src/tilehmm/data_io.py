"""Probe and gene-structure ingestion.

Probe tables are tab-separated with a mandatory header::

    chrom  position  category  x1  x2

Gene tables give one row per exon, in base pairs, inclusive start and
exclusive end::

    gene_id  chrom  exon_start  exon_end
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

PROBE_COLUMNS = ["chrom", "position", "category", "x1", "x2"]
GENE_COLUMNS = ["gene_id", "chrom", "exon_start", "exon_end"]
DEFAULT_CATEGORIES = ("exon", "intron", "intergenic")


class IngestionError(ValueError):
    """Raised when an input table violates the expected format."""


@dataclass(frozen=True)
class Probe:
    chromosome: str
    position: int
    category: int  # 0-based index into the series' category names
    x1: float
    x2: float


@dataclass(frozen=True, eq=False)
class ProbeSeries:
    """Probes of one chromosome, ordered by strictly increasing position.

    ``category`` holds 0-based indices into ``category_names``; ``x`` is the
    (n, 2) array of log-intensities of the two samples.
    """

    chromosome: str
    position: np.ndarray
    category: np.ndarray
    x: np.ndarray
    category_names: tuple[str, ...] = DEFAULT_CATEGORIES

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.int64)
        category = np.asarray(self.category, dtype=np.int64)
        x = np.asarray(self.x, dtype=float).reshape(-1, 2)
        n = len(position)
        if n == 0:
            raise IngestionError(f"chromosome {self.chromosome}: empty probe series")
        if category.shape != (n,) or x.shape != (n, 2):
            raise IngestionError(f"chromosome {self.chromosome}: inconsistent column lengths")
        if np.any(np.diff(position) <= 0):
            raise IngestionError(
                f"chromosome {self.chromosome}: positions must be strictly increasing"
            )
        if np.any(position < 1):
            raise IngestionError(f"chromosome {self.chromosome}: positions must be >= 1")
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise IngestionError(
                f"chromosome {self.chromosome}: non-finite intensity at position {position[bad]}"
            )
        ncat = len(self.category_names)
        if np.any((category < 0) | (category >= ncat)):
            raise IngestionError(
                f"chromosome {self.chromosome}: category index outside [0, {ncat})"
            )
        for name, arr in (("position", position), ("category", category), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "category_names", tuple(self.category_names))

    def __len__(self):
        return len(self.position)

    def __eq__(self, other):
        if not isinstance(other, ProbeSeries):
            return NotImplemented
        return (
            self.chromosome == other.chromosome
            and self.category_names == other.category_names
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.category, other.category)
            and np.array_equal(self.x, other.x)
        )

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    @property
    def probes(self) -> list[Probe]:
        return [
            Probe(self.chromosome, int(p), int(c), float(a), float(b))
            for p, c, (a, b) in zip(self.position, self.category, self.x)
        ]

    def to_frame(self) -> pd.DataFrame:
        names = np.asarray(self.category_names, dtype=object)
        return pd.DataFrame(
            {
                "chrom": self.chromosome,
                "position": self.position,
                "category": names[self.category],
                "x1": self.x[:, 0],
                "x2": self.x[:, 1],
            }
        )


@dataclass(frozen=True)
class GeneStructure:
    """A region as ordered, disjoint half-open probe-index intervals ``[start, stop)``."""

    gene_id: str
    exons: tuple[tuple[int, int], ...]
    chromosome: str = ""

    def __post_init__(self):
        exons = tuple((int(a), int(b)) for a, b in self.exons)
        if not exons:
            raise ValueError(f"gene {self.gene_id}: no exons")
        prev_stop = None
        for a, b in exons:
            if a < 0 or a >= b:
                raise ValueError(f"gene {self.gene_id}: empty or negative interval [{a}, {b})")
            if prev_stop is not None and a < prev_stop:
                raise ValueError(f"gene {self.gene_id}: exon intervals overlap or are unordered")
            prev_stop = b
        object.__setattr__(self, "exons", exons)

    @property
    def n_exons(self) -> int:
        return len(self.exons)

    @property
    def n_probes(self) -> int:
        return sum(b - a for a, b in self.exons)

    @property
    def start(self) -> int:
        return self.exons[0][0]

    @property
    def stop(self) -> int:
        return self.exons[-1][1]

    def probe_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(a, b) for a, b in self.exons])

    def drop_last_exon(self) -> GeneStructure:
        return GeneStructure(self.gene_id, self.exons[:-1], self.chromosome)


def _category_lookup(category_map) -> tuple[dict[str, int], tuple[str, ...]]:
    """Normalise a category map to (label -> 0-based index, ordered names).

    ``category_map`` may be a sequence of names (index = order) or a mapping
    from label to a 1-based category number.
    """
    if category_map is None:
        category_map = DEFAULT_CATEGORIES
    if isinstance(category_map, Mapping):
        numbers = sorted(set(int(v) for v in category_map.values()))
        if numbers != list(range(1, len(numbers) + 1)):
            raise ValueError("category_map values must be the numbers 1..P")
        names = [""] * len(numbers)
        for label, v in category_map.items():
            if not names[int(v) - 1]:
                names[int(v) - 1] = str(label)
        lookup = {str(label): int(v) - 1 for label, v in category_map.items()}
        return lookup, tuple(names)
    names = tuple(str(c) for c in category_map)
    return {c: i for i, c in enumerate(names)}, names


def read_probe_table(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, sep="\t", float_precision="round_trip", dtype={"chrom": str, "category": str})
    except pd.errors.EmptyDataError as exc:
        raise IngestionError(f"{path}: empty probe table") from exc
    missing = [c for c in PROBE_COLUMNS if c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}; header must be {PROBE_COLUMNS}")
    if df.empty:
        raise IngestionError(f"{path}: no probes")
    return df[PROBE_COLUMNS]


def series_from_frame(df: pd.DataFrame, category_map=None) -> list[ProbeSeries]:
    """Split a probe table into one position-sorted series per chromosome."""
    lookup, names = _category_lookup(category_map)
    labels = df["category"].astype(str)
    unknown = sorted(set(labels) - set(lookup))
    if unknown:
        raise IngestionError(
            f"unknown category label(s) {unknown}; allowed labels: {sorted(lookup)}"
        )
    x = df[["x1", "x2"]].to_numpy(dtype=float)
    bad = ~np.isfinite(x).all(axis=1)
    if bad.any():
        row = df.iloc[int(np.flatnonzero(bad)[0])]
        raise IngestionError(
            f"non-finite intensity for probe {row['chrom']}:{row['position']}"
        )
    out = []
    chroms = df["chrom"].astype(str)
    for chrom in pd.unique(chroms):
        sub = df[chroms == chrom]
        pos = sub["position"].to_numpy(dtype=np.int64)
        order = np.argsort(pos, kind="stable")
        if np.any(np.diff(pos) < 0):
            warnings.warn(f"chromosome {chrom}: probes not sorted by position; sorting")
        pos = pos[order]
        dup = np.flatnonzero(np.diff(pos) == 0)
        if dup.size:
            raise IngestionError(f"chromosome {chrom}: duplicate position {pos[dup[0]]}")
        cats = np.array([lookup[c] for c in labels[chroms == chrom]], dtype=np.int64)[order]
        out.append(ProbeSeries(chrom, pos, cats, x[(chroms == chrom).to_numpy()][order], names))
    return out


def load_probe_series(path, category_map=None) -> list[ProbeSeries]:
    """Read a probe TSV into one :class:`ProbeSeries` per chromosome."""
    return series_from_frame(read_probe_table(path), category_map)


def write_probe_series(path, series: Iterable[ProbeSeries]) -> None:
    frames = [s.to_frame() for s in series]
    pd.concat(frames, ignore_index=True).to_csv(
        path, sep="\t", index=False, float_format="%.17g", lineterminator="\n"
    )


def normalize_dyeswap(rep_a: pd.DataFrame, rep_b: pd.DataFrame) -> pd.DataFrame:
    """Average a hybridisation with its dye-swapped replicate.

    ``rep_b`` carries sample 1 in its ``x2`` column and sample 2 in ``x1``.
    Both tables must list the same probes in the same order.
    """
    key = ["chrom", "position"]
    a_keys = rep_a[key].astype(str).to_numpy()
    b_keys = rep_b[key].astype(str).to_numpy()
    n = min(len(a_keys), len(b_keys))
    mismatch = np.flatnonzero((a_keys[:n] != b_keys[:n]).any(axis=1))
    if mismatch.size:
        i = int(mismatch[0])
        raise IngestionError(
            f"probe-set mismatch at row {i}: {a_keys[i][0]}:{a_keys[i][1]} "
            f"vs {b_keys[i][0]}:{b_keys[i][1]}"
        )
    if len(a_keys) != len(b_keys):
        longer = a_keys if len(a_keys) > len(b_keys) else b_keys
        raise IngestionError(
            f"probe-set mismatch: extra probe {longer[n][0]}:{longer[n][1]}"
        )
    out = rep_a.copy()
    out["x1"] = (rep_a["x1"].to_numpy(dtype=float) + rep_b["x2"].to_numpy(dtype=float)) / 2.0
    out["x2"] = (rep_a["x2"].to_numpy(dtype=float) + rep_b["x1"].to_numpy(dtype=float)) / 2.0
    return out


def _as_series_map(series) -> dict[str, ProbeSeries]:
    if isinstance(series, ProbeSeries):
        return {series.chromosome: series}
    if isinstance(series, Mapping):
        return dict(series)
    return {s.chromosome: s for s in series}


def genes_from_frame(df: pd.DataFrame, series) -> list[GeneStructure]:
    """Map base-pair exon intervals onto probe indices.

    A probe belongs to an exon when ``exon_start <= position < exon_end``.
    Exons covering no probe vanish; genes left with no probe are dropped with
    a warning, as are genes on chromosomes absent from ``series``.
    """
    by_chrom = _as_series_map(series)
    genes = []
    for gene_id, rows in df.groupby("gene_id", sort=False):
        gene_id = str(gene_id)
        chroms = rows["chrom"].astype(str).unique()
        if len(chroms) != 1:
            raise IngestionError(f"gene {gene_id}: exons on several chromosomes {list(chroms)}")
        chrom = chroms[0]
        bp = rows[["exon_start", "exon_end"]].to_numpy(dtype=np.int64)
        bp = bp[np.argsort(bp[:, 0], kind="stable")]
        if np.any(bp[:, 1] <= bp[:, 0]):
            raise IngestionError(f"gene {gene_id}: exon with end <= start")
        if np.any(bp[1:, 0] < bp[:-1, 1]):
            raise IngestionError(f"gene {gene_id}: overlapping exons")
        if chrom not in by_chrom:
            warnings.warn(f"gene {gene_id}: unknown chromosome {chrom}; skipped")
            continue
        pos = by_chrom[chrom].position
        starts = np.searchsorted(pos, bp[:, 0], side="left")
        stops = np.searchsorted(pos, bp[:, 1], side="left")
        exons = [(int(a), int(b)) for a, b in zip(starts, stops) if b > a]
        if not exons:
            warnings.warn(f"gene {gene_id}: no probe inside its exons; dropped")
            continue
        genes.append(GeneStructure(gene_id, tuple(exons), chrom))
    return genes


def load_gene_structures(path, series) -> list[GeneStructure]:
    """Read a gene TSV and convert it to probe-index :class:`GeneStructure` s."""
    df = pd.read_csv(path, sep="\t", float_precision="round_trip", dtype={"gene_id": str, "chrom": str})
    missing = [c for c in GENE_COLUMNS if c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}; header must be {GENE_COLUMNS}")
    return genes_from_frame(df, series)


def genes_to_frame(genes: Sequence[GeneStructure], series) -> pd.DataFrame:
    """Inverse of :func:`genes_from_frame` using probe positions as bounds."""
    by_chrom = _as_series_map(series)
    rows = []
    for g in genes:
        pos = by_chrom[g.chromosome].position
        for a, b in g.exons:
            rows.append((g.gene_id, g.chromosome, int(pos[a]), int(pos[b - 1]) + 1))
    return pd.DataFrame(rows, columns=GENE_COLUMNS)


def write_gene_structures(path, genes: Sequence[GeneStructure], series) -> None:
    genes_to_frame(genes, series).to_csv(path, sep="\t", index=False, lineterminator="\n")
