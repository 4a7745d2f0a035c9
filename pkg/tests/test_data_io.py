import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilehmm.data_io import (
    GeneStructure,
    IngestionError,
    ProbeSeries,
    genes_from_frame,
    load_gene_structures,
    load_probe_series,
    normalize_dyeswap,
    write_gene_structures,
    write_probe_series,
)


def _table(rows):
    return pd.DataFrame(rows, columns=["chrom", "position", "category", "x1", "x2"])


def _write(path, rows):
    _table(rows).to_csv(path, sep="\t", index=False)
    return path


def _swap(values):
    """A dye-swapped hybridisation reports sample 2 in channel 1."""
    return (values[1], values[0])


class TestDyeSwap:
    @pytest.mark.parametrize(
        "a, b_aligned, expected",
        [((5.0, 7.0), (5.0, 7.0), (5.0, 7.0)), ((4.0, 8.0), (6.0, 6.0), (5.0, 7.0))],
    )
    def test_examples(self, a, b_aligned, expected):
        out = normalize_dyeswap(_table([("c", 1, "exon", *a)]), _table([("c", 1, "exon", *_swap(b_aligned))]))
        assert (out["x1"][0], out["x2"][0]) == expected

    def test_fixture_against_loop(self, rng):
        pos = np.arange(1, 11) * 50
        a_vals = rng.normal(8, 2, size=(10, 2))
        b_vals = rng.normal(8, 2, size=(10, 2))
        a = _table([("chr2", p, "exon", *v) for p, v in zip(pos, a_vals)])
        b = _table([("chr2", p, "exon", *v) for p, v in zip(pos, b_vals)])
        out = normalize_dyeswap(a, b)
        for i in range(10):
            assert out["x1"][i] == (a_vals[i][0] + b_vals[i][1]) / 2
            assert out["x2"][i] == (a_vals[i][1] + b_vals[i][0]) / 2

    def test_symmetric_after_realignment(self, rng):
        a_vals = rng.normal(size=(6, 2))
        b_vals = rng.normal(size=(6, 2))
        a = _table([("c", i + 1, "exon", *v) for i, v in enumerate(a_vals)])
        b = _table([("c", i + 1, "exon", *v) for i, v in enumerate(b_vals)])
        b_as_a = _table([("c", i + 1, "exon", *_swap(v)) for i, v in enumerate(b_vals)])
        a_as_b = _table([("c", i + 1, "exon", *_swap(v)) for i, v in enumerate(a_vals)])
        pd.testing.assert_frame_equal(normalize_dyeswap(a, b), normalize_dyeswap(b_as_a, a_as_b))

    def test_mismatch_names_probe(self):
        a = _table([("c", 1, "exon", 1.0, 1.0), ("c", 2, "exon", 1.0, 1.0)])
        b = _table([("c", 1, "exon", 1.0, 1.0), ("c", 3, "exon", 1.0, 1.0)])
        with pytest.raises(IngestionError, match="c:2"):
            normalize_dyeswap(a, b)
        with pytest.raises(IngestionError, match="extra probe c:2"):
            normalize_dyeswap(a, b.iloc[:1])


class TestProbeSeries:
    def test_three_rows(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 10, "exon", 1, 2), ("c1", 20, "intron", 3, 4),
                                            ("c1", 30, "intergenic", 5, 6)])
        (s,) = load_probe_series(path)
        assert len(s) == 3
        assert s.category.tolist() == [0, 1, 2]
        assert s.probes[1].x2 == 4.0

    def test_unsorted_rows_warn_and_sort(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 30, "exon", 1, 2), ("c1", 10, "intron", 3, 4)])
        with pytest.warns(UserWarning, match="sorting"):
            (s,) = load_probe_series(path)
        assert s.position.tolist() == [10, 30]
        assert s.x[0].tolist() == [3.0, 4.0]

    def test_interleaved_chromosomes(self, tmp_path, rng):
        rows = []
        for i in rng.permutation(40):
            rows.append((f"c{i % 2}", int(1000 - 7 * i), "exon", float(i), float(-i)))
        path = _write(tmp_path / "p.tsv", rows)
        with pytest.warns(UserWarning):
            series = load_probe_series(path)
        assert {s.chromosome for s in series} == {"c0", "c1"}
        for s in series:
            expected = sorted((r[1], r[3]) for r in rows if r[0] == s.chromosome)
            assert s.position.tolist() == [p for p, _ in expected]
            assert s.x[:, 0].tolist() == [v for _, v in expected]

    def test_duplicate_positions(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 10, "exon", 1, 2), ("c1", 10, "exon", 1, 2)])
        with pytest.raises(IngestionError, match="duplicate"):
            load_probe_series(path)

    def test_unknown_category_lists_allowed(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 10, "utr", 1, 2)])
        with pytest.raises(IngestionError, match="allowed labels.*exon"):
            load_probe_series(path)

    def test_custom_category_map(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 10, "TE", 1, 2), ("c1", 11, "exon", 1, 2)])
        (s,) = load_probe_series(path, {"exon": 1, "TE": 2})
        assert s.category.tolist() == [1, 0]
        assert s.category_names == ("exon", "TE")

    def test_non_finite_rejected(self, tmp_path):
        path = _write(tmp_path / "p.tsv", [("c1", 10, "exon", 1, float("nan"))])
        with pytest.raises(IngestionError, match="non-finite"):
            load_probe_series(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text("c1\t10\texon\t1\t2\n")
        with pytest.raises(IngestionError, match="missing columns"):
            load_probe_series(path)

    def test_series_is_read_only(self):
        s = ProbeSeries("c", [1, 2], [0, 0], [[1, 1], [2, 2]])
        with pytest.raises(ValueError):
            s.x[0, 0] = 5.0

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["chrA", "chrB"]),
                st.integers(1, 10**9),
                st.sampled_from(["exon", "intron", "intergenic"]),
                st.floats(-1e6, 1e6, allow_nan=False),
                st.floats(-1e6, 1e6, allow_nan=False),
            ),
            min_size=1,
            max_size=25,
            unique_by=lambda r: (r[0], r[1]),
        )
    )
    def test_round_trip(self, tmp_path_factory, rows):
        rows = sorted(rows, key=lambda r: (r[0], r[1]))
        path = _write(tmp_path_factory.mktemp("rt") / "p.tsv", rows)
        first = load_probe_series(path)
        again_path = path.with_name("again.tsv")
        write_probe_series(again_path, first)
        assert load_probe_series(again_path) == first


@pytest.fixture
def series100():
    pos = 1 + 10 * np.arange(100)
    return ProbeSeries("c1", pos, np.zeros(100, dtype=int), np.zeros((100, 2)))


class TestGeneStructures:
    def _genes(self, rows, series):
        return genes_from_frame(pd.DataFrame(rows, columns=["gene_id", "chrom", "exon_start", "exon_end"]), series)

    def test_single_exon(self, series100):
        # probes 10..20 sit at 101..201
        (g,) = self._genes([("g", "c1", 101, 202)], series100)
        assert g.exons == ((10, 21),)

    def test_two_exons_with_gap(self, series100):
        (g,) = self._genes([("g", "c1", 101, 141), ("g", "c1", 171, 200)], series100)
        assert g.exons == ((10, 14), (17, 20))
        assert g.n_probes == 7

    def test_fifty_genes_against_manual_mapping(self, series100, rng):
        rows = []
        for i in range(50):
            q = rng.integers(1, 4)
            cuts = np.sort(rng.choice(np.arange(1, 1000), size=2 * q, replace=False))
            for a, b in cuts.reshape(-1, 2):
                rows.append((f"g{i:02d}", "c1", int(a), int(b)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # random exons may miss every probe
            genes = {g.gene_id: g for g in self._genes(rows, series100)}
        pos = series100.position
        for i in range(50):
            gid = f"g{i:02d}"
            intervals = []
            for _, _, a, b in sorted(r for r in rows if r[0] == gid):
                idx = [t for t in range(100) if a <= pos[t] < b]
                if idx:
                    intervals.append((idx[0], idx[-1] + 1))
            if intervals:
                assert genes[gid].exons == tuple(intervals)
            else:
                assert gid not in genes

    def test_overlapping_exons(self, series100):
        with pytest.raises(IngestionError, match="overlapping"):
            self._genes([("g", "c1", 100, 200), ("g", "c1", 150, 300)], series100)

    def test_uncovered_gene_dropped(self, series100):
        with pytest.warns(UserWarning, match="no probe"):
            genes = self._genes([("g", "c1", 102, 105)], series100)
        assert genes == []

    def test_unknown_chromosome_skipped(self, series100):
        with pytest.warns(UserWarning, match="unknown chromosome"):
            genes = self._genes([("g", "cX", 100, 200), ("h", "c1", 100, 200)], series100)
        assert [g.gene_id for g in genes] == ["h"]

    def test_file_round_trip(self, tmp_path, series100):
        genes = [GeneStructure("a", ((3, 5), (8, 12)), "c1"), GeneStructure("b", ((40, 41),), "c1")]
        write_gene_structures(tmp_path / "g.tsv", genes, [series100])
        assert load_gene_structures(tmp_path / "g.tsv", [series100]) == genes

    def test_invalid_intervals(self):
        with pytest.raises(ValueError):
            GeneStructure("g", ((5, 5),))
        with pytest.raises(ValueError):
            GeneStructure("g", ((1, 4), (3, 6)))

