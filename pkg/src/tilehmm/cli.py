"""Command-line pipeline: ``tilehmm {fit,genes,novel,select,simulate}``.

Every option can also come from a ``--config`` file of ``key = value``
lines (keys are option names without dashes, e.g. ``max_iter = 200``);
options given on the command line win.

Exit codes: 0 success, 1 usage or input error, 2 numerical or
convergence warning.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import hmm, region
from .data_io import (
    DEFAULT_CATEGORIES,
    IngestionError,
    ProbeSeries,
    load_gene_structures,
    load_probe_series,
    write_gene_structures,
    write_probe_series,
)
from .simulate import SimScenario, layout_from_runs, plant_genes, simulate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
POSTERIOR_COLUMNS = ["chrom", "position", "category", "tau1", "tau2", "tau3", "tau4", "label"]
GENE_REPORT_COLUMNS = [
    "gene_id", "Q1", "Q2", "Q3", "Q4", "prior1", "prior2", "prior3", "prior4",
    "raw_logratio", "unistatus", "homogeneous", "class",
]


class UsageError(Exception):
    pass


def _write_tsv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, sep="\t", index=False, float_format="%.10g", lineterminator="\n")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _categories(args) -> tuple[str, ...]:
    return tuple(c for c in args.categories.split(",") if c)


def _load_series(args) -> list[ProbeSeries]:
    if not args.input:
        raise UsageError("--input probe table is required")
    return load_probe_series(args.input, _categories(args))


def _stop(args) -> hmm.StopCriteria:
    return hmm.StopCriteria(tol=args.tol, max_iter=args.max_iter, restarts=args.restarts, seed=args.seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map_threads(func, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _fit_groups(series, spec, args):
    """One fit per chromosome, or a single pooled fit; returns (name, series list, report)."""
    groups = [("pooled", series)] if args.pooled else [(s.chromosome, [s]) for s in series]
    stop = _stop(args)
    reports = _map_threads(lambda g: hmm.fit(g[1], spec, stop=stop), groups, args.threads)
    return [(name, ss, rep) for (name, ss), rep in zip(groups, reports)]


def posterior_frame(series: ProbeSeries, tau: np.ndarray) -> pd.DataFrame:
    labels, _ = hmm.classify_probes(tau)
    names = np.asarray(series.category_names, dtype=object)
    return pd.DataFrame(
        {
            "chrom": series.chromosome,
            "position": series.position,
            "category": names[series.category],
            "tau1": tau[:, 0],
            "tau2": tau[:, 1],
            "tau3": tau[:, 2],
            "tau4": tau[:, 3],
            "label": np.asarray(hmm.GROUP_NAMES, dtype=object)[labels],
        }
    )


def read_posterior_table(path) -> pd.DataFrame:
    df = pd.read_csv(path, sep="\t", float_precision="round_trip", dtype={"chrom": str, "category": str, "label": str})
    missing = [c for c in POSTERIOR_COLUMNS if c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}")
    return df


def summary_text(name: str, report: hmm.FitReport, category_names) -> str:
    spec = report.spec
    lines = [
        f"fit = {name}",
        f"model = {spec.name}",
        f"n = {report.n_obs}",
        f"loglik = {report.loglik!r}",
        f"n_params = {report.n_params}",
        f"bic = {report.bic!r}",
        f"icl = {report.icl!r}",
        f"iterations = {report.n_iter}",
        f"converged = {str(report.converged).lower()}",
    ]
    chain_names = list(category_names) if spec.use_annotation else ["all"]
    for p, cname in enumerate(chain_names):
        for k, g in enumerate(hmm.GROUP_NAMES):
            lines.append(f"proportion.{cname}.{g} = {float(report.proportions[p, k])!r}")
    for p, cname in enumerate(chain_names):
        for k, g in enumerate(hmm.GROUP_NAMES):
            lines.append(f"sojourn.{cname}.{g} = {float(report.sojourn[p, k])!r}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    series = _load_series(args)
    spec = hmm.ModelSpec.from_name(args.model, len(_categories(args)))
    out = _out_dir(args)
    fits = _fit_groups(series, spec, args)
    frames, summaries = [], []
    status = EXIT_OK
    for name, ss, rep in fits:
        _write_text(out / f"params_{name}.txt", hmm.params_to_text(rep.params, _categories(args)))
        summaries.append(summary_text(name, rep, _categories(args)))
        for s, post in zip(ss, rep.posteriors):
            frames.append(posterior_frame(s, post.tau))
        if not rep.converged:
            warnings.warn(f"fit {name}: no convergence after {rep.n_iter} iterations")
            status = EXIT_NUMERIC
    _write_tsv(pd.concat(frames, ignore_index=True), out / "posteriors.tsv")
    _write_text(out / "summary.txt", "\n".join(summaries))
    return status


def _params_for(path: Path, chrom: str):
    if path.is_dir():
        for candidate in (path / f"params_{chrom}.txt", path / "params_pooled.txt"):
            if candidate.exists():
                return hmm.params_from_text(candidate.read_text())[0]
        raise IngestionError(f"no parameter file for chromosome {chrom} in {path}")
    return hmm.params_from_text(path.read_text())[0]


def gene_report_frame(reports) -> pd.DataFrame:
    rows = []
    for r in sorted(reports, key=lambda r: r.gene_id):
        rows.append(
            [r.gene_id, *r.q_x, *r.q_prior, r.raw_log_ratio, r.unistatus,
             str(r.homogeneous).lower(), r.class_name]
        )
    return pd.DataFrame(rows, columns=GENE_REPORT_COLUMNS)


def cmd_genes(args) -> int:
    series = _load_series(args)
    if not args.genes or not args.params:
        raise UsageError("--genes and --params are required")
    out = _out_dir(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        genes = load_gene_structures(args.genes, series)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    by_chrom = {}
    for g in genes:
        by_chrom.setdefault(g.chromosome, []).append(g)
    params_path = Path(args.params)

    def work(s):
        params = _params_for(params_path, s.chromosome)
        return region.region_posteriors(s, params, by_chrom.get(s.chromosome, []))

    regions = [r for batch in _map_threads(work, series, args.threads) for r in batch]
    with warnings.catch_warnings(record=True) as fit_warnings:
        warnings.simplefilter("always")
        reports, correction = region.classify_genes(regions, threshold=args.threshold)
    caught.extend(fit_warnings)
    for w in fit_warnings:
        print(f"warning: {w.message}", file=sys.stderr)
    _write_tsv(gene_report_frame(reports), out / "genes.tsv")
    counts = {name: 0 for name in ("heterogeneous", *hmm.GROUP_NAMES)}
    for r in reports:
        counts[r.class_name] += 1
    n_hom = sum(r.homogeneous for r in reports)
    summary = (
        f"genes = {len(reports)}\nhomogeneous = {n_hom}\n"
        + "".join(f"class.{k} = {v}\n" for k, v in counts.items())
        + f"warnings = {len(caught)}\n"
        + f"correction.intercept = {correction.intercept!r}\n"
        + f"correction.per_probe = {correction.per_probe!r}\n"
        + f"correction.per_exon = {correction.per_exon!r}\n"
    )
    _write_text(out / "genes_summary.txt", summary)
    print(
        f"{len(reports)} genes, {n_hom} homogeneous: "
        + ", ".join(f"{counts[g]} {g}" for g in hmm.GROUP_NAMES)
        + f"; {len(caught)} warning(s)"
    )
    return EXIT_OK


def cmd_novel(args) -> int:
    series = _load_series(args)
    out = _out_dir(args)
    allowed_names = [c for c in args.novel_categories.split(",") if c]
    status = EXIT_OK
    if args.posteriors:
        table = read_posterior_table(args.posteriors)
        label_of = {name: k for k, name in enumerate(hmm.GROUP_NAMES)}
        labels_by_chrom = {
            str(chrom): np.array([label_of[x] for x in sub["label"]])
            for chrom, sub in table.groupby("chrom", sort=False)
        }
    else:
        spec = hmm.ModelSpec.from_name(args.model, len(_categories(args)))
        labels_by_chrom = {}
        for name, ss, rep in _fit_groups(series, spec, args):
            if not rep.converged:
                status = EXIT_NUMERIC
            for s, post in zip(ss, rep.posteriors):
                labels_by_chrom[s.chromosome] = hmm.classify_probes(post.tau)[0]
    rows = []
    for s in series:
        allowed = [s.category_names.index(c) for c in allowed_names if c in s.category_names]
        labels = labels_by_chrom[s.chromosome]
        for a, b, major in region.expressed_runs(labels, s.category, allowed, args.min_length):
            rows.append((s.chromosome, int(s.position[a]), int(s.position[b - 1]), b - a, hmm.GROUP_NAMES[major]))
    _write_tsv(pd.DataFrame(rows, columns=["chrom", "start", "end", "n_probes", "label"]), out / "novel.tsv")
    return status


def selection_frame(reports) -> pd.DataFrame:
    reports = sorted(reports, key=lambda r: r.spec.name)
    return pd.DataFrame(
        {
            "criterion": ["n_params", "minus2_loglik", "bic", "icl"],
            **{
                r.spec.name: [r.n_params, -2.0 * r.loglik, r.bic, r.icl]
                for r in reports
            },
        }
    )


def cmd_select(args) -> int:
    series = _load_series(args)
    out = _out_dir(args)
    ncat = len(_categories(args))
    stop = _stop(args)
    specs = [hmm.ModelSpec.from_name(m, ncat) for m in ("m1", "m2", "m3", "m4")]
    reports = _map_threads(lambda spec: hmm.fit(series, spec, stop=stop), specs, args.threads)
    _write_tsv(selection_frame(reports), out / "selection.tsv")
    ranking = hmm.model_selection(reports)
    text = f"selected.bic = {ranking['bic'][0]}\nselected.icl = {ranking['icl'][0]}\n"
    text += f"ranking.bic = {','.join(ranking['bic'])}\nranking.icl = {','.join(ranking['icl'])}\n"
    _write_text(out / "selection_summary.txt", text)
    print(text, end="")
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NUMERIC


SCENARIO_KEYS = {"n", "seed", "chrom", "layout", "spacing", "genes.homogeneous", "genes.heterogeneous"}


def scenario_from_values(values: dict[str, str]) -> SimScenario:
    """Build a scenario from ``key = value`` entries (parameter keys included)."""
    try:
        params, names = hmm.params_from_values(values)
    except ValueError as exc:
        raise UsageError(f"scenario: {exc}") from None
    try:
        n = int(values["n"])
    except KeyError:
        raise UsageError("scenario: missing field 'n'") from None
    except ValueError:
        raise UsageError(f"scenario: field 'n' must be an integer, got {values['n']!r}") from None
    if n <= 0:
        raise UsageError("scenario: field 'n' must be positive")
    seed = int(values.get("seed", 0))
    chrom = values.get("chrom", "chr1")
    layout = values.get("layout", f"{names[-1]}:1")
    runs = []
    for item in layout.split(","):
        try:
            cname, length = item.split(":")
            runs.append((names.index(cname.strip()), int(length)))
        except ValueError:
            raise UsageError(
                f"scenario: field 'layout' entry {item!r} must be category:length with category in {list(names)}"
            ) from None
    cats = layout_from_runs(runs, n)
    planted = []
    n_hom = int(values.get("genes.homogeneous", 0))
    n_het = int(values.get("genes.heterogeneous", 0))
    if n_hom or n_het:
        if "exon" not in names or "intron" not in names:
            raise UsageError("scenario: planted genes need 'exon' and 'intron' categories")
        rng = np.random.Generator(np.random.PCG64([seed, 1]))
        try:
            cats, planted = plant_genes(
                cats, rng, n_hom, n_het, exon_category=names.index("exon"),
                intron_category=names.index("intron"), chromosome=chrom,
            )
        except ValueError as exc:
            raise UsageError(f"scenario: field 'n' too small: {exc}") from None
    return SimScenario(
        params, cats, seed=seed, planted=tuple(planted), chromosome=chrom,
        spacing=int(values.get("spacing", 100)), category_names=names,
    )


def cmd_simulate(args) -> int:
    if not args.scenario:
        raise UsageError("--scenario file is required")
    values = hmm.parse_key_values(Path(args.scenario).read_text())
    if args.seed_given:
        values["seed"] = str(args.seed)
    scenario = scenario_from_values(values)
    data = simulate(scenario)
    out = _out_dir(args)
    write_probe_series(out / "probes.tsv", [data.series])
    write_gene_structures(out / "genes.tsv", data.genes, [data.series])
    forced = scenario.forced_states()
    _write_tsv(
        pd.DataFrame(
            {
                "position": data.series.position,
                "true_state": data.states + 1,
                "forced": (forced >= 0).astype(int),
            }
        ),
        out / "truth.tsv",
    )
    _write_tsv(
        pd.DataFrame(
            {
                "gene_id": [g.structure.gene_id for g in data.planted],
                "homogeneous": [str(g.homogeneous).lower() for g in data.planted],
                "exon_states": [",".join(str(s + 1) for s in g.exon_states) for g in data.planted],
            }
        ),
        out / "gene_truth.tsv",
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file providing option defaults")
    common.add_argument("--input", help="probe TSV: chrom position category x1 x2")
    common.add_argument("--genes", help="gene TSV: gene_id chrom exon_start exon_end")
    common.add_argument("--model", choices=["m1", "m2", "m3", "m4"],
                        help="sub-model (default m4; m2 for `novel`)")
    common.add_argument("--categories", default=",".join(DEFAULT_CATEGORIES),
                        help="comma-separated category labels, in model order")
    common.add_argument("--tol", type=float, default=1e-6, help="relative log-likelihood tolerance")
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--restarts", type=int, default=3)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--pooled", action="store_true", help="share parameters across chromosomes")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="tilehmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit a model and classify probes")
    p = sub.add_parser("genes", parents=[common], help="posterior homogeneity and gene calls")
    p.add_argument("--params", help="parameter file, or the output directory of `fit`")
    p.add_argument("--threshold", type=float, default=0.0, help="unistatus threshold")
    p = sub.add_parser("novel", parents=[common], help="runs of expressed probes outside exons")
    p.add_argument("--posteriors", help="posterior TSV from `fit` (otherwise the model is fitted)")
    p.add_argument("--min-length", type=int, default=2)
    p.add_argument("--novel-categories", default="intron,intergenic")
    sub.add_parser("select", parents=[common], help="fit m1-m4 and compare BIC / ICL")
    p = sub.add_parser("simulate", parents=[common], help="simulate a scenario")
    p.add_argument("--scenario", help="scenario key = value file")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        values = hmm.parse_key_values(Path(args.config).read_text())
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"config: unknown option {key!r}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = value.lower() in ("1", "true", "yes")
            else:
                defaults[dest] = action.type(value) if action.type else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.model is None:
        args.model = "m2" if args.command == "novel" else "m4"
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    except (UsageError, FileNotFoundError, ValueError) as exc:
        print(f"tilehmm: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    commands = {
        "fit": cmd_fit, "genes": cmd_genes, "novel": cmd_novel,
        "select": cmd_select, "simulate": cmd_simulate,
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return commands[args.command](args)
    except (UsageError, IngestionError, FileNotFoundError, ValueError) as exc:
        print(f"tilehmm {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    except (hmm.NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"tilehmm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
