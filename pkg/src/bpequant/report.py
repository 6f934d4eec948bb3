"""Agreement report over metrics CSVs, qualitative labels, and reader scores.

The report mirrors how multi-operator studies are tabulated: for every
pair of segmentation methods the per-metric concordance (CCC with a
bootstrap CI), for every method the Spearman correlation of its BPE
metrics against the 4-level qualitative rating, a paired-bootstrap
comparison of those correlations between methods, and a Wilcoxon
signed-rank test on reader quality scores.

Bootstrap seeds are consumed sequentially from the base seed in a fixed
slot order (pairs sorted, metrics in their declared order), so a given
(inputs, seed, resamples) triple reproduces every interval bit for bit.
The JSON rendering uses sorted keys and no timestamps for the same reason.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from .pipeline import METRICS_CSV_HEADER
from .stats import (
    RNG_ALGORITHM,
    PairedSample,
    QualitativeBpe,
    bootstrap_compare_spearman,
    ccc,
    ccc_ci,
    spearman,
    wilcoxon_signed_rank,
)

logger = logging.getLogger(__name__)

AGREEMENT_METRICS = (
    "fgt_volume_mm3",
    "bpe_volume_mm3",
    "bpe_fgt_ratio_pct",
    "bpe_breast_ratio_pct",
    "bpe_integrated_intensity",
)
QUALITATIVE_METRICS = (
    "bpe_volume_mm3",
    "bpe_fgt_ratio_pct",
    "bpe_breast_ratio_pct",
    "bpe_integrated_intensity",
)

_MIN_BOOTSTRAP_N = 8


def read_metrics_csvs(paths) -> tuple[list[str], list[str], dict]:
    """Load one or more metrics CSVs into (methods, case_ids, values).

    ``values[(case_id, method)]`` maps metric name to float or None (an
    "NA" cell).  Every method must cover the same case set; the error for
    a mismatch names the missing case_ids per method.
    """
    values: dict[tuple[str, str], dict[str, float | None]] = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(METRICS_CSV_HEADER):
                raise ValueError(f"{path} does not have the metrics CSV header")
            for row in reader:
                if len(row) != len(METRICS_CSV_HEADER):
                    raise ValueError(f"{path} row has {len(row)} fields: {row!r}")
                case_id, method = row[0], row[1]
                key = (case_id, method)
                if key in values:
                    raise ValueError(
                        f"duplicate row for case '{case_id}' method '{method}'"
                    )
                values[key] = {
                    name: None if cell == "NA" else float(cell)
                    for name, cell in zip(METRICS_CSV_HEADER[2:], row[2:])
                }

    if not values:
        raise ValueError("metrics CSVs contain no rows")
    methods = sorted({method for _, method in values})
    per_method = {
        m: {case for case, method in values if method == m} for m in methods
    }
    union = set().union(*per_method.values())
    if any(cases != union for cases in per_method.values()):
        parts = []
        for m in methods:
            missing = sorted(union - per_method[m])
            if missing:
                parts.append(f"{m} missing {missing}")
        raise ValueError("case_id sets differ between methods: " + "; ".join(parts))
    case_ids = sorted(union)
    return methods, case_ids, values


def read_labels_csv(path, case_ids) -> dict[str, int]:
    """Load the qualitative BPE labels and check the case set matches."""
    labels: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "case_id" or "qualitative_bpe" not in header:
            raise ValueError(f"{path} must have case_id and qualitative_bpe columns")
        allowed = {"case_id", "qualitative_bpe", "density_category"}
        unknown = [col for col in header if col not in allowed]
        if unknown:
            raise ValueError(f"unknown column '{unknown[0]}' in {path}")
        qual_idx = header.index("qualitative_bpe")
        for row in reader:
            case_id = row[0]
            if case_id in labels:
                raise ValueError(f"duplicate case_id '{case_id}' in {path}")
            labels[case_id] = int(QualitativeBpe(int(row[qual_idx])))

    wanted = set(case_ids)
    missing = sorted(wanted - set(labels))
    if missing:
        raise ValueError(f"labels CSV missing case_ids: {missing}")
    extra = sorted(set(labels) - wanted)
    if extra:
        raise ValueError(f"labels CSV has case_ids absent from the metrics: {extra}")
    return labels


def read_scores_csv(path) -> tuple[tuple[str, str], dict[str, list[tuple[str, float, float]]]]:
    """Load a reader-score export: per reader, (case_id, score_a, score_b) rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path} is empty")
        score_cols = [(i, col[len("score__"):]) for i, col in enumerate(header) if col.startswith("score__")]
        if len(score_cols) != 2 or header[0] != "case_id" or header[1] != "reader_id":
            raise ValueError(
                f"{path} must have case_id, reader_id and exactly two score__<method> columns"
            )
        (idx_a, method_a), (idx_b, method_b) = score_cols
        per_reader: dict[str, list[tuple[str, float, float]]] = {}
        for row in reader:
            per_reader.setdefault(row[1], []).append(
                (row[0], float(row[idx_a]), float(row[idx_b]))
            )
    for rows in per_reader.values():
        rows.sort(key=lambda r: r[0])
    return (method_a, method_b), per_reader


def _paired(values, case_ids, method_a, method_b, metric):
    xs, ys = [], []
    for case_id in case_ids:
        a = values[(case_id, method_a)][metric]
        b = values[(case_id, method_b)][metric]
        if a is not None and b is not None:
            xs.append(a)
            ys.append(b)
    return xs, ys


def build_report(
    metrics_paths,
    labels_path=None,
    scores_path=None,
    seed: int = 0,
    resamples: int = 2000,
    failures: list[dict] | None = None,
) -> dict:
    """Assemble the full agreement report as a JSON-ready dictionary."""
    methods, case_ids, values = read_metrics_csvs(metrics_paths)
    labels = read_labels_csv(labels_path, case_ids) if labels_path else None
    pairs = [
        (methods[i], methods[j])
        for i in range(len(methods))
        for j in range(i + 1, len(methods))
    ]

    next_seed = iter(range(seed, seed + 10_000_000)).__next__

    ccc_section: dict[str, dict] = {}
    for method_a, method_b in pairs:
        pair_key = f"{method_a} vs {method_b}"
        per_metric = {}
        for metric in AGREEMENT_METRICS:
            slot_seed = next_seed()
            xs, ys = _paired(values, case_ids, method_a, method_b, metric)
            if len(xs) < 2:
                per_metric[metric] = {"skipped": "fewer than 2 complete pairs"}
                continue
            sample = PairedSample(tuple(xs), tuple(ys))
            try:
                estimate = ccc(sample)
                lo, hi = ccc_ci(sample, 0.95, resamples, slot_seed)
            except ValueError as exc:
                per_metric[metric] = {"skipped": str(exc)}
                continue
            per_metric[metric] = {
                "n": len(xs),
                "estimate": estimate,
                "ci_low": lo,
                "ci_high": hi,
                "ci_unreliable": len(xs) < _MIN_BOOTSTRAP_N,
            }
        ccc_section[pair_key] = per_metric

    if labels is None:
        spearman_section: dict = {"skipped": "no labels provided"}
        compare_section: dict = {"skipped": "no labels provided"}
    else:
        qual = [labels[c] for c in case_ids]
        spearman_section = {}
        for method in methods:
            per_metric = {}
            for metric in QUALITATIVE_METRICS:
                xs = [values[(c, method)][metric] for c in case_ids]
                pairs_ok = [(q, x) for q, x in zip(qual, xs) if x is not None]
                if len(pairs_ok) < 3:
                    per_metric[metric] = {"skipped": "fewer than 3 complete pairs"}
                    continue
                try:
                    rho, p = spearman(
                        [float(q) for q, _ in pairs_ok], [x for _, x in pairs_ok]
                    )
                except ValueError as exc:
                    per_metric[metric] = {"skipped": str(exc)}
                    continue
                per_metric[metric] = {"n": len(pairs_ok), "rho": rho, "p": p}
            spearman_section[method] = per_metric

        compare_section = {}
        for method_a, method_b in pairs:
            pair_key = f"{method_a} vs {method_b}"
            per_metric = {}
            for metric in QUALITATIVE_METRICS:
                slot_seed = next_seed()
                rows = [
                    (labels[c], values[(c, method_a)][metric], values[(c, method_b)][metric])
                    for c in case_ids
                ]
                rows = [r for r in rows if r[1] is not None and r[2] is not None]
                if len(rows) < _MIN_BOOTSTRAP_N:
                    per_metric[metric] = {"skipped": "n < 8"}
                    continue
                try:
                    delta, p = bootstrap_compare_spearman(
                        [r[0] for r in rows],
                        [r[1] for r in rows],
                        [r[2] for r in rows],
                        resamples,
                        slot_seed,
                    )
                except ValueError as exc:
                    per_metric[metric] = {"skipped": str(exc)}
                    continue
                per_metric[metric] = {"n": len(rows), "delta_rho": delta, "p": p}
            compare_section[pair_key] = per_metric

    if scores_path is None:
        scores_section: dict = {"skipped": "no scores provided"}
    else:
        (method_a, method_b), per_reader = read_scores_csv(scores_path)
        scores_section = {"pair": f"{method_a} vs {method_b}", "readers": {}}
        for reader_id in sorted(per_reader):
            rows = per_reader[reader_id]
            xs = tuple(r[1] for r in rows)
            ys = tuple(r[2] for r in rows)
            try:
                statistic, p = wilcoxon_signed_rank(PairedSample(xs, ys))
            except ValueError as exc:
                scores_section["readers"][reader_id] = {"skipped": str(exc)}
                continue
            scores_section["readers"][reader_id] = {
                "n": len(xs),
                "statistic": statistic,
                "p": p,
            }

    return {
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "resamples": resamples,
        "n_cases": len(case_ids),
        "methods": methods,
        "ccc": ccc_section,
        "spearman_vs_qualitative": spearman_section,
        "bootstrap_compare": compare_section,
        "reader_scores": scores_section,
        "failures": list(failures or []),
    }


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_report_text(report: dict) -> str:
    """Plain-text table rendering of the report for terminals and logs."""
    lines = [
        f"Agreement report: {report['n_cases']} cases, "
        f"methods {', '.join(report['methods'])}",
        "",
        "CCC (95% CI)",
    ]
    for pair_key, per_metric in report["ccc"].items():
        for metric, cell in per_metric.items():
            if "skipped" in cell:
                body = f"skipped: {cell['skipped']}"
            else:
                body = (
                    f"{_fmt(cell['estimate'])} ({_fmt(cell['ci_low'])}, "
                    f"{_fmt(cell['ci_high'])}) n={cell['n']}"
                )
                if cell["ci_unreliable"]:
                    body += " [CI unreliable below n=8]"
            lines.append(f"  {pair_key:<28} {metric:<26} {body}")

    lines.append("")
    lines.append("Spearman vs qualitative BPE")
    section = report["spearman_vs_qualitative"]
    if "skipped" in section:
        lines.append(f"  skipped: {section['skipped']}")
    else:
        for method, per_metric in section.items():
            for metric, cell in per_metric.items():
                if "skipped" in cell:
                    body = f"skipped: {cell['skipped']}"
                else:
                    body = f"rho={_fmt(cell['rho'])} p={_fmt(cell['p'])} n={cell['n']}"
                lines.append(f"  {method:<28} {metric:<26} {body}")

    lines.append("")
    lines.append("Bootstrap comparison of Spearman correlations")
    section = report["bootstrap_compare"]
    if "skipped" in section:
        lines.append(f"  skipped: {section['skipped']}")
    else:
        for pair_key, per_metric in section.items():
            for metric, cell in per_metric.items():
                if "skipped" in cell:
                    body = f"skipped: {cell['skipped']}"
                else:
                    body = (
                        f"delta_rho={_fmt(cell['delta_rho'])} "
                        f"p={_fmt(cell['p'])} n={cell['n']}"
                    )
                lines.append(f"  {pair_key:<28} {metric:<26} {body}")

    lines.append("")
    lines.append("Reader scores (Wilcoxon signed-rank)")
    section = report["reader_scores"]
    if "skipped" in section:
        lines.append(f"  skipped: {section['skipped']}")
    else:
        for reader_id, cell in section["readers"].items():
            if "skipped" in cell:
                body = f"skipped: {cell['skipped']}"
            else:
                body = f"W={_fmt(cell['statistic'])} p={_fmt(cell['p'])} n={cell['n']}"
            lines.append(f"  {reader_id:<28} {section['pair']:<26} {body}")

    if report["failures"]:
        lines.append("")
        lines.append("Failures")
        for item in report["failures"]:
            namespace = f" [{item['namespace']}]" if item["namespace"] else ""
            lines.append(
                f"  {item['stage']}{namespace} {item['case_id']}: {item['error']}"
            )
    lines.append("")
    return "\n".join(lines)


def write_report(report: dict, out_dir: str | Path) -> tuple[Path, Path]:
    """Write report.json (sorted keys, stable bytes) and report.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    with open(json_path, "w", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    text_path = out / "report.txt"
    with open(text_path, "w", newline="\n") as fh:
        fh.write(render_report_text(report))
    return json_path, text_path
