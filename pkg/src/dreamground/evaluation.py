"""Scoring: trigger identification, trigger classification, event
identification, plus dataset loading and multi-run aggregation.

Scoring is per-document set matching, micro-averaged over the corpus:

* TI  - a predicted trigger (casefolded) appears among the gold triggers.
* TC  - the (event type, casefolded trigger) pair appears among gold pairs.
* EI  - the event type appears among gold types (deduplicated per doc).

A TC match is always also a TI match, so TC scores can never exceed TI.
"""

from __future__ import annotations

import enum
import io
import json
import os
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, TextIO, Union

from .errors import IdMismatchError, IoFailureError, ShapeMismatchError
from .ontology import Document, GroundedMention


class Metric(str, enum.Enum):
    TI = "TI"
    TC = "TC"
    EI = "EI"


@dataclass(frozen=True)
class Scores:
    """Single-run counts and the derived precision/recall/F1."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Scores":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


@dataclass(frozen=True)
class MeanScores:
    """Arithmetic means of per-run (or per-dataset) scores.

    The f1 here is the mean of the individual F1 values, not the harmonic
    mean of the mean precision and recall.
    """

    precision: float
    recall: float
    f1: float


Cell = Union[Scores, MeanScores]


@dataclass(frozen=True)
class GoldInstance:
    """One dataset line: a document plus its (possibly absent) gold labels."""

    id: str
    text: str
    mentions: tuple[GroundedMention, ...] = ()
    labeled: bool = True  # False when the line carried no mention list

    def to_document(self) -> Document:
        return Document(id=self.id, text=self.text)


def _mention_key(mention: GroundedMention, metric: Metric):
    if metric is Metric.TI:
        return mention.trigger.casefold()
    if metric is Metric.TC:
        return (mention.event_type, mention.trigger.casefold())
    return mention.event_type


def score(
    preds: Mapping[str, Sequence[GroundedMention]],
    golds: Sequence[GoldInstance],
    metric: Union[Metric, str],
) -> Scores:
    """Micro-averaged corpus scores for one metric.

    ``preds`` maps document id to predicted mentions; documents without an
    entry count as empty predictions. A predicted id with no gold
    counterpart raises IdMismatchError.
    """
    metric = Metric(metric)
    gold_ids = {g.id for g in golds}
    unknown = set(preds) - gold_ids
    if unknown:
        raise IdMismatchError(
            f"predictions reference unknown document ids: {sorted(unknown)[:5]}"
        )
    tp = fp = fn = 0
    for gold in golds:
        pred_keys = {_mention_key(m, metric) for m in preds.get(gold.id, ())}
        gold_keys = {_mention_key(m, metric) for m in gold.mentions}
        tp += len(pred_keys & gold_keys)
        fp += len(pred_keys - gold_keys)
        fn += len(gold_keys - pred_keys)
    return Scores.from_counts(tp, fp, fn)


_WORD_BOUNDARY_TMPL = r"(?<!\w){}(?!\w)"


def map_to_span(trigger: str, text: str) -> Optional[tuple[int, int]]:
    """First case-insensitive occurrence of ``trigger`` in ``text``.

    Occurrences aligned on word boundaries win over embedded ones; returns
    a character (start, end) span, or None when the trigger never occurs.
    """
    if not trigger:
        return None
    escaped = re.escape(trigger)
    match = re.search(_WORD_BOUNDARY_TMPL.format(escaped), text, re.IGNORECASE)
    if match is None:
        match = re.search(escaped, text, re.IGNORECASE)
    return match.span() if match else None


# --- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Per-dataset, per-metric breakdown plus the macro-averaged column."""

    datasets: dict[str, dict[Metric, Cell]]
    average: dict[Metric, MeanScores]
    runs: int = 1


def _macro_average(datasets: dict[str, dict[Metric, Cell]]) -> dict[Metric, MeanScores]:
    average = {}
    for metric in Metric:
        cells = [datasets[name][metric] for name in datasets]
        average[metric] = MeanScores(
            precision=sum(c.precision for c in cells) / len(cells),
            recall=sum(c.recall for c in cells) / len(cells),
            f1=sum(c.f1 for c in cells) / len(cells),
        )
    return average


def make_report(
    preds_by_dataset: Mapping[str, Mapping[str, Sequence[GroundedMention]]],
    golds_by_dataset: Mapping[str, Sequence[GoldInstance]],
) -> EvalReport:
    """Score one run over one or more datasets."""
    if set(preds_by_dataset) != set(golds_by_dataset):
        raise ShapeMismatchError(
            f"prediction datasets {sorted(preds_by_dataset)} do not match "
            f"gold datasets {sorted(golds_by_dataset)}"
        )
    datasets: dict[str, dict[Metric, Cell]] = {}
    for name in golds_by_dataset:
        datasets[name] = {
            metric: score(preds_by_dataset[name], golds_by_dataset[name], metric)
            for metric in Metric
        }
    return EvalReport(datasets=datasets, average=_macro_average(datasets), runs=1)


def aggregate_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Arithmetic mean of per-run scores, per dataset and per metric."""
    if not reports:
        raise ShapeMismatchError("no reports to aggregate")
    names = list(reports[0].datasets)
    for r in reports[1:]:
        if set(r.datasets) != set(names):
            raise ShapeMismatchError("reports cover different dataset sets")
    datasets: dict[str, dict[Metric, Cell]] = {}
    for name in names:
        datasets[name] = {}
        for metric in Metric:
            cells = [r.datasets[name][metric] for r in reports]
            datasets[name][metric] = MeanScores(
                precision=sum(c.precision for c in cells) / len(cells),
                recall=sum(c.recall for c in cells) / len(cells),
                f1=sum(c.f1 for c in cells) / len(cells),
            )
    return EvalReport(
        datasets=datasets,
        average=_macro_average(datasets),
        runs=sum(r.runs for r in reports),
    )


# --- dataset io ----------------------------------------------------------------

DatasetSource = Union[str, os.PathLike, TextIO]


def load_dataset(source: DatasetSource) -> tuple[list[GoldInstance], list[str]]:
    """Read a JSONL dataset; returns (instances, diagnostics).

    Each line holds {"id", "text", "mentions"?: [{"event_type","trigger"}]}.
    Malformed lines and mention entries become diagnostics instead of
    errors; lines without a mention list load as unlabeled instances.
    """
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise IoFailureError(f"cannot read dataset file: {exc}") from None
    else:
        lines = source.readlines()

    instances: list[GoldInstance] = []
    diagnostics: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(row, dict):
            diagnostics.append(f"line {lineno}: not an object")
            continue
        doc_id, text = row.get("id"), row.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            diagnostics.append(f"line {lineno}: missing or empty id")
            continue
        if not isinstance(text, str) or not text.strip():
            diagnostics.append(f"line {lineno}: missing or empty text")
            continue
        if doc_id in seen_ids:
            diagnostics.append(f"line {lineno}: duplicate id {doc_id!r}, skipped")
            continue
        seen_ids.add(doc_id)

        raw_mentions = row.get("mentions")
        labeled = raw_mentions is not None
        mentions: list[GroundedMention] = []
        if labeled:
            if not isinstance(raw_mentions, list):
                diagnostics.append(f"line {lineno}: mentions is not a list")
                raw_mentions = []
            for k, m in enumerate(raw_mentions):
                if (
                    not isinstance(m, dict)
                    or not isinstance(m.get("event_type"), str)
                    or not isinstance(m.get("trigger"), str)
                    or not m["event_type"]
                    or not m["trigger"]
                ):
                    diagnostics.append(f"line {lineno}: malformed mention {k}")
                    continue
                if map_to_span(m["trigger"], text) is None:
                    diagnostics.append(
                        f"line {lineno}: trigger {m['trigger']!r} not found in text"
                    )
                mentions.append(GroundedMention(m["event_type"], m["trigger"]))
        instances.append(
            GoldInstance(id=doc_id, text=text, mentions=tuple(mentions), labeled=labeled)
        )
    return instances, diagnostics


# --- rendering -----------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{100 * value:5.1f}"


def render_table(report: EvalReport) -> str:
    """Fixed-width table: one dataset per row, P/R/F1 per metric, in %."""
    names = list(report.datasets)
    width = max([len(n) for n in names + ["Average"]] + [8]) + 2
    header = f"{'dataset':<{width}}"
    for metric in Metric:
        header += f"  {metric.value + '-P':>6} {metric.value + '-R':>6} {metric.value + '-F1':>6}"
    lines = [f"runs: {report.runs}", header, "-" * len(header)]
    rows = [(n, report.datasets[n]) for n in names]
    rows.append(("Average", report.average))
    for name, cells in rows:
        line = f"{name:<{width}}"
        for metric in Metric:
            c = cells[metric]
            line += f"  {_fmt(c.precision):>6} {_fmt(c.recall):>6} {_fmt(c.f1):>6}"
        lines.append(line)
    return "\n".join(lines)


def render_csv(report: EvalReport) -> str:
    """Delimited form of the report (one row per dataset and metric)."""
    out = io.StringIO()
    out.write("dataset,metric,precision,recall,f1,tp,fp,fn\n")
    entries = list(report.datasets.items()) + [("Average", report.average)]
    for name, cells in entries:
        for metric in Metric:
            c = cells[metric]
            counts = (
                f"{c.tp},{c.fp},{c.fn}" if isinstance(c, Scores) else ",,"
            )
            out.write(
                f"{name},{metric.value},{c.precision:.6f},{c.recall:.6f},{c.f1:.6f},{counts}\n"
            )
    return out.getvalue()


def report_to_dict(report: EvalReport) -> dict:
    def cell_dict(c: Cell) -> dict:
        d = {"precision": c.precision, "recall": c.recall, "f1": c.f1}
        if isinstance(c, Scores):
            d.update(tp=c.tp, fp=c.fp, fn=c.fn)
        return d

    return {
        "runs": report.runs,
        "datasets": {
            name: {m.value: cell_dict(c) for m, c in cells.items()}
            for name, cells in report.datasets.items()
        },
        "average": {m.value: cell_dict(c) for m, c in report.average.items()},
    }


def report_from_dict(data: dict) -> EvalReport:
    def cell_from(d: dict) -> Cell:
        if "tp" in d:
            return Scores(
                tp=d["tp"], fp=d["fp"], fn=d["fn"],
                precision=d["precision"], recall=d["recall"], f1=d["f1"],
            )
        return MeanScores(precision=d["precision"], recall=d["recall"], f1=d["f1"])

    return EvalReport(
        datasets={
            name: {Metric(m): cell_from(c) for m, c in cells.items()}
            for name, cells in data["datasets"].items()
        },
        average={Metric(m): cell_from(c) for m, c in data["average"].items()},
        runs=data.get("runs", 1),
    )
