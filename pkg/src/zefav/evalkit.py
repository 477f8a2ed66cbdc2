"""Scoring of verification runs and the report tables."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .datasets import FEVEROUS_CHALLENGES, ClaimRecord
from .errors import AlignmentError, DuplicateConfig
from .pipeline import ABLATION_CONFIGS, ClaimRunTrace
from .prompt_kit import AblationFlags, ParseStatus

logger = logging.getLogger(__name__)

DATASET_TITLES = {
    "hover-2hop": "HoVer (2-hop)",
    "hover-3hop": "HoVer (3-hop)",
    "hover-4hop": "HoVer (4-hop)",
    "feverous-s": "FEVEROUS-S",
}
CHECK, CROSS = "✓", "✗"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with True (supports) as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_pairs(cls, pairs) -> ConfusionMatrix:
        tp = fp = fn = tn = 0
        for gold, pred in pairs:
            if gold and pred:
                tp += 1
            elif pred:
                fp += 1
            elif gold:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def f1_true(self) -> float:
        return _f1(self.tp, self.fp, self.fn)

    def f1_false(self) -> float:
        # the negative class sees tn as hits, fn as its false positives
        return _f1(self.tn, self.fn, self.fp)

    def macro_f1(self) -> float:
        return (self.f1_true() + self.f1_false()) / 2

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}

    def render(self) -> str:
        w = max(len(str(v)) for v in (self.tp, self.fp, self.fn, self.tn, "refutes"))
        corner = "gold \\ pred"
        rows = [
            f"{corner:<14}{'supports':>{w + 2}}{'refutes':>{w + 2}}",
            f"{'supports':<14}{self.tp:>{w + 2}}{self.fn:>{w + 2}}",
            f"{'refutes':<14}{self.fp:>{w + 2}}{self.tn:>{w + 2}}",
        ]
        return "\n".join(rows)


def _f1(hits: int, false_pos: int, false_neg: int) -> float:
    denom = 2 * hits + false_pos + false_neg
    return 0.0 if hits == 0 else 2 * hits / denom


@dataclass(frozen=True)
class StratumScore:
    count: int
    f1_percent: float


@dataclass
class EvalReport:
    flags: AblationFlags
    dataset: str
    f1_percent: float
    matrix: ConfusionMatrix
    by_stratum: dict[str, StratumScore] = field(default_factory=dict)
    defaulted_rate: float = 0.0
    status_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": {"flags": self.flags.to_dict(), "dataset": self.dataset},
            "f1_percent": self.f1_percent,
            "matrix": self.matrix.to_dict(),
            "by_stratum": {k: {"count": v.count, "f1_percent": v.f1_percent} for k, v in self.by_stratum.items()},
            "defaulted_rate": self.defaulted_rate,
            "status_counts": dict(self.status_counts),
        }

    @classmethod
    def from_dict(cls, data: dict) -> EvalReport:
        return cls(
            flags=AblationFlags.from_dict(data["config"]["flags"]),
            dataset=data["config"]["dataset"],
            f1_percent=data["f1_percent"],
            matrix=ConfusionMatrix(**data["matrix"]),
            by_stratum={k: StratumScore(v["count"], v["f1_percent"]) for k, v in data.get("by_stratum", {}).items()},
            defaulted_rate=data.get("defaulted_rate", 0.0),
            status_counts=dict(data.get("status_counts", {})),
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return path

    def render(self) -> str:
        f = self.flags
        lines = [
            f"dataset: {self.dataset}  relations={_mark(f.use_relations)} infore={_mark(f.use_infore)} "
            f"context={_mark(f.use_context)}",
            f"claims: {self.matrix.total}  macro-F1: {self.f1_percent:.2f}  defaulted: {100 * self.defaulted_rate:.2f}%",
            self.matrix.render(),
        ]
        return "\n".join(lines)


def _mark(flag: bool) -> str:
    return CHECK if flag else CROSS


def _predicted(trace: ClaimRunTrace) -> bool:
    if trace.failed or trace.outcome is None:
        return False
    return trace.outcome.label


def score(
    traces: Sequence[ClaimRunTrace],
    records: Sequence[ClaimRecord],
    dataset: str = "custom",
    flags: AblationFlags | None = None,
) -> EvalReport:
    """Macro-F1 over {True, False} in percent, plus confusion matrix and strata.

    Failed traces and unparseable verdicts count as predicted False.
    """
    by_id = {}
    for rec in records:
        if rec.id in by_id:
            raise AlignmentError(f"duplicate record id {rec.id}")
        by_id[rec.id] = rec
    trace_ids = [t.claim_id for t in traces]
    if len(set(trace_ids)) != len(trace_ids):
        raise AlignmentError("duplicate claim ids among traces")
    if set(trace_ids) != set(by_id):
        missing = sorted(set(by_id) - set(trace_ids))[:5]
        extra = sorted(set(trace_ids) - set(by_id))[:5]
        raise AlignmentError(f"traces and records disagree (missing {missing}, unexpected {extra})")
    unlabeled = [rid for rid, rec in by_id.items() if rec.gold is None]
    if unlabeled:
        raise AlignmentError(f"records without gold labels cannot be scored: {unlabeled[:5]}")
    if flags is None:
        flags = traces[0].flags if traces else AblationFlags()

    pairs = [(by_id[t.claim_id].gold, _predicted(t)) for t in traces]
    matrix = ConfusionMatrix.from_pairs(pairs)

    statuses: dict[str, int] = {}
    for t in traces:
        key = "error" if t.failed or t.outcome is None else t.outcome.parse_status.value
        statuses[key] = statuses.get(key, 0) + 1
    defaulted = statuses.get(ParseStatus.DEFAULTED.value, 0) + statuses.get("error", 0)

    strata: dict[str, list] = {}
    if any(by_id[t.claim_id].stratum is not None for t in traces):
        for t, pair in zip(traces, pairs):
            name = by_id[t.claim_id].stratum or "(none)"
            strata.setdefault(name, []).append(pair)
    by_stratum = {
        name: StratumScore(len(ps), 100 * ConfusionMatrix.from_pairs(ps).macro_f1()) for name, ps in strata.items()
    }

    return EvalReport(
        flags=flags,
        dataset=dataset,
        f1_percent=100 * matrix.macro_f1(),
        matrix=matrix,
        by_stratum=by_stratum,
        defaulted_rate=defaulted / len(traces) if traces else 0.0,
        status_counts=dict(sorted(statuses.items())),
    )


# --- tables -----------------------------------------------------------------


def _table(rows: list[list[str]], align: list[str]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for n, row in enumerate(rows):
        cells = [c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(row, widths, align)]
        out.append(" | ".join(cells).rstrip())
        if n == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out)


@dataclass
class AblationGrid:
    datasets: list[str]
    rows: list[tuple[AblationFlags, list[float | None]]]
    warnings: list[str] = field(default_factory=list)

    def render(self) -> str:
        header = ["", "Relation", "InfoRE"] + [DATASET_TITLES.get(d, d) for d in self.datasets]
        body = [header]
        for i, (flags, cells) in enumerate(self.rows):
            block = ""
            if i % 3 == 0:
                block = "Has Evidence context" if flags.use_context else "No Evidence context"
            body.append(
                [block, _mark(flags.use_relations), _mark(flags.use_infore)]
                + ["" if c is None else f"{c:.2f}" for c in cells]
            )
        return _table(body, ["l", "l", "l"] + ["r"] * len(self.datasets))


def _dataset_order(names: list[str]) -> list[str]:
    known = [d for d in DATASET_TITLES if d in names]
    return known + [d for d in dict.fromkeys(names) if d not in DATASET_TITLES]


def ablation_grid(reports: Sequence[EvalReport]) -> AblationGrid:
    """Arrange reports into the six-configuration ablation layout.

    Rows: with context (✓✓, ✗✓, ✓✗) then without context in the same order.
    Missing cells stay empty and are listed in ``warnings``.
    """
    cells: dict[tuple[AblationFlags, str], float] = {}
    for rep in reports:
        key = (rep.flags, rep.dataset)
        if key in cells:
            raise DuplicateConfig(f"two reports for {rep.flags.label} on {rep.dataset}")
        cells[key] = rep.f1_percent
    datasets = _dataset_order([r.dataset for r in reports])
    unknown = {f for f, _ in cells} - set(ABLATION_CONFIGS)
    if unknown:
        logger.warning("reports outside the ablation grid ignored: %s", sorted(f.label for f in unknown))
    grid = AblationGrid(datasets, [])
    for flags in ABLATION_CONFIGS:
        row = [cells.get((flags, d)) for d in datasets]
        for d, c in zip(datasets, row):
            if c is None:
                grid.warnings.append(f"missing cell: {flags.label} on {d}")
        grid.rows.append((flags, row))
    for w in grid.warnings:
        logger.warning(w)
    return grid


def challenge_breakdown(report: EvalReport) -> str:
    """Per-challenge counts and F1 in FEVEROUS challenge order."""
    order = [c for c in FEVEROUS_CHALLENGES if c in report.by_stratum]
    order += sorted(s for s in report.by_stratum if s not in FEVEROUS_CHALLENGES)
    rows = [
        ["Type of challenge"] + order,
        ["Number of claims"] + [f"{report.by_stratum[s].count:,}" for s in order],
        ["F1-score (%)"] + [f"{report.by_stratum[s].f1_percent:.2f}" for s in order],
    ]
    return _table(rows, ["l"] + ["r"] * len(order))


def results_table(reports: Sequence[EvalReport]) -> str:
    """Claim counts and F1 per dataset, one row per flag configuration."""
    datasets = _dataset_order([r.dataset for r in reports])
    counts = {}
    for r in reports:
        counts.setdefault(r.dataset, r.matrix.total)
    configs = list(dict.fromkeys(r.flags for r in reports))
    f1 = {(r.flags, r.dataset): r.f1_percent for r in reports}
    rows = [[""] + [DATASET_TITLES.get(d, d) for d in datasets]]
    rows.append(["Number of claims"] + [f"{counts[d]:,}" for d in datasets])
    for flags in configs:
        name = "ZeFaV (w context)" if flags == AblationFlags() else flags.label
        if flags == AblationFlags(True, True, False):
            name = "ZeFaV (w/o context)"
        rows.append([name] + ["" if (flags, d) not in f1 else f"{f1[(flags, d)]:.2f}" for d in datasets])
    return _table(rows, ["l"] + ["r"] * len(datasets))
