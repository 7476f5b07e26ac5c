"""Evaluation records, aggregation, ranking and report rendering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyInputError

RECORD_HEADER = ["method", "image", "metric", "value", "failed", "wall_ms"]
QUARTILE_HEADER = ["method", "metric", "n", "failed", "mean", "std", "min", "q1", "median", "q3", "max", "rank"]
# lower is better for distances, higher for similarities
ASCENDING = {"emd": True, "min": False}
METRIC_TITLES = {"emd": "EMD", "min": "MIN"}


@dataclass(frozen=True)
class EvalRecord:
    method: str
    image: str
    metric: str
    value: float
    failed: bool = False
    wall_ms: float | None = None

    def row(self) -> list[str]:
        value = "nan" if math.isnan(self.value) else repr(float(self.value))
        wall = "" if self.wall_ms is None else f"{self.wall_ms:.3f}"
        return [self.method, self.image, self.metric, value, "1" if self.failed else "0", wall]


def write_records(path, records) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    w.writerows(r.row() for r in records)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_records(path) -> list[EvalRecord]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"unexpected records header {reader.fieldnames}")
        return [EvalRecord(r["method"], r["image"], r["metric"], float(r["value"]), r["failed"] == "1",
                           float(r["wall_ms"]) if r["wall_ms"] else None) for r in reader]


@dataclass(frozen=True)
class Summary:
    method: str
    metric: str
    n: int
    failed: int
    mean: float
    std: float
    quartiles: tuple  # min, q1, median, q3, max
    rank: int = 0


def summarize(values, method: str, metric: str, failed: int = 0) -> Summary:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        nan = float("nan")
        return Summary(method, metric, 0, failed, nan, nan, (nan,) * 5)
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return Summary(method, metric, int(v.size), failed, float(v.mean()), float(v.std()),
                   tuple(float(x) for x in q))


def assign_ranks(summaries: list[Summary], ascending: bool) -> list[Summary]:
    """Competition ranking by mean; equal means share a rank and the next rank is skipped.

    Methods without a valid mean rank after all others.  Within a tie the
    listing order is by method name.
    """
    def key(s):
        missing = math.isnan(s.mean)
        m = 0.0 if missing else (s.mean if ascending else -s.mean)
        return (missing, m, s.method)

    ordered = sorted(summaries, key=key)
    out, prev, rank = [], None, 0
    for pos, s in enumerate(ordered, start=1):
        k = key(s)[:2]
        if k != prev:
            rank, prev = pos, k
        out.append(Summary(s.method, s.metric, s.n, s.failed, s.mean, s.std, s.quartiles, rank))
    return out


def aggregate(records) -> dict[str, list[Summary]]:
    """Per metric, ranked summaries of every method's valid records."""
    records = list(records)
    if not records:
        raise EmptyInputError("no evaluation records to report")
    groups: dict = {}
    for r in records:
        g = groups.setdefault(r.metric, {}).setdefault(r.method, ([], [0]))
        if r.failed or not math.isfinite(r.value):
            g[1][0] += 1
        else:
            g[0].append(r.value)
    out = {}
    for metric in sorted(groups, key=lambda m: (m not in ASCENDING, m)):
        sums = [summarize(vals, method, metric, nfail[0]) for method, (vals, nfail) in groups[metric].items()]
        out[metric] = assign_ranks(sums, ASCENDING.get(metric, True))
    return out


def _fmt(x: float, digits: int = 3) -> str:
    return "nan" if math.isnan(x) else f"{x:.{digits}f}"


def render_markdown(table: dict[str, list[Summary]], title: str = "Results") -> str:
    """Markdown table: method, then rank and mean ± std for each metric, then failures."""
    metrics = list(table)
    by_method = {m: {} for m in sorted({s.method for sums in table.values() for s in sums})}
    for metric, sums in table.items():
        for s in sums:
            by_method[s.method][metric] = s
    first = metrics[0]
    order = sorted(by_method, key=lambda m: (by_method[m][first].rank if first in by_method[m] else 10 ** 6, m))
    head = ["Method"]
    for metric in metrics:
        head += ["Ranking", f"{METRIC_TITLES.get(metric, metric)} mean ± std"]
    head.append("Failed")
    lines = [f"# {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for method in order:
        cells = [method]
        failed = 0
        for metric in metrics:
            s = by_method[method].get(metric)
            if s is None:
                cells += ["", ""]
                continue
            failed = max(failed, s.failed)
            cells += [str(s.rank), f"{_fmt(s.mean)} ± {_fmt(s.std)}"]
        cells.append(str(failed))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_quartiles(table: dict[str, list[Summary]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(QUARTILE_HEADER)
    for metric, sums in table.items():
        for s in sorted(sums, key=lambda s: s.method):
            w.writerow([s.method, metric, s.n, s.failed, _fmt(s.mean, 6), _fmt(s.std, 6),
                        *(_fmt(q, 6) for q in s.quartiles), s.rank])
    return buf.getvalue()


def family_means(table: dict[str, list[Summary]], families: dict) -> dict[str, dict[str, float]]:
    """Mean of the member methods' means, per metric and family."""
    out = {}
    for metric, sums in table.items():
        means = {s.method: s.mean for s in sums}
        out[metric] = {}
        for fam, members in families.items():
            vals = [means[m] for m in members if m in means and not math.isnan(means[m])]
            out[metric][fam] = float(np.mean(vals)) if vals else float("nan")
    return out
