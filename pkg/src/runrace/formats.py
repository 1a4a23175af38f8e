"""Trace files, manifests and report documents.

Trace rows are comma-separated with the header ``run_id,epoch,validation_error``.
Epochs start at 1 and every run's rows must form a gap-free prefix.  An empty
error field or ``nan`` flags an unusable measurement.  The manifest is a JSON
sidecar::

    {"horizon_T": 50, "runs": [{"id": "run-00", "config": {...}}, ...]}

Reports serialise to JSON (``machine``) or to a plain-text league table
(``table``).  Both writers are canonical: emitting a parsed document gives the
same text back.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .criteria import ThresholdSpec
from .errors import FormatError
from .race import FailRecord, HaltEvent, RaceReport

HEADER = ("run_id", "epoch", "validation_error")
REPORT_VERSION = 1


@dataclass
class TraceSet:
    """Per-run error sequences in file order, plus the manifest fields."""

    traces: dict[str, np.ndarray]
    horizon_T: int | None = None
    configs: dict[str, dict] = field(default_factory=dict)

    @property
    def run_ids(self) -> list[str]:
        return list(self.traces)

    def horizon(self) -> int:
        if self.horizon_T is not None:
            return self.horizon_T
        return max((v.size for v in self.traces.values()), default=0)

    def __eq__(self, other):
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (self.horizon_T == other.horizon_T and self.configs == other.configs
                and list(self.traces) == list(other.traces)
                and all(np.array_equal(self.traces[r], other.traces[r], equal_nan=True)
                        for r in self.traces))


def _fmt_value(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def _parse_value(text: str, line: int) -> float:
    s = text.strip()
    if s == "" or s.lower() == "nan":
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise FormatError(f"validation_error {text!r} is not a number", line) from None
    if not math.isfinite(v) or v < 0:
        raise FormatError(f"validation_error must be finite and >= 0, got {text!r}", line)
    return v


def parse_trace(source, manifest: Mapping | str | None = None) -> TraceSet:
    """Parse trace rows from text or an open file; optionally attach a manifest."""
    text = source if isinstance(source, str) else source.read()
    rows = csv.reader(io.StringIO(text))
    header = None
    seen: dict[str, dict[int, tuple[float, int]]] = {}
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if header is None:
            header = tuple(c.strip() for c in row)
            if header != HEADER:
                raise FormatError(f"expected header {','.join(HEADER)}", lineno)
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, got {len(row)}", lineno)
        run, ep, val = (c.strip() for c in row)
        if not run:
            raise FormatError("empty run_id", lineno)
        try:
            epoch = int(ep)
        except ValueError:
            raise FormatError(f"epoch {ep!r} is not an integer", lineno) from None
        if epoch < 1:
            raise FormatError(f"epochs start at 1, got {epoch}", lineno)
        per_run = seen.setdefault(run, {})
        if epoch in per_run:
            raise FormatError(f"duplicate row for ({run}, {epoch}); first on line {per_run[epoch][1]}",
                              lineno)
        per_run[epoch] = (_parse_value(val, lineno), lineno)
    if header is None:
        raise FormatError("missing header", 1)

    traces = {}
    for run, per_run in seen.items():
        for expect, epoch in enumerate(sorted(per_run), start=1):
            if epoch != expect:
                raise FormatError(f"run {run!r} jumps to epoch {epoch}, missing {expect}",
                                  per_run[epoch][1])
        traces[run] = np.array([per_run[e][0] for e in sorted(per_run)], dtype=float)
    out = TraceSet(traces)
    if manifest is not None:
        attach_manifest(out, manifest)
    return out


def emit_trace(traces: TraceSet | Mapping[str, Sequence[float]]) -> str:
    """Canonical trace text: header, runs in order, epochs ascending."""
    data = traces.traces if isinstance(traces, TraceSet) else traces
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for run, values in data.items():
        for epoch, v in enumerate(np.asarray(values, dtype=float), start=1):
            w.writerow((run, epoch, _fmt_value(v)))
    return buf.getvalue()


def parse_manifest(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError("manifest must be a JSON object")
    T = doc.get("horizon_T")
    if not isinstance(T, int) or isinstance(T, bool) or T < 1:
        raise FormatError("manifest horizon_T must be a positive integer")
    runs = doc.get("runs", [])
    if not isinstance(runs, list):
        raise FormatError("manifest runs must be a list")
    ids = []
    for r in runs:
        if not isinstance(r, dict) or not isinstance(r.get("id"), str):
            raise FormatError("each manifest run needs a string id")
        if "config" in r and not isinstance(r["config"], dict):
            raise FormatError(f"config of run {r['id']!r} must be an object")
        ids.append(r["id"])
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate run id in manifest")
    return doc


def attach_manifest(traces: TraceSet, manifest: Mapping | str) -> TraceSet:
    doc = parse_manifest(manifest) if isinstance(manifest, str) else parse_manifest(json.dumps(manifest))
    T = doc["horizon_T"]
    listed = [r["id"] for r in doc.get("runs", [])]
    if listed:
        missing = [r for r in traces.traces if r not in listed]
        if missing:
            raise FormatError(f"runs {missing} are not in the manifest")
        # manifest order wins; listed runs without rows get empty traces
        traces.traces = {r: traces.traces.get(r, np.empty(0)) for r in listed}
    long = [r for r, v in traces.traces.items() if v.size > T]
    if long:
        raise FormatError(f"runs {long} go past horizon_T={T}")
    traces.horizon_T = T
    traces.configs = {r["id"]: dict(r["config"]) for r in doc.get("runs", []) if "config" in r}
    return traces


def emit_manifest(traces: TraceSet) -> str:
    runs = []
    for r in traces.traces:
        entry = {"id": r}
        if r in traces.configs:
            entry["config"] = traces.configs[r]
        runs.append(entry)
    return json.dumps({"horizon_T": traces.horizon(), "runs": runs}, indent=2, sort_keys=True) + "\n"


def manifest_path(trace_path) -> Path:
    """``runs.csv`` -> ``runs.manifest.json``."""
    p = Path(trace_path)
    return p.with_name(p.stem + ".manifest.json")


def load_traces(path) -> TraceSet:
    path = Path(path)
    side = manifest_path(path)
    manifest = side.read_text() if side.exists() else None
    return parse_trace(path.read_text(), manifest)


def save_traces(traces: TraceSet, path) -> None:
    path = Path(path)
    path.write_text(emit_trace(traces))
    manifest_path(path).write_text(emit_manifest(traces))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ReportDocument:
    """Reports grouped by testbed, with a free-form config echo."""

    testbeds: dict[str, tuple[RaceReport, ...]]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "testbeds", {k: tuple(v) for k, v in self.testbeds.items()})


def _threshold_to_json(spec: ThresholdSpec) -> dict:
    return {"criterion": spec.criterion, "tau": spec.tau, "k_used": spec.k_used,
            "source_run": spec.source_run, "fallback": spec.fallback}


def _report_to_json(rep: RaceReport) -> dict:
    fail = None
    if rep.fail is not None:
        fail = {"best_run_id": rep.fail.best_run_id, "halt_epoch": rep.fail.halt_epoch,
                "best_final_error": rep.fail.best_final_error,
                "surviving_best_final_error": rep.fail.surviving_best_final_error}
    return {
        "config": {"criterion": rep.criterion, "delta": rep.delta,
                   "guards_enabled": rep.guards_enabled, "horizon_T": rep.horizon_T,
                   "warmup_epochs": rep.warmup_epochs, "master_seed": rep.master_seed},
        "n_runs": rep.n_runs,
        "epochs_executed": rep.epochs_executed,
        "epochs_budgeted": rep.epochs_budgeted,
        "savings": rep.savings,
        "fail": fail,
        "outcomes": rep.outcomes,
        "thresholds": [{"epoch": t, **_threshold_to_json(s)} for t, s in rep.thresholds],
        "k_values": [{"epoch": t, "k": k} for t, k in rep.k_values],
        "halts": [{"epoch": h.epoch, "run_id": h.run_id, "reason": h.reason,
                   "probability": h.probability, "tau": h.tau} for h in rep.halts],
    }


def _report_from_json(d: Mapping) -> RaceReport:
    try:
        cfg = d["config"]
        fail = d["fail"]
        rep = RaceReport(
            criterion=cfg["criterion"],
            delta=cfg["delta"],
            guards_enabled=cfg["guards_enabled"],
            horizon_T=cfg["horizon_T"],
            n_runs=d["n_runs"],
            epochs_executed=d["epochs_executed"],
            epochs_budgeted=d["epochs_budgeted"],
            fail=None if fail is None else FailRecord(
                fail["best_run_id"], fail["halt_epoch"], fail["best_final_error"],
                fail["surviving_best_final_error"]),
            outcomes=dict(d["outcomes"]),
            thresholds=tuple(
                (t["epoch"], ThresholdSpec(t["criterion"], t["tau"], t["k_used"],
                                           t["source_run"], t["fallback"]))
                for t in d["thresholds"]),
            halts=tuple(HaltEvent(h["epoch"], h["run_id"], h["reason"], h["probability"], h["tau"])
                        for h in d["halts"]),
            warmup_epochs=cfg["warmup_epochs"],
            master_seed=cfg["master_seed"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed report: {exc!r}") from None
    return rep


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_report(report: RaceReport | ReportDocument, format: str = "machine") -> str:
    """Serialise a single report or a document; ``format`` is machine or table."""
    if format == "table":
        doc = report if isinstance(report, ReportDocument) else ReportDocument({"": (report,)})
        return render_table(doc)
    if format != "machine":
        raise FormatError(f"unknown report format {format!r}")
    if isinstance(report, RaceReport):
        return _dumps({"kind": "race", "version": REPORT_VERSION, "report": _report_to_json(report)})
    return _dumps({
        "kind": "document",
        "version": REPORT_VERSION,
        "config": report.config,
        "testbeds": {name: [_report_to_json(r) for r in reps]
                     for name, reps in report.testbeds.items()},
    })


def parse_report(text: str) -> RaceReport | ReportDocument:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"report is not JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("version") != REPORT_VERSION:
        raise FormatError("not a version-1 report")
    if doc.get("kind") == "race":
        return _report_from_json(doc["report"])
    if doc.get("kind") == "document":
        return ReportDocument(
            {name: tuple(_report_from_json(r) for r in reps) for name, reps in doc["testbeds"].items()},
            doc.get("config", {}))
    raise FormatError(f"unknown report kind {doc.get('kind')!r}")


def render_table(doc: ReportDocument) -> str:
    """One row per (testbed, criterion, delta).

    ``best`` marks the row(s) with the largest savings among the FAIL-free rows
    of a testbed.
    """
    head = ("testbed", "criterion", "delta", "guards", "result", "best")
    rows = []
    for name, reps in doc.testbeds.items():
        ok = [r.savings for r in reps if r.fail is None]
        top = round(max(ok), 3) if ok else None
        for r in reps:
            best = "*" if r.fail is None and round(r.savings, 3) == top else ""
            rows.append((name or "-", r.criterion, format(r.delta, "g"),
                         "on" if r.guards_enabled else "off", r.cell(), best))
    widths = [max(len(x[i]) for x in [head, *rows]) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head, *rows]]
    return "\n".join(lines) + "\n"
