import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from runrace.criteria import HaltPolicy
from runrace.errors import FormatError
from runrace.formats import (
    ReportDocument,
    TraceSet,
    emit_manifest,
    emit_report,
    emit_trace,
    load_traces,
    manifest_path,
    parse_report,
    parse_trace,
    save_traces,
)
from runrace.inference import InferenceConfig
from runrace.race import FailRecord, RaceConfig, RaceReport, gen_synthetic, run_race

FAST = InferenceConfig(chain_length=900, burn_in=300, thinning=6)
HEAD = "run_id,epoch,validation_error\n"


def test_parse_simple_trace():
    ts = parse_trace(HEAD + "a,1,0.5\na,2,0.4\nb,1,0.7\nb,2,\nb,3,nan\n")
    assert ts.run_ids == ["a", "b"]
    assert list(ts.traces["a"]) == [0.5, 0.4]
    assert ts.traces["b"][0] == 0.7 and np.isnan(ts.traces["b"][1:]).all()
    assert ts.horizon() == 3


def test_rows_may_arrive_in_any_order():
    ts = parse_trace(HEAD + "a,2,0.4\nb,1,0.7\na,1,0.5\n")
    assert list(ts.traces["a"]) == [0.5, 0.4]


@pytest.mark.parametrize("body,line,needle", [
    ("a,0,0.5\n", 2, "start at 1"),
    ("a,1,0.5\na,1,0.4\n", 3, "first on line 2"),
    ("a,1,0.5\na,3,0.4\n", 3, "missing 2"),
    ("a,1,-0.1\n", 2, ">= 0"),
    ("a,1,inf\n", 2, ">= 0"),
    ("a,1,abc\n", 2, "not a number"),
    ("a,x,0.1\n", 2, "not an integer"),
    ("a,1\n", 2, "3 fields"),
    (",1,0.3\n", 2, "empty run_id"),
])
def test_format_errors_name_the_line(body, line, needle):
    with pytest.raises(FormatError) as err:
        parse_trace(HEAD + body)
    assert err.value.line == line
    assert needle in str(err.value)
    assert str(err.value).startswith(f"line {line}:")


def test_wrong_or_missing_header():
    with pytest.raises(FormatError):
        parse_trace("run,epoch,error\na,1,0.5\n")
    with pytest.raises(FormatError):
        parse_trace("")


def test_manifest_sets_order_horizon_and_configs():
    manifest = {"horizon_T": 4, "runs": [{"id": "b", "config": {"lr": 0.1}}, {"id": "a"}]}
    ts = parse_trace(HEAD + "a,1,0.5\nb,1,0.6\n", manifest)
    assert ts.run_ids == ["b", "a"]
    assert ts.horizon() == 4
    assert ts.configs == {"b": {"lr": 0.1}}


@pytest.mark.parametrize("manifest", [
    {"horizon_T": 1, "runs": []},  # trace longer than the horizon
    {"horizon_T": 0},
    {"horizon_T": 5, "runs": [{"id": "b"}]},  # a is not listed
    {"horizon_T": 5, "runs": [{"id": "a"}, {"id": "a"}]},
    "[1, 2]",
    "{",
])
def test_bad_manifests(manifest):
    with pytest.raises(FormatError):
        parse_trace(HEAD + "a,1,0.5\na,2,0.4\n", manifest)


def test_file_round_trip(tmp_path):
    corpus = gen_synthetic(4, 12, seed=2)
    ts = TraceSet(corpus.traces, 12, {r: {"family": corpus.families[r]} for r in corpus.traces})
    path = tmp_path / "runs.csv"
    save_traces(ts, path)
    assert manifest_path(path) == tmp_path / "runs.manifest.json"
    back = load_traces(path)
    assert back == ts
    assert emit_trace(back) == path.read_text()
    assert emit_manifest(back) == manifest_path(path).read_text()


def test_load_without_manifest(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(HEAD + "a,1,0.5\n")
    ts = load_traces(path)
    assert ts.horizon_T is None and ts.horizon() == 1


values = st.one_of(st.floats(0, 10, allow_nan=False), st.just(math.nan))


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.from_regex(r"[a-z][a-z0-9_-]{0,8}", fullmatch=True),
                       st.lists(values, min_size=1, max_size=8), min_size=1, max_size=5))
def test_trace_text_round_trip(data):
    ts = TraceSet({r: np.array(v, dtype=float) for r, v in data.items()})
    text = emit_trace(ts)
    back = parse_trace(text)
    assert back == ts
    assert emit_trace(back) == text


# -- reports ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def race_report():
    corpus = gen_synthetic(5, 20, seed=1)
    return run_race(corpus.traces, RaceConfig(20, HaltPolicy("f", 0.5), FAST))


def test_report_round_trip(race_report):
    text = emit_report(race_report)
    assert json.loads(text)["kind"] == "race"
    back = parse_report(text)
    assert back == race_report
    assert emit_report(back) == text


def test_document_round_trip(race_report):
    doc = ReportDocument({"synthetic": (race_report, race_report)}, {"seed": 0})
    text = emit_report(doc)
    back = parse_report(text)
    assert back == doc
    assert emit_report(back) == text


def test_report_errors():
    with pytest.raises(FormatError):
        parse_report("not json")
    with pytest.raises(FormatError):
        parse_report('{"kind": "race", "version": 2}')
    with pytest.raises(FormatError):
        parse_report('{"kind": "race", "version": 1, "report": {}}')
    with pytest.raises(FormatError):
        emit_report(RaceReport("a", 0.5, False, 2, 1, 2, 2, None, {"x": None}), "xml")


def _fake(savings, fail=None, criterion="f", delta=0.5):
    executed = round(1000 * (1 - savings))
    return RaceReport(criterion, delta, False, 50, 20, executed, 1000, fail, {})


def test_table_cells_and_best_marker():
    fail = FailRecord("r1", 9, 1.083, 1.164)
    doc = ReportDocument({"cifar": (_fake(0.721), _fake(0.8, fail, delta=0.3), _fake(0.1, criterion="a"))})
    lines = emit_report(doc, "table").splitlines()
    assert lines[0].split() == ["testbed", "criterion", "delta", "guards", "result", "best"]
    assert "−72.1%" in lines[1] and lines[1].endswith("*")
    assert "−80.0% FAIL by 1.083 → 1.164" in lines[2] and not lines[2].endswith("*")
    assert lines[3].split()[-1] == "−10.0%"
