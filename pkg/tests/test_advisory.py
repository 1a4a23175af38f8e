import io
import json

import numpy as np
import pytest

from runrace.advisory import AdvisoryServer, serve
from runrace.criteria import HaltPolicy
from runrace.errors import NotFoundError, ProtocolError
from runrace.inference import InferenceConfig
from runrace.race import RaceConfig, gen_synthetic, run_race

FAST = InferenceConfig(chain_length=900, burn_in=300, thinning=6)


def server(T=20, criterion="f", delta=0.5, guards=False):
    return AdvisoryServer(RaceConfig(T, HaltPolicy(criterion, delta, guards), FAST))


def test_registration():
    s = server()
    assert s.register() == "run-0"
    assert s.register("x", {"lr": 0.1}) == "x"
    with pytest.raises(ProtocolError):
        s.register("x")
    s.report("run-0", 1, 0.5)
    with pytest.raises(ProtocolError):
        s.register("late")


def test_decision_before_and_during_warmup():
    s = server()
    s.register("a")
    s.register("b")
    assert s.decision("a")[1].reason == "warmup"
    s.report("a", 1, 0.5)
    epoch, d = s.decision("a")
    assert d.reason == "pending-barrier" and d.action == "continue"
    assert s.report("b", 1, 0.6) is True
    assert s.decision("a") == (1, s.last["a"][1])
    assert s.decision("a")[1].reason == "warmup"


def test_unknown_run():
    s = server()
    s.register("a")
    with pytest.raises(NotFoundError):
        s.report("zz", 1, 0.3)
    with pytest.raises(NotFoundError):
        s.decision("zz")


def test_epoch_order_and_duplicates():
    s = server()
    s.register("a")
    s.register("b")
    with pytest.raises(ProtocolError):
        s.report("a", 2, 0.5)
    s.report("a", 1, 0.5)
    with pytest.raises(ProtocolError):
        s.report("a", 1, 0.5)


def test_report_after_halt_is_rejected():
    s = server()
    s.register("a")
    s.register("b")
    s.report("a", 1, None)  # failed measurement halts the run
    s.report("b", 1, 0.4)
    assert s.decision("a")[1].action == "halt"
    with pytest.raises(ProtocolError):
        s.report("a", 2, 0.3)
    assert s.report("b", 2, 0.35) is True  # the barrier now only waits for b


def test_handle_envelopes():
    s = server()
    assert s.handle({"action": "register", "run_id": "a"}) == {"ok": True, "run_id": "a"}
    out = s.handle({"action": "report", "run_id": "a", "epoch": 1, "error": 0.4})
    assert out == {"ok": True, "run_id": "a", "epoch": 1, "barrier": True}
    assert s.handle({"action": "decision", "run_id": "q"})["error"] == "not-found"
    assert s.handle({"action": "report", "run_id": "a", "epoch": "2"})["error"] == "protocol-error"
    assert s.handle({"action": "report", "run_id": "a", "epoch": 2, "error": "x"})["error"] == "protocol-error"
    assert s.handle({"action": "dance"})["error"] == "protocol-error"
    assert s.handle([1])["error"] == "protocol-error"
    st = s.handle({"action": "status"})
    assert st["epoch"] == 1 and st["alive"] == ["a"] and st["waiting_for"] == ["a"]


def test_serve_json_lines():
    lines = [
        {"action": "register", "run_id": "a"},
        {"action": "report", "run_id": "a", "epoch": 1, "error": 0.5},
        {"action": "decision", "run_id": "a"},
    ]
    stdin = io.StringIO("\n".join(json.dumps(x) for x in lines) + "\n\nnot json\n")
    stdout = io.StringIO()
    serve(RaceConfig(10, HaltPolicy("a", 0.5), FAST), stdin, stdout)
    out = [json.loads(x) for x in stdout.getvalue().splitlines()]
    assert len(out) == 4
    assert out[2]["action"] == "continue" and out[2]["reason"] == "warmup"
    assert out[3] == {"ok": False, "error": "format-error", "message": "Expecting value"}


@pytest.mark.parametrize("criterion,delta,guards", [("f", 0.5, False), ("a", 0.3, True), ("sh", 0.5, False)])
def test_online_matches_offline(criterion, delta, guards):
    corpus = gen_synthetic(6, 20, seed=11)
    cfg = RaceConfig(20, HaltPolicy(criterion, delta, guards), FAST, master_seed=3)
    offline = run_race(corpus.traces, cfg)
    s = AdvisoryServer(cfg)
    for r in corpus.traces:
        s.register(r)
    rng = np.random.default_rng(0)
    for t in range(20):
        alive = s.state.alive() if s.state else list(corpus.traces)
        for r in rng.permutation(alive):  # arrival order within an epoch is irrelevant
            s.report(str(r), t + 1, float(corpus.traces[str(r)][t]))
        if not s.state.alive():
            break
    assert s.state.halt_epochs() == offline.outcomes
