"""Online advice for training processes that poll between epochs.

Requests and responses are JSON objects, one per line on a stream.  Every
request carries an ``action``:

``register``  ``{"action": "register", "run_id": "r1", "config": {...}}``
    -> ``{"ok": true, "run_id": "r1"}``.  ``run_id`` is optional (``run-<n>``
    is assigned); registration closes once the first report arrives.
``report``    ``{"action": "report", "run_id": "r1", "epoch": 3, "error": 0.41}``
    -> ``{"ok": true, "run_id": "r1", "epoch": 3, "barrier": false}``.  A
    ``null`` error marks a failed measurement and halts the run.
``decision``  ``{"action": "decision", "run_id": "r1"}``
    -> ``{"ok": true, "run_id": "r1", "epoch": 3, "action": "continue" | "halt",
    "reason": ..., "criterion": ..., "tau": ..., "probability": ...}``
``status``    -> epoch, alive runs and halt epochs.

Decisions are made only when every alive run has reported the current epoch
(the barrier).  In between, decisions for alive runs are ``continue`` with
reason ``pending-barrier``.  Failures come back as
``{"ok": false, "error": <class>, "message": ...}``.
"""

from __future__ import annotations

import json
import math
import sys
from typing import IO

from .criteria import Decision
from .errors import NotFoundError, ProtocolError, RunRaceError
from .race import CurveFitter, RaceConfig, RaceState, step


class AdvisoryServer:
    def __init__(self, config: RaceConfig, fitter: CurveFitter | None = None):
        self.config = config
        self.fitter = fitter
        if fitter is None and config.policy.needs_predictions:
            self.fitter = CurveFitter(config.inference, config.master_seed, config.horizon_T)
        self.run_ids: list[str] = []
        self.configs: dict[str, dict] = {}
        self.state: RaceState | None = None
        self.pending: dict[str, float] = {}
        self.last: dict[str, tuple[int, Decision]] = {}
        self.tau_criterion: dict[int, str] = {}

    # -- actions -----------------------------------------------------------

    def register(self, run_id: str | None = None, config: dict | None = None) -> str:
        if self.state is not None:
            raise ProtocolError("registration is closed once reporting has started")
        if run_id is None:
            run_id = f"run-{len(self.run_ids)}"
        run_id = str(run_id)
        if run_id in self.configs:
            raise ProtocolError(f"run {run_id!r} is already registered")
        self.run_ids.append(run_id)
        self.configs[run_id] = dict(config or {})
        return run_id

    def _check(self, run_id) -> None:
        if run_id not in self.configs:
            raise NotFoundError(f"unknown run {run_id!r}")

    def report(self, run_id: str, epoch: int, error: float | None) -> bool:
        """Record one epoch; returns True when it completed a barrier."""
        self._check(run_id)
        if self.state is None:
            self.state = RaceState.new(self.run_ids, self.config.horizon_T)
        curve = self.state.curves[run_id]
        if curve.status != "alive":
            raise ProtocolError(f"run {run_id!r} is {curve.status}")
        expected = self.state.epoch + 1
        if epoch != expected:
            raise ProtocolError(f"run {run_id!r} reported epoch {epoch}, expected {expected}")
        if run_id in self.pending:
            raise ProtocolError(f"run {run_id!r} already reported epoch {epoch}")
        self.pending[run_id] = math.nan if error is None else float(error)
        if len(self.pending) < len(self.state.alive()):
            return False
        decisions, _ = step(self.state, self.pending, self.config, self.fitter)
        self.pending = {}
        for r, d in decisions.items():
            self.last[r] = (self.state.epoch, d)
        return True

    def decision(self, run_id: str) -> tuple[int, Decision]:
        self._check(run_id)
        if self.state is None:
            return 0, Decision(False, "warmup")
        curve = self.state.curves[run_id]
        if curve.status == "alive" and self.pending:
            return self.state.epoch, Decision(False, "pending-barrier")
        return self.last.get(run_id, (0, Decision(False, "warmup")))

    # -- message layer ---------------------------------------------------------

    def handle(self, request: dict) -> dict:
        try:
            if not isinstance(request, dict):
                raise ProtocolError("request must be an object")
            action = request.get("action")
            if action == "register":
                return {"ok": True, "run_id": self.register(request.get("run_id"), request.get("config"))}
            if action == "report":
                for key in ("run_id", "epoch"):
                    if key not in request:
                        raise ProtocolError(f"report needs {key!r}")
                epoch = request["epoch"]
                if not isinstance(epoch, int) or isinstance(epoch, bool):
                    raise ProtocolError("epoch must be an integer")
                error = request.get("error")
                if error is not None and not isinstance(error, (int, float)):
                    raise ProtocolError("error must be a number or null")
                barrier = self.report(request["run_id"], epoch, error)
                return {"ok": True, "run_id": request["run_id"], "epoch": epoch, "barrier": barrier}
            if action == "decision":
                if "run_id" not in request:
                    raise ProtocolError("decision needs 'run_id'")
                epoch, d = self.decision(request["run_id"])
                return {"ok": True, "run_id": request["run_id"], "epoch": epoch, "action": d.action,
                        "reason": d.reason, "criterion": self.config.policy.criterion,
                        "tau": d.tau, "probability": d.probability}
            if action == "status":
                return self.status()
            raise ProtocolError(f"unknown action {action!r}")
        except RunRaceError as exc:
            return {"ok": False, "error": exc.code, "message": str(exc)}

    def status(self) -> dict:
        epoch = 0 if self.state is None else self.state.epoch
        halted = {} if self.state is None else {
            r: c.halt_epoch for r, c in self.state.curves.items() if c.status == "halted"}
        alive = list(self.run_ids) if self.state is None else self.state.alive()
        return {"ok": True, "epoch": epoch, "horizon_T": self.config.horizon_T,
                "alive": alive, "halted": halted, "waiting_for": [r for r in alive if r not in self.pending]}


def serve(config: RaceConfig, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> AdvisoryServer:
    """Answer JSON-lines requests until end of input."""
    server = AdvisoryServer(config)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {"ok": False, "error": "format-error", "message": exc.msg}
        else:
            response = server.handle(request)
        stdout.write(json.dumps(response, allow_nan=False) + "\n")
        stdout.flush()
    return server
