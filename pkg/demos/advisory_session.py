"""
Talking to the advisory service
===============================

Training processes register, report one error per epoch and ask whether to
keep going.  Here three fake workers share one in-process server; the same
messages work over ``runrace serve`` as JSON lines.
"""

import json

from runrace.advisory import AdvisoryServer
from runrace.criteria import HaltPolicy
from runrace.race import RaceConfig, gen_synthetic

corpus = gen_synthetic(3, 20, noise_sigma=0.01, seed=7)
server = AdvisoryServer(RaceConfig(20, HaltPolicy("f", 0.5)))

for run in corpus.traces:
    print(server.handle({"action": "register", "run_id": run, "config": {"family": corpus.families[run]}}))

stopped = set()
for epoch in range(1, 21):
    for run, values in corpus.traces.items():
        if run in stopped:
            continue
        server.handle({"action": "report", "run_id": run, "epoch": epoch, "error": float(values[epoch - 1])})
    for run in corpus.traces:
        if run in stopped:
            continue
        reply = server.handle({"action": "decision", "run_id": run})
        if reply["action"] == "halt":
            stopped.add(run)
            print(f"epoch {epoch}: stop {run} ({reply['reason']}, tau={reply['tau']:.3f})")

print(json.dumps(server.status(), indent=2))
# asking about an unknown run is an error, not an exception
print(server.handle({"action": "decision", "run_id": "ghost"}))
