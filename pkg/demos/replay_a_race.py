"""
Replaying a race
================

Generate a synthetic population of training runs, replay it under several
halting policies and compare epochs saved against whether the eventual best
run survived.
"""

from runrace.criteria import HaltPolicy
from runrace.formats import ReportDocument, emit_report
from runrace.race import CurveFitter, RaceConfig, gen_synthetic, run_race, sweep

corpus = gen_synthetic(20, 50, noise_sigma=0.02, seed=3)
print("best run by construction:", corpus.best_run, f"(final error {corpus.asymptotes[corpus.best_run]:.3f})")

config = RaceConfig(50, HaltPolicy("f", 0.5), master_seed=3)

# every cell reuses the same fits, so the sweep costs little more than one race
fitter = CurveFitter(config.inference, config.master_seed, 50)
result = sweep(corpus.traces, ["a", "e", "f"], [0.0, 0.1, 0.5], config, fitter)
print(emit_report(ReportDocument({"synthetic": tuple(result.reports.values())}), "table"))

# when did the survivors of (f) get decided?
report = result.reports[("f", 0.5)]
for ev in report.halts[:8]:
    print(f"epoch {ev.epoch:2d}: halted {ev.run_id} (P={ev.probability}, tau={ev.tau:.3f})")
print("k used per epoch:", report.k_values[:10])

# successive halving needs no curve fits at all
sh = run_race(corpus.traces, config.with_policy(criterion="sh"))
print("successive halving:", sh.cell())
