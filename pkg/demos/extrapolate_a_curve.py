"""
Extrapolating a learning curve
==============================

Fit the eleven-family ensemble to the first epochs of a noisy curve and
look at what it says about the error at the end of the budget.
"""

import numpy as np

from runrace.curve_models import FAMILY_IDS
from runrace.inference import InferenceConfig, fit_curve, prob_below

# a pow3-shaped error curve with a little measurement noise
T = 50
t = np.arange(1, T + 1)
true = 0.25 + 0.6 * t**-0.7
rng = np.random.default_rng(0)
observed = true + rng.normal(0, 0.01, T)

print("families in the ensemble:", ", ".join(FAMILY_IDS))

# watch the prediction tighten as more epochs come in
for n in (5, 10, 20, 35):
    fit = fit_curve(observed[:n], T, InferenceConfig(seed=n))
    pred = fit.prediction(delta=0.1)
    lo, hi = np.quantile(pred.samples, [0.05, 0.95])
    print(f"after {n:2d} epochs: mean {pred.point_estimate:.3f}  90% band [{lo:.3f}, {hi:.3f}]"
          f"  upper 0.9 quantile {pred.conservative_estimate:.3f}   (truth {true[-1]:.3f})")

# how likely is this run to beat a competitor that is already at 0.28?
fit = fit_curve(observed[:10], T, InferenceConfig(seed=10))
print("P(final error < 0.28) after 10 epochs:", prob_below(fit.prediction(0.5), 0.28))

# the posterior mean curve over the observed window
print("fitted mean, first 10 epochs:", np.round(fit.fitted_mean, 3))
