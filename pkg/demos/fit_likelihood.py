"""Fitting the likelihood slope from repeated probes.

Success counts are drawn from the model with alpha = 0.28 on three paths;
the fit recovers the slope and each path's PAB from the counts alone.
"""

import numpy as np

from pabest.likelihood import LikelihoodModel, TrainingSample, fit, success_probability

rng = np.random.default_rng(2)
model = LikelihoodModel(alpha=0.28)
pabs = {"a": 25.0, "b": 48.0, "c": 71.0}
samples = []
for path, y in pabs.items():
    for rate in range(5, 100, 5):
        n = 40
        k = rng.binomial(n, success_probability(model, rate, y))
        samples.append(TrainingSample(path, float(rate), k / n, n))

res = fit(samples)
print(f"fitted alpha {res.alpha:.3f} (true 0.28), mse {res.mse:.4f}")
for path, y in pabs.items():
    print(f"  {path}: fitted PAB {res.pab[path]:5.1f} Mbps (true {y:g})")
