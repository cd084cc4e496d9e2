"""Active estimation on a synthetic topology, WCI against plain round robin.

Twenty paths are drawn from a generated tree, link PABs are uniform on
1..100 Mbps and the simulated prober answers from the likelihood model.
"""

import numpy as np

from pabest.estimator import EstimatorConfig, estimate
from pabest.experiments import (
    sample_topology, shared_tight_fraction, stream_seeds, synthetic_base_topology,
)
from pabest.probing import GroundTruth, SimulatedProber
from pabest.sampling import StrategyConfig

rng = np.random.default_rng(11)
t = sample_topology(synthetic_base_topology(seed=11), 20, rng)
truth = GroundTruth.uniform(t, 1, 100, rng)
print(f"{t.n_paths} paths over {t.n_links} logical links; "
      f"{shared_tight_fraction(t, truth):.0%} of paths share their tight link")

for kind in ("wci", "rr-strict"):
    sel, out = stream_seeds(5)
    cfg = EstimatorConfig(strategy=StrategyConfig(kind, seed=sel))
    res = estimate(t, cfg, SimulatedProber(truth, cfg.likelihood, cfg.probe, seed=out))
    print(f"\n{kind}: {res.iterations} measurements "
          f"({res.iterations / t.n_paths:.1f} per path), accuracy {res.accuracy(truth.paths):.2f}")
    for p in t.path_ids[:5]:
        r = res.paths[p]
        print(f"  {p:>12}: true {truth.paths[p]:5.1f}  interval [{r.interval.lower:g}, {r.interval.upper:g}]"
              f"  probes {r.measurements}")
    print("  ...")
