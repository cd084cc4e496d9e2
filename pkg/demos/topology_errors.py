"""What happens when the path matrix used for inference is wrong.

Rows of the true matrix are corrupted with probability te and entries of a
corrupted row flip with probability q_flip. Estimation runs on the
corrupted matrix while the probes follow the real one.
"""

from pabest.experiments import SweepSpec, run_te_sweep

spec = SweepSpec(sizes=(20,), replicates=5, te=(0.0, 0.25, 0.5, 0.9), q_flip=0.02, seed=3)
table, _ = run_te_sweep(spec)
print(f"{'te':>5} {'jaccard':>8} {'meas/path':>10} {'accuracy':>9}")
for row in table:
    print(f"{row['te']:5.2f} {row['jaccard']:8.3f} {row['mean_measurements_per_path']:10.2f} {row['accuracy']:9.3f}")
