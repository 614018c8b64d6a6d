"""From binary tumor masks to a growth rate, then back to radii.

Real observations are only radii, so each training sample is a 0/1 label saying
whether a point lies inside the tumor at one of the early time points. Training with
a cross-entropy data term yields a rate v. Plugging v into the forward solver
then predicts the radius at later, unseen times, which we compare against the
measured table.

The preset runs 80000 epochs (roughly 20 minutes). Pass fewer epochs for a quick look;
the prediction step takes a few seconds regardless.

    python3 demos/03_real_data_forward_prediction.py [epochs]
"""

import sys

from tumorpinn import obsdata, trainer

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
config = trainer.preset("real-bce", epochs=epochs, log_every=max(epochs // 10, 1))
print(f"training on radii at t = {config.train_times}, start v = {config.guess[0]}")
result = trainer.train(config)
print(f"recovered v = {result.phys.values[0]:.4f}\n")

table = obsdata.builtin_radius_table()
print(f"{'t':>6} {'predicted':>10} {'observed':>9} {'error':>7}")
for t, r in trainer.predict_forward(result.phys, table.times):
    obs = table.radius_at(t)
    held_out = "" if t in config.train_times else "  (held out)"
    print(f"{t:>6.3f} {r:>10.4f} {obs:>9.2f} {100 * obsdata.relative_error(r, obs):>6.2f}%{held_out}")
