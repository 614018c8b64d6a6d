"""Recover a known proliferation rate from synthetic density samples.

The solver produces density snapshots for v = 2.0; 200 space-time samples of those
snapshots become the training data. The network starts from v = 1.0 and has to
find its way to the true rate while also fitting the PDE, the initial patch and the
zero boundary.

The full preset runs 60000 epochs (about 12 minutes on one core). The default here
is shorter so the script finishes quickly; pass a larger number to see it settle.

    python3 demos/02_synthetic_recovery.py [epochs]
"""

import sys

from tumorpinn import trainer

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
config = trainer.preset("synthetic-v2.0", epochs=epochs, log_every=max(epochs // 10, 1))
print(f"training {config.experiment} for {epochs} epochs, weights {config.weights}, start v = {config.guess[0]}")

result = trainer.train(config)
print(f"{'epoch':>7} {'total loss':>12} {'v':>8}")
for r in result.records:
    print(f"{r.epoch:>7} {r.total:>12.4e} {r.params[0]:>8.4f}")

v = result.phys.values[0]
print(f"\nrecovered v = {v:.4f}, relative error {100 * abs(v - config.v_true) / config.v_true:.2f}%")
