"""How much measurement noise can the inversion absorb?

Each synthetic sample is perturbed as z + eps * eta with eta ~ N(0, sigma^2). For
every (eps, sigma) pair we train the same network from the same seeds and report
how far the recovered rate lands from v = 2.1. Larger noise should not help, so
errors ought to grow (roughly) along sigma for fixed eps.

The noise presets use 30000 epochs each. The default below is a quick 3000 to
show the mechanics; the comparison only becomes meaningful with longer runs.

    python3 demos/04_noise_sweep.py [epochs]
"""

import sys

from tumorpinn import trainer

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3000

print(f"{'eps':>5} {'sigma':>6} {'v':>8} {'error':>7}")
for eps, sigma in trainer.NOISE_GRID:
    config = trainer.preset(f"noise-e{eps:g}-s{sigma:g}", epochs=epochs)
    v = trainer.train(config).phys.values[0]
    print(f"{eps:>5g} {sigma:>6g} {v:>8.4f} {100 * abs(v - config.v_true) / config.v_true:>6.2f}%")
