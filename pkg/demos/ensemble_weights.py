"""
Blending three models on the simplex
====================================

Three imperfect models, one truth. The weighted average starts at
(0.3, 0.3, 0.4) and moves to the MAE-optimal point on the simplex; an
exhaustive lattice search confirms nothing better exists at 0.01 spacing.
"""

import numpy as np

from sdmfusion.ensemble import INITIAL_WEIGHTS, ensemble_predict, optimize_weights
from sdmfusion.metrics import mae
from sdmfusion.testkit import ensemble_instance, oracle_simplex_grid

P, truth = ensemble_instance(seed=4, n=200)
for name, col in zip(("RGB", "LC", "NDVI"), P.T):
    print(f"{name:>5} alone: MAE {mae(truth, col):6.2f}")

print("start (0.3, 0.3, 0.4): MAE %.2f" % mae(truth, ensemble_predict(INITIAL_WEIGHTS, P)))

res = optimize_weights(P, truth)
print("optimised weights:", np.round(res.weights.as_array(), 3), "MAE %.4f" % res.mae)
print("best-so-far MAE every 10 iterations:", np.round(res.history[::10], 3))

lattice = oracle_simplex_grid(P, truth, step=0.01)
print("lattice optimum:", lattice.weights, "MAE %.4f over %d points" % (lattice.mae, lattice.n_evaluated))
