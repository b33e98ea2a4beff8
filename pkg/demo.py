import math

import numpy as np

from python_ruelle.counting import TransitionCounter
from python_ruelle.models import OuSpec, SimulationConfig
from python_ruelle.oracle import ou_resonances
from python_ruelle.partition import GridPartition
from python_ruelle.reconstruct import coordinate_observable, reconstruct_correlation, sample_acf, weights
from python_ruelle.sde import build_model, euler_maruyama
from python_ruelle.spectral import leading_eigenpairs, resonances
from python_ruelle.transfer import estimate_transition

model = build_model("ou1d", a=1.0, s=math.sqrt(2.0))
series = euler_maruyama(model, SimulationConfig(dt=1e-3, n_steps=2_000_000, transient_steps=10_000, seed=1, x0=[0.0]))
grid = GridPartition.uniform([-4.0], [4.0], [64])

with TransitionCounter() as counter:
    tm = estimate_transition(series, grid, lag_steps=200, counter=counter)

spec = leading_eigenpairs(tm, k=4)
rs = resonances(spec, tm.lag_time)
print("estimated:", np.round(rs.lambdas, 3))
print("exact:    ", ou_resonances(OuSpec(a=1.0, s=math.sqrt(2.0)), 3))

f = coordinate_observable(grid, tm, 0)
lags = np.arange(11) * tm.lag_time
acf = reconstruct_correlation(rs, weights(spec, tm.measure, f, f), lags)
sample = sample_acf(series, 0, 10 * tm.lag_steps).sample[:: tm.lag_steps]
for t, r, s in zip(lags, acf.reconstructed, sample):
    print(f"{t:4.1f} {r: .4f} {s: .4f}")
