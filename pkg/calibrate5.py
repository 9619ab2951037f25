"""Round 5: final extremes for delta, mu, alpha_neg."""
import time

import numpy as np

from ecodyn.inference import FitConfig
from ecodyn.integrate import IntegratorConfig
from ecodyn.models import ModelKind
from ecodyn.synthetic import SweepConfig, _run_cell

fit_cfg = FitConfig(
    segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=11,
    integrator=IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7, max_steps=5_000),
)

def trial(gen, grid, reps=3, **kw):
    cfg = SweepConfig(generator=gen, coupling_grid=grid, sigma=0.2, n_activities=4,
                      n_years=40, replicates=reps, seed=5, **kw)
    for gi in range(len(grid)):
        for rep in range(reps):
            t0 = time.perf_counter()
            cell = _run_cell((cfg, fit_cfg, gi, rep))
            dt = time.perf_counter() - t0
            if cell.report:
                d = {e.kind.value: round(e.delta_bic, 1) for e in cell.report.entries}
                best = (cell.best_kind and cell.best_kind.value) or "NONE"
                print(f"  {gen.value} c={grid[gi]:6g} rep{rep}: best={best:10s} "
                      f"dBIC={d} ({dt:.0f}s)", flush=True)
            else:
                print(f"  {gen.value} c={grid[gi]:6g} rep{rep}: FAILED {cell.error} "
                      f"{cell.failures} ({dt:.0f}s)", flush=True)

trial(ModelKind.DELTA, (0.15,), field_initial_fraction_range=(0.6, 1.0))
trial(ModelKind.DELTA, (0.25,), field_initial_fraction_range=(0.6, 1.0))
trial(ModelKind.MU, (0.3,), initial_fraction_range=(0.02, 1.1))
trial(ModelKind.MU, (0.5,), initial_fraction_range=(0.02, 1.1))
trial(ModelKind.ALPHA_NEG, (-3.0,))
