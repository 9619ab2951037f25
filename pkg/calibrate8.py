"""Round 8: dispersal in the field-tracking regime (few, jagged pseudo
countries; strong relaxation)."""
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

def trial(tag, gen, grid, reps=3, **kw):
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
                print(f"  {tag} c={grid[gi]:6g} rep{rep}: best={best:10s} dBIC={d} ({dt:.0f}s)",
                      flush=True)
            else:
                print(f"  {tag} c={grid[gi]:6g} rep{rep}: FAILED {cell.error} ({dt:.0f}s)",
                      flush=True)

trial("track d=.5 M2", ModelKind.DELTA, (0.5,),
      field_initial_fraction_range=(0.1, 2.0), n_field_countries=2)
trial("track d=1  M2", ModelKind.DELTA, (1.0,),
      field_initial_fraction_range=(0.1, 2.0), n_field_countries=2)
