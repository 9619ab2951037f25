"""Round 4: validate the reduced presets through the real sweep cell path."""
import time

import numpy as np

from ecodyn.inference import FitConfig
from ecodyn.integrate import IntegratorConfig
from ecodyn.models import ModelKind
from ecodyn.synthetic import REDUCED_SWEEP_PRESETS, SweepConfig, _run_cell

fit_cfg = FitConfig(
    segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=11,
    integrator=IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7, max_steps=20_000),
)

for gen, preset in REDUCED_SWEEP_PRESETS.items():
    cfg = SweepConfig(generator=gen, sigma=0.2, n_activities=4, n_years=40,
                      replicates=3, seed=5, **preset)
    grid = cfg.coupling_grid
    print(f"=== {gen.value} grid={grid} ===", flush=True)
    for gi in range(len(grid)):
        for rep in range(3):
            t0 = time.perf_counter()
            cell = _run_cell((cfg, fit_cfg, gi, rep))
            dt = time.perf_counter() - t0
            if cell.report:
                d = {e.kind.value: round(e.delta_bic, 1) for e in cell.report.entries}
                best = (cell.best_kind and cell.best_kind.value) or "NONE"
                print(f"  c={grid[gi]:6g} rep{rep}: best={best:10s} dBIC={d} ({dt:.0f}s)",
                      flush=True)
            else:
                print(f"  c={grid[gi]:6g} rep{rep}: FAILED {cell.error} {cell.failures} "
                      f"({dt:.0f}s)", flush=True)
