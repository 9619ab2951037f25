"""Round 7: staggered-start mu cells, with per-model fit timing."""
import time

import numpy as np

from ecodyn.inference import FitConfig, FitError, fit_multi_start, segment_partition
from ecodyn.integrate import IntegratorConfig
from ecodyn.models import MEAN_FIELD_KINDS, ModelKind
from ecodyn.selection import build_selection_report
from ecodyn.synthetic import SweepConfig, _cell_label, synthetic_global_field, generate_dataset
from ecodyn.models import MeanFieldParams

fit_cfg = FitConfig(
    segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=11,
    integrator=IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7, max_steps=5_000),
)

def run_cell_timed(config, gi, rep):
    coupling = float(config.coupling_grid[gi])
    n = config.n_activities
    years = np.arange(config.n_years)
    from ecodyn.synthetic import _GENERATOR_INDEX
    ss = np.random.SeedSequence(config.seed,
                                spawn_key=(_GENERATOR_INDEX[config.generator], gi, rep))
    params_seq, field_seq, noise_seq = ss.spawn(3)
    rng = np.random.default_rng(params_seq)
    r = rng.uniform(*config.growth_range, n)
    b = rng.uniform(*config.self_limitation_range, n)
    lo, hi = config.initial_fraction_range
    if config.initial_fraction_spread:
        fr = rng.permutation(np.linspace(lo, hi, n)) * rng.uniform(0.9, 1.1, n)
    else:
        fr = rng.uniform(lo, hi, n)
    n0 = fr / b
    field = synthetic_global_field(
        years, n, config.sigma, np.random.default_rng(field_seq),
        n_countries=config.n_field_countries,
        growth_range=config.growth_range,
        self_limitation_range=config.self_limitation_range,
        initial_fraction_range=(config.field_initial_fraction_range
                                or config.initial_fraction_range))
    if coupling == 0:
        kind, params = ModelKind.NULL, MeanFieldParams(growth=r, self_limitation=b)
    else:
        kind, params = config.generator, MeanFieldParams(growth=r, self_limitation=b,
                                                         coupling=coupling)
    ds = generate_dataset(kind, params, n0, years, config.sigma, noise_seq,
                          field=field if kind is ModelKind.DELTA else None,
                          country=_cell_label(config.generator, coupling, rep))
    lls = {}
    times = {}
    for mk in MEAN_FIELD_KINDS:
        t0 = time.perf_counter()
        try:
            lls[mk] = fit_multi_start(mk, ds, fit_cfg, field=field).log_likelihood
        except (FitError, ValueError) as e:
            lls[mk] = None
        times[mk.value] = round(time.perf_counter() - t0, 1)
    ok = {k: v for k, v in lls.items() if v is not None}
    n_seg = len(segment_partition(config.n_years, fit_cfg.segment_length))
    rep_ = build_selection_report("c", ok, n, config.n_years, n_seg)
    return rep_, times

def trial(tag, gen, grid, reps=3, **kw):
    cfg = SweepConfig(generator=gen, coupling_grid=grid, sigma=0.2, n_activities=4,
                      n_years=40, replicates=reps, seed=5, **kw)
    for gi in range(len(grid)):
        for rep in range(reps):
            t0 = time.perf_counter()
            r, times = run_cell_timed(cfg, gi, rep)
            d = {e.kind.value: round(e.delta_bic, 1) for e in r.entries}
            best = (r.best_kind and r.best_kind.value) or "NONE"
            print(f"  {tag} c={grid[gi]:6g} rep{rep}: best={best:10s} dBIC={d} "
                  f"({time.perf_counter()-t0:.0f}s: {times})", flush=True)

trial("mu-spread .3", ModelKind.MU, (0.3,), initial_fraction_range=(0.02, 1.2),
      initial_fraction_spread=True, field_initial_fraction_range=(0.05, 0.2))
trial("mu-spread .5", ModelKind.MU, (0.5,), initial_fraction_range=(0.02, 1.2),
      initial_fraction_spread=True, field_initial_fraction_range=(0.05, 0.2))
