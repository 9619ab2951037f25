"""Scratch calibration: find reduced-mode sweep settings with clear model
discrimination. Not part of the package."""
import math
import time

import numpy as np

from ecodyn.inference import FitConfig, FitError, fit_multi_start, segment_partition
from ecodyn.models import MEAN_FIELD_KINDS, MeanFieldParams, ModelKind
from ecodyn.selection import build_selection_report
from ecodyn.synthetic import generate_dataset, synthetic_global_field

def run_cell(gen, coupling, n, t_len, sigma, seed, b_range, fit_cfg):
    years = np.arange(t_len)
    ss = np.random.SeedSequence(seed)
    params_seq, field_seq, noise_seq = ss.spawn(3)
    rng = np.random.default_rng(params_seq)
    r = rng.uniform(0.05, 0.15, n)
    b = rng.uniform(*b_range, n)
    n0 = rng.uniform(0.05, 0.2, n) / b
    field = synthetic_global_field(years, n, sigma, np.random.default_rng(field_seq),
                                   self_limitation_range=b_range)
    if coupling == 0:
        kind, params = ModelKind.NULL, MeanFieldParams(growth=r, self_limitation=b)
    else:
        kind, params = gen, MeanFieldParams(growth=r, self_limitation=b, coupling=coupling)
    try:
        ds = generate_dataset(kind, params, n0, years, sigma, noise_seq,
                              field=field if kind is ModelKind.DELTA else None,
                              country=f"cal{seed}")
    except Exception as e:
        return None, f"GEN FAIL: {e}"
    lls = {}
    for mk in MEAN_FIELD_KINDS:
        try:
            lls[mk] = fit_multi_start(mk, ds, fit_cfg, field=field).log_likelihood
        except (FitError, ValueError) as e:
            return None, f"{mk.value} FIT FAIL: {e}"
    n_seg = len(segment_partition(t_len, fit_cfg.segment_length))
    rep = build_selection_report("cal", lls, n, t_len, n_seg)
    return rep, None

def show(tag, gen, coupling, n, t_len, b_range, fit_cfg, reps=2, sigma=0.2):
    for rep_i in range(reps):
        t0 = time.perf_counter()
        rep, err = run_cell(gen, coupling, n, t_len, sigma, 1000 + 17 * rep_i, b_range, fit_cfg)
        dt = time.perf_counter() - t0
        if rep is None:
            print(f"  {tag} rep{rep_i}: {err} ({dt:.0f}s)", flush=True)
        else:
            d = {e.kind.value: round(e.delta_bic, 1) for e in rep.entries}
            print(f"  {tag} rep{rep_i}: best={rep.best_kind and rep.best_kind.value:10s} "
                  f"dBIC={d} ({dt:.0f}s)", flush=True)

cfg = FitConfig(segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=3)

print("=== alpha_pos candidates ===", flush=True)
show("N4 b[1,2] a=0.25", ModelKind.ALPHA_POS, 0.25, 4, 40, (1.0, 2.0), cfg)
show("N4 b[.5,1.5] a=0.15", ModelKind.ALPHA_POS, 0.15, 4, 40, (0.5, 1.5), cfg)
show("N6 b[.5,1.5] a=0.09", ModelKind.ALPHA_POS, 0.09, 6, 40, (0.5, 1.5), cfg)

print("=== alpha_neg candidates ===", flush=True)
show("N4 a=-0.4", ModelKind.ALPHA_NEG, -0.4, 4, 40, (0.5, 1.5), cfg)
show("N4 a=-0.8", ModelKind.ALPHA_NEG, -0.8, 4, 40, (0.5, 1.5), cfg)

print("=== delta candidates ===", flush=True)
show("N4 d=0.05", ModelKind.DELTA, 0.05, 4, 40, (0.5, 1.5), cfg)
show("N4 d=0.1", ModelKind.DELTA, 0.1, 4, 40, (0.5, 1.5), cfg)

print("=== mu candidates ===", flush=True)
show("N4 m=0.05", ModelKind.MU, 0.05, 4, 40, (0.5, 1.5), cfg)
show("N4 m=0.1", ModelKind.MU, 0.1, 4, 40, (0.5, 1.5), cfg)

print("=== zero coupling (any gen) ===", flush=True)
show("N4 c=0", ModelKind.ALPHA_POS, 0.0, 4, 40, (0.5, 1.5), cfg, reps=2)
