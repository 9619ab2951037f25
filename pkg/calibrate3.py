"""Round 3: heterogeneity-driven discrimination + remaining generators."""
import numpy as np, time
from ecodyn.inference import FitConfig, FitError, fit_multi_start, segment_partition
from ecodyn.models import MEAN_FIELD_KINDS, MeanFieldParams, ModelKind
from ecodyn.selection import build_selection_report
from ecodyn.synthetic import generate_dataset, synthetic_global_field

def run_cell(gen, coupling, n, t_len, sigma, seed, fit_cfg,
             r_range=(0.05,0.15), b_range=(0.5,1.5), f_range=(0.05,0.2)):
    years = np.arange(t_len)
    ss = np.random.SeedSequence(seed)
    params_seq, field_seq, noise_seq = ss.spawn(3)
    rng = np.random.default_rng(params_seq)
    r = rng.uniform(*r_range, n); b = rng.uniform(*b_range, n)
    n0 = rng.uniform(*f_range, n) / b
    field = synthetic_global_field(years, n, sigma, np.random.default_rng(field_seq),
                                   growth_range=r_range, self_limitation_range=b_range,
                                   initial_fraction_range=f_range)
    if coupling == 0:
        kind, params = ModelKind.NULL, MeanFieldParams(growth=r, self_limitation=b)
    else:
        kind, params = gen, MeanFieldParams(growth=r, self_limitation=b, coupling=coupling)
    try:
        ds = generate_dataset(kind, params, n0, years, sigma, noise_seq,
                              field=field if kind is ModelKind.DELTA else None, country=f"c{seed}")
    except Exception as e:
        return None, f"GEN FAIL: {e}", None
    lls = {}
    for mk in MEAN_FIELD_KINDS:
        try:
            lls[mk] = fit_multi_start(mk, ds, fit_cfg, field=field).log_likelihood
        except (FitError, ValueError) as e:
            return None, f"{mk.value} FIT FAIL: {e}", ds
    n_seg = len(segment_partition(t_len, fit_cfg.segment_length))
    return build_selection_report("cal", lls, n, t_len, n_seg), None, ds

def show(tag, gen, coupling, fit_cfg, reps=3, **kw):
    for i in range(reps):
        t0 = time.perf_counter()
        rep, err, ds = run_cell(gen, coupling, 4, 40, 0.2, 500 + 31*i, fit_cfg, **kw)
        dt = time.perf_counter() - t0
        dmax = f"ymax={ds.observations.max():9.2f}" if ds is not None else ""
        if rep is None:
            print(f"  {tag} rep{i}: {err} ({dt:.0f}s) {dmax}", flush=True)
        else:
            d = {e.kind.value: round(e.delta_bic, 1) for e in rep.entries}
            print(f"  {tag} rep{i}: best={(rep.best_kind and rep.best_kind.value) or 'NONE':10s} "
                  f"dBIC={d} ({dt:.0f}s) {dmax}", flush=True)

cfg = FitConfig(segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=3)

print("=== delta ===", flush=True)
for dl in (0.05, 0.1):
    show(f"d={dl}", ModelKind.DELTA, dl, cfg)
print("=== mu ===", flush=True)
for m in (0.05, 0.1):
    show(f"m={m}", ModelKind.MU, m, cfg)
print("=== alpha_neg exclusion regime ===", flush=True)
for a in (-1.5, -2.5):
    show(f"a={a}", ModelKind.ALPHA_NEG, a, cfg)
print("=== alpha_pos heterogeneous-rate regime ===", flush=True)
show("a=0.15 r[.03,.3]", ModelKind.ALPHA_POS, 0.15, cfg, r_range=(0.03,0.3))
show("a=0.15 r[.03,.3] f[.02,.1]", ModelKind.ALPHA_POS, 0.15, cfg, r_range=(0.03,0.3), f_range=(0.02,0.1))
print("=== zero coupling ===", flush=True)
show("c=0", ModelKind.ALPHA_POS, 0.0, cfg)
