"""Round 2: regime-aware coupling extremes."""
import numpy as np, time
from ecodyn.inference import FitConfig, FitError, fit_multi_start, segment_partition
from ecodyn.models import MEAN_FIELD_KINDS, MeanFieldParams, ModelKind
from ecodyn.selection import build_selection_report
from ecodyn.synthetic import generate_dataset, synthetic_global_field

def run_cell(gen, coupling, n, t_len, sigma, seed, fit_cfg):
    years = np.arange(t_len)
    ss = np.random.SeedSequence(seed)
    params_seq, field_seq, noise_seq = ss.spawn(3)
    rng = np.random.default_rng(params_seq)
    r = rng.uniform(0.05, 0.15, n); b = rng.uniform(0.5, 1.5, n)
    n0 = rng.uniform(0.05, 0.2, n) / b
    field = synthetic_global_field(years, n, sigma, np.random.default_rng(field_seq))
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

def show(tag, gen, coupling, fit_cfg, reps=3, n=4, t_len=40):
    for i in range(reps):
        t0 = time.perf_counter()
        rep, err, ds = run_cell(gen, coupling, n, t_len, 0.2, 500 + 31*i, fit_cfg)
        dt = time.perf_counter() - t0
        dmax = f"ymax={ds.observations.max():8.1f}" if ds is not None else ""
        if rep is None:
            print(f"  {tag} rep{i}: {err} ({dt:.0f}s) {dmax}", flush=True)
        else:
            d = {e.kind.value: round(e.delta_bic, 1) for e in rep.entries}
            print(f"  {tag} rep{i}: best={(rep.best_kind and rep.best_kind.value) or 'NONE':10s} "
                  f"dBIC={d} ({dt:.0f}s) {dmax}", flush=True)

cfg = FitConfig(segment_length=20, adam_epochs=200, quasi_newton_epochs=200, runs=2, seed=3)
print("=== alpha_pos (transient super-exponential regime) ===", flush=True)
for a in (0.2, 0.25, 0.3):
    show(f"a={a}", ModelKind.ALPHA_POS, a, cfg)
print("=== alpha_neg (competitive exclusion regime) ===", flush=True)
for a in (-1.5, -2.5):
    show(f"a={a}", ModelKind.ALPHA_NEG, a, cfg)
print("=== delta ===", flush=True)
for dl in (0.05, 0.1):
    show(f"d={dl}", ModelKind.DELTA, dl, cfg)
print("=== mu ===", flush=True)
for m in (0.05, 0.1):
    show(f"m={m}", ModelKind.MU, m, cfg)
print("=== zero coupling ===", flush=True)
show("c=0", ModelKind.ALPHA_POS, 0.0, cfg)
