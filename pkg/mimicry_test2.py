"""Ceiling scan in the controlled transient-supercritical regime."""
import numpy as np, time
from ecodyn.inference import Dataset, FitConfig, fit_multi_start
from ecodyn.models import MeanFieldParams, ModelKind
from ecodyn.integrate import integrate

def ceiling(tag, alpha, r_range, b_range, f_range, seed, n=4, t_len=40):
    rng = np.random.default_rng(seed)
    years = np.arange(t_len)
    r = rng.uniform(*r_range, n); b = rng.uniform(*b_range, n)
    n0 = rng.uniform(*f_range, n) / b
    params = MeanFieldParams(growth=r, self_limitation=b, coupling=alpha)
    try:
        traj = integrate(ModelKind.ALPHA_POS, params, n0, years.astype(float))
    except Exception as e:
        print(f"{tag} s{seed}: GEN FAIL {e}", flush=True)
        return
    if np.any(traj.states <= 0) or traj.states.max() > 1e9:
        print(f"{tag} s{seed}: out of range (max {traj.states.max():.3g})", flush=True)
        return
    ds = Dataset(country="mim", years=years, observations=traj.states,
                 activity_labels=tuple(f"a{i}" for i in range(n)))
    cfg = FitConfig(segment_length=20, adam_epochs=300, quasi_newton_epochs=400,
                    runs=2, seed=1)
    t0 = time.perf_counter()
    fit = fit_multi_start(ModelKind.NULL, ds, cfg)
    loss = min(d.final_loss for d in fit.diagnostics)
    print(f"{tag} s{seed}: leftover={loss:9.4f} -2dlnL~{loss/0.04:8.1f} "
          f"ymax={traj.states.max():10.2f} ({time.perf_counter()-t0:.0f}s)", flush=True)

for a in (0.30, 0.37, 0.42):
    for s in (9, 10, 11):
        ceiling(f"a={a}", a, (0.09, 0.11), (0.9, 1.1), (0.05, 0.1), s)
