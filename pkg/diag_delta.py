"""Is the delta fit underconverged or is delta genuinely mimicable?"""
import numpy as np, time
from ecodyn.inference import (Dataset, FitConfig, SegmentObjective, fit_multi_start,
                              segment_partition)
from ecodyn.models import MeanFieldParams, ModelKind
from ecodyn.synthetic import generate_dataset, synthetic_global_field

def diag(delta, seed):
    n = 4; years = np.arange(40)
    ss = np.random.SeedSequence(seed)
    p_seq, f_seq, n_seq = ss.spawn(3)
    rng = np.random.default_rng(p_seq)
    r = rng.uniform(0.05, 0.15, n); b = rng.uniform(0.5, 1.5, n)
    n0 = rng.uniform(0.05, 0.2, n) / b
    field = synthetic_global_field(years, n, 0.2, np.random.default_rng(f_seq))
    params = MeanFieldParams(growth=r, self_limitation=b, coupling=delta)
    ds = generate_dataset(ModelKind.DELTA, params, n0, years, 0.2, n_seq, field=field)
    bounds = segment_partition(40, 20)
    obj = SegmentObjective(ModelKind.DELTA, ds, bounds, field=field)
    ics = [ds.observations[s] for s, _ in bounds]
    u_true = obj.pack(params, ics)
    loss_true = obj.loss(u_true)

    cfg = FitConfig(segment_length=20, adam_epochs=200, quasi_newton_epochs=200,
                    runs=2, seed=1)
    fit_d = fit_multi_start(ModelKind.DELTA, ds, cfg, field=field)
    fit_0 = fit_multi_start(ModelKind.NULL, ds, cfg)
    loss_d = min(x.final_loss for x in fit_d.diagnostics)
    loss_0 = min(x.final_loss for x in fit_0.diagnostics)
    print(f"delta={delta} s{seed}: loss@truth={loss_true:8.2f} fitted_delta={loss_d:8.2f} "
          f"null={loss_0:8.2f} delta_hat={fit_d.params.coupling:.5f} "
          f"-2dlnL={(loss_0 and 0) or 0}", flush=True)
    m = 160
    import math
    def lnl(loss): return -0.5*m*(math.log(2*math.pi)+math.log(loss/m)+1)
    print(f"    -2(lnl0-lnld) = {-2*(lnl(loss_0)-lnl(loss_d)):8.2f}  "
          f"ceiling_from_truth = {-2*(lnl(loss_0)-lnl(loss_true)):8.2f}", flush=True)

for d in (0.02, 0.05, 0.1):
    for s in (21, 22):
        diag(d, s)
