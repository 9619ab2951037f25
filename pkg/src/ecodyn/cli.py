"""Command-line entry point: simulate | ingest | fit | select | sweep | report.

Every run resolves its options (config file first, explicit flags override),
hashes the resolved configuration, and embeds that hash plus the seed in
every artifact, so reruns with identical configuration produce byte-identical
outputs.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .inference import (
    Dataset,
    FitConfig,
    FitResult,
    fit_single,
    run_stream,
    segment_partition,
)
from .integrate import IntegrationFailure, IntegratorConfig, integrate, integrate_general
from .models import (
    MEAN_FIELD_KINDS,
    GeneralParams,
    GlobalField,
    MeanFieldParams,
    ModelKind,
)
from .pipeline import (
    FieldUnavailable,
    PipelineError,
    build_global_field,
    ingest,
    load_export_table,
    load_population_table,
)
from .selection import Classification, build_selection_report
from .stats import ols, standardize
from .synthetic import (
    DEFAULT_COUPLING_GRIDS,
    REDUCED_FIT_INIT_RANGES,
    REDUCED_SWEEP_PRESETS,
    SweepConfig,
    generate_dataset,
    run_sweep,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we reserve 2 for data
        raise UsageError(message)


#: options holding filesystem locations; excluded from the config hash so
#: that runs over identical inputs hash equal regardless of directory layout
_PATH_OPTIONS = frozenset(
    {"params", "exports", "population", "data", "fits", "selection", "gdp"}
)


@dataclass(frozen=True)
class RunConfig:
    """Resolved options of one command invocation."""

    command: str
    seed: int
    jobs: int
    out: str
    options: dict

    def hash(self) -> str:
        payload = {
            "command": self.command,
            "seed": self.seed,
            "options": {
                k: v for k, v in self.options.items() if k not in _PATH_OPTIONS
            },
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# deterministic artifact writers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, ModelKind):
        return obj.value
    if isinstance(obj, Classification):
        return obj.value
    return obj


def write_json(path: Path, payload: dict, run: RunConfig):
    body = {"config_hash": run.hash(), "seed": run.seed}
    body.update(payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(body), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path: Path, header: Sequence[str], rows, run: RunConfig):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={run.hash()} seed={run.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else _format_cell(v) for v in row])


def _format_cell(v):
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if math.isnan(f):
            return ""
        return repr(f)
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    if isinstance(v, (ModelKind, Classification)):
        return v.value
    return str(v)


# ---------------------------------------------------------------------------
# option plumbing
# ---------------------------------------------------------------------------

def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, file_cfg: dict, key: str, default):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _parse_kind(name: str) -> ModelKind:
    try:
        return ModelKind(name)
    except ValueError:
        raise UsageError(
            f"unknown model kind {name!r}; choose from "
            f"{[k.value for k in ModelKind]}"
        ) from None


def _fit_config_from(opts: dict) -> FitConfig:
    return FitConfig(
        segment_length=opts["segment_length"],
        adam_epochs=opts["adam_epochs"],
        adam_learning_rate=opts["adam_learning_rate"],
        quasi_newton_epochs=opts["quasi_newton_epochs"],
        runs=opts["runs"],
        seed=opts["seed"],
    )


_FIT_OPT_SPECS = (
    ("segment_length", int, 20),
    ("adam_epochs", int, 800),
    ("adam_learning_rate", float, 1e-2),
    ("quasi_newton_epochs", int, 800),
    ("runs", int, 5),
)


def _add_fit_flags(sub):
    sub.add_argument("--segment-length", "-k", dest="segment_length", type=int)
    sub.add_argument("--adam-epochs", dest="adam_epochs", type=int)
    sub.add_argument("--adam-lr", dest="adam_learning_rate", type=float)
    sub.add_argument("--bfgs-epochs", dest="quasi_newton_epochs", type=int)
    sub.add_argument("--runs", dest="runs", type=int)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _params_from_file(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read params file {path}: {exc}") from None
    try:
        kind = _parse_kind(spec["kind"])
        if kind is ModelKind.GENERAL:
            countries = [
                GeneralParams(
                    growth=c["growth"],
                    self_limitation=c["self_limitation"],
                    interaction_matrix=c["interaction_matrix"],
                    dispersal_rates=c["dispersal_rates"],
                    transfer_matrix=c["transfer_matrix"],
                )
                for c in spec["countries"]
            ]
            initial = np.asarray(spec["initial"], dtype=float)
            return kind, countries, initial, None
        params = MeanFieldParams(
            growth=spec["growth"],
            self_limitation=spec["self_limitation"],
            coupling=spec.get("coupling"),
        )
        field = None
        if "field" in spec:
            field = GlobalField(
                times=spec["field"]["times"], values=spec["field"]["values"]
            )
        initial = np.asarray(spec["initial"], dtype=float)
        return kind, params, initial, field
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"invalid params file {path}: {exc}") from None


def cmd_simulate(run: RunConfig) -> int:
    opts = run.options
    kind, params, initial, field = _params_from_file(opts["params"])
    years = np.arange(opts["t0"], opts["t1"] + 1)
    if years.size < 2:
        raise UsageError("need at least two simulation years (t1 > t0)")
    out = Path(run.out)
    try:
        if kind is ModelKind.GENERAL:
            traj = integrate_general(params, initial, years.astype(float))
            header = ["year"] + [
                f"country{c}_act{i}"
                for c in range(traj.states.shape[1])
                for i in range(traj.states.shape[2])
            ]
            rows = [
                [int(y)] + list(traj.states[j].ravel())
                for j, y in enumerate(years)
            ]
        else:
            traj = integrate(kind, params, initial, years.astype(float), field=field)
            header = ["year"] + [f"act{i}" for i in range(traj.states.shape[1])]
            rows = [[int(y)] + list(traj.states[j]) for j, y in enumerate(years)]
    except IntegrationFailure as exc:
        raise NumericalError(f"simulation failed: {exc}") from None
    write_csv(out / "trajectory.csv", header, rows, run)

    sigma = opts.get("sigma")
    if sigma is not None and kind is not ModelKind.GENERAL:
        dataset = generate_dataset(
            kind, params, initial, years, sigma, run.seed, field=field
        )
        rows = [
            [int(y)] + list(dataset.observations[j]) for j, y in enumerate(years)
        ]
        write_csv(out / "dataset.csv", header, rows, run)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def cmd_ingest(run: RunConfig) -> int:
    opts = run.options
    try:
        exports = load_export_table(opts["exports"])
        population = load_population_table(opts["population"])
        datasets, manifest = ingest(
            exports,
            population,
            exclude_activities=opts["exclude_activities"],
            rca_min_years=opts["rca_min_years"],
            rca_consecutive=opts["rca_consecutive"],
            min_country_years=opts["min_years"],
        )
    except OSError as exc:
        raise DataError(str(exc)) from None
    except PipelineError as exc:
        raise DataError(str(exc)) from None
    out = Path(run.out)
    for ds in datasets:
        write_json(
            out / "datasets" / f"{ds.country}.json",
            {
                "country": ds.country,
                "years": ds.years,
                "activity_labels": list(ds.activity_labels),
                "observations": ds.observations,
            },
            run,
        )
    write_json(out / "manifest.json", manifest, run)
    return EXIT_OK


def _load_datasets(data_dir: str) -> list:
    root = Path(data_dir) / "datasets"
    if not root.is_dir():
        raise DataError(f"no datasets directory under {data_dir}")
    datasets = []
    for path in sorted(root.glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        datasets.append(
            Dataset(
                country=raw["country"],
                years=np.asarray(raw["years"], dtype=int),
                observations=np.asarray(raw["observations"], dtype=float),
                activity_labels=tuple(raw["activity_labels"]),
            )
        )
    if not datasets:
        raise DataError(f"no datasets found under {root}")
    return datasets


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _fit_task(args):
    kind_value, dataset, config, field, runs_index = args
    kind = ModelKind(kind_value)
    rng = run_stream(config.seed, dataset.country, kind, runs_index)
    try:
        return fit_single(kind, dataset, config, field, rng=rng, run_index=runs_index)
    except ValueError as exc:
        return str(exc)


def _best_run(results) -> Optional[FitResult]:
    best = None
    for res in results:
        if isinstance(res, FitResult) and res.success:
            if best is None or res.log_likelihood > best.log_likelihood:
                best = res
    if best is None:
        return None
    diags = tuple(
        r.diagnostics[0] for r in results if isinstance(r, FitResult)
    )
    return replace(best, diagnostics=diags)


def _fit_result_payload(country: str, dataset: Dataset, fit: FitResult) -> dict:
    return {
        "country": country,
        "model": fit.kind,
        "success": fit.success,
        "n_years": dataset.n_years,
        "n_activities": dataset.n_activities,
        "n_segments": len(fit.segments),
        "log_likelihood": fit.log_likelihood if fit.success else None,
        "sigma_hat": fit.sigma_hat,
        "r_squared": fit.r_squared,
        "params": None
        if fit.params is None
        else {
            "growth": fit.params.growth,
            "self_limitation": fit.params.self_limitation,
            "coupling": fit.params.coupling,
        },
        "segments": [
            {"start": s.start, "end": s.end, "initial": s.initial}
            for s in fit.segments
        ],
        "diagnostics": [
            {
                "run_index": d.run_index,
                "init_loss": d.init_loss,
                "loss_after_adam": d.loss_after_adam,
                "final_loss": d.final_loss,
                "bfgs_iterations": d.bfgs_iterations,
                "gradient_norm": d.gradient_norm,
                "converged": d.converged,
                "coupling_rescues": d.coupling_rescues,
                "failure": d.failure,
            }
            for d in fit.diagnostics
        ],
        "run_log_likelihoods": [
            None if math.isinf(d.final_loss) else d.final_loss
            for d in fit.diagnostics
        ],
        "note": "adam_lr/bfgs line-search settings are package defaults; "
                "the procedure's source specifies only epoch counts",
    }


def cmd_fit(run: RunConfig) -> int:
    opts = run.options
    datasets = _load_datasets(opts["data"])
    wanted_countries = opts["countries"]
    if wanted_countries:
        known = {d.country for d in datasets}
        missing = sorted(set(wanted_countries) - known)
        if missing:
            raise DataError(f"unknown countries requested: {missing}")
    kinds = [_parse_kind(m) for m in opts["models"]]
    fit_config = _fit_config_from(opts)

    skipped = []
    tasks = []
    task_keys = []
    for ds in sorted(datasets, key=lambda d: d.country):
        if wanted_countries and ds.country not in wanted_countries:
            continue
        if ds.n_years < fit_config.segment_length:
            skipped.append(
                {
                    "country": ds.country,
                    "reason": f"below K: {ds.n_years} years "
                              f"< {fit_config.segment_length}",
                }
            )
            continue
        field = None
        field_error = None
        if ModelKind.DELTA in kinds:
            try:
                field = build_global_field(datasets, ds.country)
            except (FieldUnavailable, PipelineError) as exc:
                field_error = str(exc)
        for kind in kinds:
            if kind is ModelKind.DELTA and field is None:
                skipped.append(
                    {
                        "country": ds.country,
                        "model": kind.value,
                        "reason": f"global field unavailable: {field_error}",
                    }
                )
                continue
            for run_idx in range(fit_config.runs):
                tasks.append(
                    (
                        kind.value,
                        ds,
                        fit_config,
                        field if kind is ModelKind.DELTA else None,
                        run_idx,
                    )
                )
                task_keys.append((ds.country, kind))

    if run.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=run.jobs) as pool:
            raw = list(pool.map(_fit_task, tasks))
    else:
        raw = [_fit_task(t) for t in tasks]

    grouped: dict = {}
    for key, res in zip(task_keys, raw):
        grouped.setdefault(key, []).append(res)

    out = Path(run.out)
    failures = []
    written = []
    by_country: dict = {}
    for (country, kind), results in grouped.items():
        best = _best_run(results)
        if best is None:
            reasons = [r if isinstance(r, str) else "all runs failed" for r in results]
            failures.append(
                {"country": country, "model": kind.value, "reason": reasons[0]}
            )
            continue
        dataset = next(d for d in datasets if d.country == country)
        payload = _fit_result_payload(country, dataset, best)
        path = out / "fits" / f"{country}__{kind.value}.json"
        write_json(path, payload, run)
        written.append(str(path.relative_to(out)))
        by_country.setdefault(country, []).append(kind.value)

    write_json(
        out / "fit_summary.json",
        {
            "models": [k.value for k in kinds],
            "fitted": by_country,
            "skipped": skipped,
            "failures": failures,
            "artifacts": sorted(written),
        },
        run,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------

def _load_fits(fits_dir: str) -> dict:
    root = Path(fits_dir) / "fits"
    if not root.is_dir():
        raise DataError(f"no fits directory under {fits_dir}")
    by_country: dict = {}
    for path in sorted(root.glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not raw.get("success"):
            continue
        country = raw["country"]
        by_country.setdefault(country, {})[ModelKind(raw["model"])] = raw
    if not by_country:
        raise DataError(f"no successful fits found under {root}")
    return by_country


def cmd_select(run: RunConfig) -> int:
    opts = run.options
    by_country = _load_fits(opts["fits"])
    out = Path(run.out)
    reports = []
    skipped = []
    excluded = []
    for country in sorted(by_country):
        fits = by_country[country]
        if ModelKind.NULL not in fits:
            skipped.append({"country": country, "reason": "missing null model fit"})
            continue
        if len(fits) < 2:
            skipped.append({"country": country, "reason": "fewer than 2 models fitted"})
            continue
        sample = next(iter(fits.values()))
        report = build_selection_report(
            country,
            {kind: fits[kind]["log_likelihood"] for kind in fits},
            n_activities=sample["n_activities"],
            n_years=sample["n_years"],
            n_segments=sample["n_segments"],
        )
        best_entry = next(e for e in report.entries if e.delta_bic == 0.0)
        best_r2 = fits[best_entry.kind]["r_squared"]
        if best_r2 is None or best_r2 <= 0:
            excluded.append(
                {
                    "country": country,
                    "reason": f"best model r_squared {best_r2} <= 0",
                }
            )
            continue
        reports.append((report, best_entry, best_r2))

    best_counts = {k.value: 0 for k in MEAN_FIELD_KINDS}
    supported_counts = {k.value: 0 for k in MEAN_FIELD_KINDS[1:]}
    evidence_sum = {k.value: 0.0 for k in MEAN_FIELD_KINDS[1:]}
    rows = []
    country_payloads = []
    r2_values = []
    for report, best_entry, best_r2 in reports:
        r2_values.append(best_r2)
        null_ll = report.entry(ModelKind.NULL).log_likelihood
        if report.best_kind is not None:
            best_counts[report.best_kind.value] += 1
        for entry in report.entries:
            if entry.kind is not ModelKind.NULL:
                if entry.classification is Classification.SUPPORTED or (
                    entry.classification is Classification.BEST
                ):
                    delta_vs_null = entry.bic - report.entry(ModelKind.NULL).bic
                    if delta_vs_null < -10.0:
                        supported_counts[entry.kind.value] += 1
                evidence_sum[entry.kind.value] += -2.0 * (
                    entry.log_likelihood - null_ll
                )
            rows.append(
                [
                    report.country,
                    entry.kind,
                    entry.log_likelihood,
                    entry.k,
                    entry.k_full,
                    entry.bic,
                    entry.delta_bic,
                    entry.classification,
                ]
            )
        country_payloads.append(
            {
                "country": report.country,
                "n_data": report.n_data,
                "best_model": report.best_kind,
                "best_model_r_squared": best_r2,
                "entries": [
                    {
                        "model": e.kind,
                        "log_likelihood": e.log_likelihood,
                        "k": e.k,
                        "k_full": e.k_full,
                        "bic": e.bic,
                        "delta_bic": e.delta_bic,
                        "classification": e.classification,
                    }
                    for e in report.entries
                ],
            }
        )

    write_csv(
        out / "selection.csv",
        ["country", "model", "log_likelihood", "k", "k_full", "bic", "delta_bic",
         "classification"],
        rows,
        run,
    )
    write_json(
        out / "selection.json",
        {
            "countries": country_payloads,
            "skipped": skipped,
            "excluded_nonpositive_r2": excluded,
            "aggregate": {
                "n_countries_classified": len(reports),
                "best_model_counts": best_counts,
                "supported_against_null_counts": supported_counts,
                "summed_evidence_against_null": {
                    "values": evidence_sum,
                    "note": "sum over countries of -2 (lnL_model - lnL_null); "
                            "an interpretation of a cross-country aggregate, "
                            "not a quantity defined by the procedure",
                },
                "best_r2_median": float(np.median(r2_values)) if r2_values else None,
                "best_r2_std": float(np.std(r2_values)) if r2_values else None,
            },
        },
        run,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(run: RunConfig) -> int:
    opts = run.options
    generators = [_parse_kind(g) for g in opts["generators"]]
    reduced = opts["reduced"]
    fit_config = _fit_config_from(opts)
    if reduced:
        fit_config = replace(
            fit_config,
            init_ranges=REDUCED_FIT_INIT_RANGES,
            integrator=IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7, max_steps=800),
        )

    out = Path(run.out)
    all_rows = []
    summaries = []
    ok = True
    for gen in generators:
        preset = dict(REDUCED_SWEEP_PRESETS[gen]) if reduced else {
            "coupling_grid": DEFAULT_COUPLING_GRIDS[gen]
        }
        if opts["grid"] is not None:
            preset["coupling_grid"] = tuple(opts["grid"])
        config = SweepConfig(
            generator=gen,
            sigma=opts["sigma"],
            n_activities=opts["n_activities"],
            n_years=opts["n_years"],
            replicates=opts["replicates"],
            seed=run.seed,
            **preset,
        )
        result = run_sweep(config, fit_config, jobs=run.jobs)
        summaries.append(result.summary())
        for row in result.rows():
            all_rows.append(
                [
                    row["generator"],
                    row["coupling"],
                    row["replicate"],
                    row["model"],
                    row["delta_bic"],
                    row["classification"],
                ]
            )
        if not result.passes_validation():
            ok = False

    write_csv(
        out / "sweep.csv",
        ["generator", "coupling", "replicate", "model", "delta_bic",
         "classification"],
        all_rows,
        run,
    )
    write_json(
        out / "sweep_summary.json",
        {
            "reduced": reduced,
            "generators": summaries,
            "passes_validation": ok,
        },
        run,
    )
    if not ok:
        raise NumericalError(
            "sweep validation properties failed (see sweep_summary.json)"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _load_gdp(path: str) -> dict:
    gdp = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["country_code", "gdp"]:
                raise DataError(
                    f"{path}: expected header ['country_code', 'gdp'], got {header}"
                )
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    gdp[row[0]] = float(row[1])
                except (IndexError, ValueError) as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from None
    except OSError as exc:
        raise DataError(str(exc)) from None
    return gdp


def _regression(entry_name, design, response, names):
    try:
        res = ols(design, response, names=names)
        return {
            "name": entry_name,
            "status": "ok",
            "n_obs": res.n_obs,
            "r_squared": res.r_squared,
            "terms": res.as_table(),
        }
    except ValueError as exc:
        return {"name": entry_name, "status": f"skipped: {exc}", "terms": []}


def cmd_report(run: RunConfig) -> int:
    opts = run.options
    selection_path = Path(opts["selection"]) / "selection.json"
    if not selection_path.exists():
        raise DataError(f"no selection.json under {opts['selection']}")
    with open(selection_path, encoding="utf-8") as fh:
        selection = json.load(fh)
    gdp = _load_gdp(opts["gdp"])

    rows = []
    missing_gdp = []
    for country in selection["countries"]:
        name = country["country"]
        best = next(e for e in country["entries"] if e["delta_bic"] == 0.0)
        if name not in gdp:
            missing_gdp.append(name)
            continue
        n_act = country["n_data"] // _country_years(country)
        rows.append(
            {
                "country": name,
                "log_likelihood": best["log_likelihood"],
                "nt": country["n_data"],
                "n_activities": n_act,
                "gdp": gdp[name],
            }
        )
    if len(rows) < 3:
        raise DataError(
            f"need at least 3 countries with GDP for the regressions, "
            f"have {len(rows)} (missing GDP: {missing_gdp})"
        )

    ll = np.array([r["log_likelihood"] for r in rows])
    nt = np.array([float(r["nt"]) for r in rows])
    n_act = np.array([float(r["n_activities"]) for r in rows])
    log_gdp = np.log(np.array([r["gdp"] for r in rows]))
    n = len(rows)
    ones = np.ones(n)

    regressions = []
    # data-count regression, standardized variables (zero intercept by
    # construction) and raw variables
    try:
        ll_std, nt_std = standardize(ll), standardize(nt)
        regressions.append(
            _regression(
                "log_likelihood~nt (standardized)",
                np.column_stack([ones, nt_std]), ll_std, ("intercept", "nt"),
            )
        )
    except ValueError as exc:
        ll_std = nt_std = None
        regressions.append(
            {"name": "log_likelihood~nt (standardized)",
             "status": f"skipped: {exc}", "terms": []}
        )
    regressions.append(
        _regression(
            "log_likelihood~nt (raw)",
            np.column_stack([ones, nt]), ll, ("intercept", "nt"),
        )
    )

    # residual regression on activity count and log GDP; residuals come from
    # the standardized data-count fit when available, the raw one otherwise
    if nt_std is not None:
        design1, response1 = np.column_stack([ones, nt_std]), ll_std
    else:
        design1, response1 = np.column_stack([ones, nt]), ll
    beta = np.linalg.lstsq(design1, response1, rcond=None)[0]
    residuals = response1 - design1 @ beta
    try:
        design_std = np.column_stack([ones, standardize(n_act), standardize(log_gdp)])
        regressions.append(
            _regression("residuals~n+log_gdp (standardized)", design_std,
                        residuals, ("intercept", "n_activities", "log_gdp"))
        )
    except ValueError as exc:
        regressions.append(
            {"name": "residuals~n+log_gdp (standardized)",
             "status": f"skipped: {exc}", "terms": []}
        )
    regressions.append(
        _regression(
            "residuals~n+log_gdp (raw)",
            np.column_stack([ones, n_act, log_gdp]), residuals,
            ("intercept", "n_activities", "log_gdp"),
        )
    )

    out = Path(run.out)
    write_json(
        out / "regressions.json",
        {
            "regressions": regressions,
            "missing_gdp": sorted(missing_gdp),
            "note": "variants are labeled raw/standardized because the "
                    "variable transformations behind the reference table "
                    "are inferred, not stated",
        },
        run,
    )
    reg_rows = []
    for reg in regressions:
        for term in reg["terms"]:
            reg_rows.append(
                [
                    reg["name"],
                    term["name"],
                    term["coefficient"],
                    term["standard_error"],
                    term["t_statistic"],
                    term["p_value"],
                    reg.get("r_squared"),
                    reg.get("n_obs"),
                ]
            )
    write_csv(
        out / "regressions.csv",
        ["regression", "term", "coefficient", "standard_error", "t_statistic",
         "p_value", "r_squared", "n_obs"],
        reg_rows,
        run,
    )
    scatter = [
        [r["country"], r["nt"], r["n_activities"], r["log_likelihood"],
         r["gdp"], math.log(r["gdp"]), float(res)]
        for r, res in zip(rows, residuals)
    ]
    write_csv(
        out / "scatter.csv",
        ["country", "nt", "n_activities", "log_likelihood", "gdp", "log_gdp",
         "residual_std"],
        scatter,
        run,
    )
    return EXIT_OK


def _country_years(country_payload: dict) -> int:
    # n_data = N * T and every entry shares the dataset, so T = n_data / N
    first = country_payload["entries"][0]
    n_act = (first["k"] - (0 if ModelKind(first["model"]) is ModelKind.NULL else 1)) // 2
    return country_payload["n_data"] // n_act


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="ecodyn", description=__doc__)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--config", type=str, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a model and write the trajectory")
    p.add_argument("--kind", type=str, default=None)
    p.add_argument("--params", type=str, default=None)
    p.add_argument("--t0", type=int, default=None)
    p.add_argument("--t1", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)

    p = sub.add_parser("ingest", help="build per-country datasets from raw tables")
    p.add_argument("--exports", type=str, default=None)
    p.add_argument("--population", type=str, default=None)
    p.add_argument("--exclude-activities", dest="exclude_activities", type=str)
    p.add_argument("--rca-min-years", dest="rca_min_years", type=int)
    p.add_argument("--rca-consecutive", dest="rca_consecutive",
                   action="store_const", const=True)
    p.add_argument("--min-years", dest="min_years", type=int)

    p = sub.add_parser("fit", help="fit models to ingested datasets")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--countries", type=str, default=None)
    p.add_argument("--models", type=str, default=None)
    _add_fit_flags(p)

    p = sub.add_parser("select", help="BIC comparison over fitted models")
    p.add_argument("--fits", type=str, default=None)

    p = sub.add_parser("sweep", help="synthetic model-recovery validation")
    p.add_argument("--generators", type=str, default=None)
    p.add_argument("--grid", type=str, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--n", dest="n_activities", type=int, default=None)
    p.add_argument("--t", dest="n_years", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--reduced", action="store_const", const=True, default=None)
    _add_fit_flags(p)

    p = sub.add_parser("report", help="fit-quality regressions from selection output")
    p.add_argument("--selection", type=str, default=None)
    p.add_argument("--gdp", type=str, default=None)

    return parser


def _split_csv_flag(value, default):
    if value is None:
        return default
    if isinstance(value, (list, tuple)):
        return list(value)
    return [v.strip() for v in str(value).split(",") if v.strip()]


_REQUIRED = {
    "simulate": ("params",),
    "ingest": ("exports", "population"),
    "fit": ("data",),
    "select": ("fits",),
    "sweep": (),
    "report": ("selection", "gdp"),
}


def _resolve_options(args, file_cfg) -> RunConfig:
    command = args.command
    seed = int(_resolve(args, file_cfg, "seed", 0))
    jobs = int(_resolve(args, file_cfg, "jobs", 1))
    out = _resolve(args, file_cfg, "out", "out")
    opts: dict = {}

    if command == "simulate":
        opts["params"] = _resolve(args, file_cfg, "params", None)
        opts["t0"] = int(_resolve(args, file_cfg, "t0", 0))
        t1 = _resolve(args, file_cfg, "t1", None)
        if t1 is None:
            raise UsageError("simulate requires --t1")
        opts["t1"] = int(t1)
        sigma = _resolve(args, file_cfg, "sigma", None)
        opts["sigma"] = None if sigma is None else float(sigma)
    elif command == "ingest":
        opts["exports"] = _resolve(args, file_cfg, "exports", None)
        opts["population"] = _resolve(args, file_cfg, "population", None)
        opts["exclude_activities"] = _split_csv_flag(
            _resolve(args, file_cfg, "exclude_activities", None), []
        )
        opts["rca_min_years"] = int(_resolve(args, file_cfg, "rca_min_years", 4))
        opts["rca_consecutive"] = bool(
            _resolve(args, file_cfg, "rca_consecutive", False)
        )
        opts["min_years"] = int(_resolve(args, file_cfg, "min_years", 20))
    elif command == "fit":
        opts["data"] = _resolve(args, file_cfg, "data", None)
        opts["countries"] = _split_csv_flag(
            _resolve(args, file_cfg, "countries", None), []
        )
        opts["models"] = _split_csv_flag(
            _resolve(args, file_cfg, "models", None),
            [k.value for k in MEAN_FIELD_KINDS],
        )
        for key, cast, default in _FIT_OPT_SPECS:
            opts[key] = cast(_resolve(args, file_cfg, key, default))
        opts["seed"] = seed
    elif command == "select":
        opts["fits"] = _resolve(args, file_cfg, "fits", None)
    elif command == "sweep":
        opts["generators"] = _split_csv_flag(
            _resolve(args, file_cfg, "generators", None),
            [k.value for k in MEAN_FIELD_KINDS[1:]],
        )
        grid = _resolve(args, file_cfg, "grid", None)
        if grid is not None and not isinstance(grid, (list, tuple)):
            grid = [float(v) for v in str(grid).split(",") if v.strip() != ""]
        opts["grid"] = None if grid is None else [float(v) for v in grid]
        opts["reduced"] = bool(_resolve(args, file_cfg, "reduced", False))
        opts["sigma"] = float(_resolve(args, file_cfg, "sigma", 0.2))
        opts["n_activities"] = int(
            _resolve(args, file_cfg, "n_activities", 4 if opts["reduced"] else 9)
        )
        opts["n_years"] = int(
            _resolve(args, file_cfg, "n_years", 40 if opts["reduced"] else 59)
        )
        opts["replicates"] = int(_resolve(args, file_cfg, "replicates", 3))
        fit_defaults = (
            {"adam_epochs": 200, "quasi_newton_epochs": 200, "runs": 2}
            if opts["reduced"]
            else {}
        )
        for key, cast, default in _FIT_OPT_SPECS:
            opts[key] = cast(
                _resolve(args, file_cfg, key, fit_defaults.get(key, default))
            )
        opts["seed"] = seed
    elif command == "report":
        opts["selection"] = _resolve(args, file_cfg, "selection", None)
        opts["gdp"] = _resolve(args, file_cfg, "gdp", None)
    for key in _REQUIRED[command]:
        if opts.get(key) is None:
            raise UsageError(f"{command} requires --{key.replace('_', '-')}")
    return RunConfig(command=command, seed=seed, jobs=jobs, out=out, options=opts)


_COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "select": cmd_select,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = _load_config_file(args.config)
        run = _resolve_options(args, file_cfg)
        return _COMMANDS[run.command](run)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry_point():  # console-script target
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
