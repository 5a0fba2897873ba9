"""Command-line entry point: analyze, contour, benchmark, simulate.

Configuration is a strict JSON file (unknown keys are rejected before any
computation). Outputs are static, machine-readable reports: ``report.json``,
``contour.csv``/``contour.svg``, ``benchmark.csv`` and ``coverage.csv``.
Floating-point values are written with 17 significant digits so identical
configurations produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .contours import render_contour_svg
from .dataio import CsvSchema, Dataset, load_csv, make_fold_plan
from .dml import ComponentConfig, estimate_components, median_aggregate
from .functionals import ACD, KINDS, PLM_COEFFICIENT, FunctionalSpec
from .learners import (
    Dictionary,
    PenalizedLinearLearner,
    TreeEnsembleLearner,
    cross_val_mse,
    select_learner_cv,
)
from .riesz import ANALYTIC, PLM, VARIATIONAL
from .sensitivity import (
    SensitivityParams,
    benchmark_covariates,
    compute_bounds,
    contour_grid,
    robustness_value,
    z_quantile,
)
from .synth import CoverageConfig, SynthSpec, coverage_experiment, generate

REPORT_SCHEMA_VERSION = 1

GENERAL_MODEL_NOTE = (
    "outside partially-linear or homoscedastic-Gaussian treatment models, "
    "the treatment-axis strength eta_d2 measures the share of Riesz-"
    "representer variance generated by latent variables, not literally a "
    "treatment partial R2"
)


class ConfigError(ValueError):
    """Raised when the configuration file violates the schema."""


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

_LEARNER_KEYS = {
    "penalized_linear": {"method", "l1_weight", "l2_weight", "dictionary", "tol", "max_sweeps"},
    "tree_ensemble": {
        "method",
        "num_trees",
        "max_depth",
        "min_leaf",
        "subsample",
        "max_features",
    },
    "cv": {"method", "candidates"},
}

_DICTIONARY_KEYS = {"include_intercept", "raw", "squares", "interactions", "max_columns"}

_SCHEMA = {
    "schema_version": None,
    "data": {
        "csv": {"path", "outcome", "treatment", "covariates", "group"},
        "synthetic": {
            "dgp",
            "n",
            "dims",
            "cy2",
            "cd2",
            "b_g",
            "b_alpha",
            "rho",
            "theta",
            "seed",
        },
    },
    "functional": {
        "kind",
        "weight",
        "apo_level",
        "transport",
        "direction",
        "fd_step",
        "shift_samples",
    },
    "learners": {"regression", "treatment", "outcome", "propensity"},
    "riesz": {"method", "trim", "l1_weight", "l2_weight", "dictionary"},
    "folds": {"num_folds", "seed", "strata_column", "repeats"},
    "sensitivity": {"scenarios", "rv_thresholds", "level"},
    "contour": {
        "eta_d2_max",
        "eta_y2_max",
        "grid_points",
        "quantity",
        "threshold",
        "svg",
        "reference_multiplier",
    },
    "benchmark": {"covariates"},
    "simulate": {"reps", "workers", "oracle_nuisances", "level"},
}


def _check_keys(mapping: dict, allowed, path: str):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys at {path}: {sorted(unknown)}")


def _check_learner(cfg: dict, path: str):
    if not isinstance(cfg, dict) or "method" not in cfg:
        raise ConfigError(f"{path} must be an object with a 'method' key")
    method = cfg["method"]
    if method not in _LEARNER_KEYS:
        raise ConfigError(
            f"{path}.method must be one of {sorted(_LEARNER_KEYS)}, got {method!r}"
        )
    _check_keys(cfg, _LEARNER_KEYS[method], path)
    if "dictionary" in cfg and cfg["dictionary"] is not None:
        _check_keys(cfg["dictionary"], _DICTIONARY_KEYS, f"{path}.dictionary")
    if method == "cv":
        for i, sub in enumerate(cfg.get("candidates", [])):
            _check_learner(sub, f"{path}.candidates[{i}]")


def validate_config(config: dict):
    """Reject unknown keys and structurally invalid sections up front."""
    if not isinstance(config, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_keys(config, _SCHEMA, "$")
    if "data" not in config:
        raise ConfigError("missing required section 'data'")
    _check_keys(config["data"], _SCHEMA["data"], "$.data")
    if len(config["data"]) != 1:
        raise ConfigError("$.data must contain exactly one of 'csv' or 'synthetic'")
    for source, keys in _SCHEMA["data"].items():
        if source in config["data"]:
            _check_keys(config["data"][source], keys, f"$.data.{source}")
    for section in ("functional", "riesz", "folds", "sensitivity", "contour", "benchmark", "simulate"):
        if section in config and config[section] is not None:
            _check_keys(config[section], _SCHEMA[section], f"$.{section}")
    if "functional" in config:
        kind = config["functional"].get("kind")
        if kind not in KINDS:
            raise ConfigError(f"$.functional.kind must be one of {KINDS}, got {kind!r}")
    if "learners" in config:
        _check_keys(config["learners"], _SCHEMA["learners"], "$.learners")
        for role, cfg in config["learners"].items():
            _check_learner(cfg, f"$.learners.{role}")
    if "riesz" in config:
        method = config["riesz"].get("method", VARIATIONAL)
        if method not in (ANALYTIC, PLM, VARIATIONAL):
            raise ConfigError("$.riesz.method must be analytic, plm or variational")
    for scenario in config.get("sensitivity", {}).get("scenarios", []):
        _check_keys(scenario, {"eta_y2", "eta_d2", "rho_abs"}, "$.sensitivity.scenarios[]")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _build_dictionary(cfg, default_intercept=True) -> Dictionary:
    cfg = cfg or {}
    return Dictionary(
        include_intercept=cfg.get("include_intercept", default_intercept),
        raw=cfg.get("raw", True),
        squares=cfg.get("squares", True),
        interactions=cfg.get("interactions", True),
        max_columns=cfg.get("max_columns", 5000),
    )


def _build_learner(cfg, seed: int):
    cfg = cfg or {"method": "penalized_linear"}
    method = cfg["method"]
    if method == "penalized_linear":
        dictionary = None
        if cfg.get("dictionary") is not None:
            dictionary = _build_dictionary(cfg["dictionary"], default_intercept=False)
        return PenalizedLinearLearner(
            dictionary=dictionary,
            l1_weight=cfg.get("l1_weight", 0.0),
            l2_weight=cfg.get("l2_weight", 1e-8),
            seed=seed,
            tol=cfg.get("tol", 1e-7),
            max_sweeps=cfg.get("max_sweeps", 10_000),
        )
    if method == "tree_ensemble":
        return TreeEnsembleLearner(
            num_trees=cfg.get("num_trees", 500),
            max_depth=cfg.get("max_depth"),
            min_leaf=cfg.get("min_leaf", 5),
            subsample=cfg.get("subsample", 1.0),
            max_features=cfg.get("max_features", 1 / 3),
            seed=seed,
        )
    if method == "cv":
        return [_build_learner(sub, seed) for sub in cfg["candidates"]]
    raise ConfigError(f"unknown learner method {method!r}")


def _resolve_learner(built, features, targets, plan):
    if isinstance(built, list):
        return select_learner_cv(built, features, targets, plan)
    return built


def _load_data(config: dict) -> Dataset:
    data_cfg = config["data"]
    if "csv" in data_cfg:
        c = data_cfg["csv"]
        schema = CsvSchema(
            outcome=c["outcome"],
            treatment=c["treatment"],
            covariates=c.get("covariates"),
            group=c.get("group"),
        )
        return load_csv(c["path"], schema)
    return generate(_synth_spec(config))[0]


def _synth_spec(config: dict) -> SynthSpec:
    c = config["data"]["synthetic"]
    return SynthSpec(
        dgp=c["dgp"],
        n=c["n"],
        dims=c.get("dims", 5),
        cy2=c.get("cy2"),
        cd2=c.get("cd2"),
        b_g=c.get("b_g"),
        b_alpha=c.get("b_alpha"),
        rho=c.get("rho", 1.0),
        theta=c.get("theta", 1.0),
        seed=c.get("seed", 0),
    )


def _build_spec(config: dict, data: Dataset) -> FunctionalSpec:
    f = config.get("functional", {"kind": ACD})
    shift = f.get("shift_samples")
    if shift is not None:
        shift = (np.asarray(shift["target"], dtype=float), np.asarray(shift["baseline"], dtype=float))
    spec = FunctionalSpec(
        kind=f.get("kind", ACD),
        weight=f.get("weight"),
        apo_level=f.get("apo_level"),
        transport=f.get("transport"),
        direction=f.get("direction"),
        fd_step=f.get("fd_step", 0.01),
        shift_samples=shift,
    )
    return spec.for_dataset(data)


def _strata(config: dict, data: Dataset):
    column = config.get("folds", {}).get("strata_column")
    if column is None:
        return None
    if column not in data.column_names:
        raise ConfigError(f"strata column {column!r} is not a covariate")
    return data.covariates[:, data.column_names.index(column)]


def _component_config(config: dict, data: Dataset, spec: FunctionalSpec, plan, seed: int) -> ComponentConfig:
    learner_cfg = config.get("learners", {})
    riesz_cfg = config.get("riesz", {})
    riesz_method = riesz_cfg.get("method", VARIATIONAL)

    regression = _resolve_learner(
        _build_learner(learner_cfg.get("regression"), seed), data.wmatrix, data.outcome, plan
    )
    treatment = None
    if learner_cfg.get("treatment") is not None or spec.kind == PLM_COEFFICIENT or riesz_method == PLM:
        treatment = _resolve_learner(
            _build_learner(learner_cfg.get("treatment"), seed),
            data.covariates,
            data.treatment,
            plan,
        )
    outcome = None
    if learner_cfg.get("outcome") is not None or spec.kind == PLM_COEFFICIENT:
        outcome = _resolve_learner(
            _build_learner(learner_cfg.get("outcome"), seed),
            data.covariates,
            data.outcome,
            plan,
        )
    propensity = None
    if riesz_method == ANALYTIC:
        propensity = _resolve_learner(
            _build_learner(learner_cfg.get("propensity"), seed),
            data.covariates,
            data.treatment,
            plan,
        )
    return ComponentConfig(
        regression_learner=regression,
        riesz_method=riesz_method,
        propensity_learner=propensity,
        treatment_learner=treatment,
        outcome_learner=outcome,
        dictionary=_build_dictionary(riesz_cfg.get("dictionary")),
        l1_weight=riesz_cfg.get("l1_weight", 0.0),
        l2_weight=riesz_cfg.get("l2_weight", 0.0),
        trim=riesz_cfg.get("trim", 0.01),
    )


# ---------------------------------------------------------------------------
# Deterministic serialization
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    """Fixed 17-significant-digit decimal rendering."""
    if value != value:
        return "NaN"
    if value in (float("inf"), float("-inf")):
        return '"Infinity"' if value > 0 else '"-Infinity"'
    return format(float(value), ".17g")


def _to_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{inner}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{_to_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_json(path: Path, obj: dict):
    path.write_text(_to_json(obj) + "\n", encoding="utf-8", newline="\n")


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def _aggregated_estimate(runs, index) -> dict:
    """Median-aggregate one component across fold-plan repetitions."""
    values = [run[index].value for run in runs]
    ses = [run[index].std_error for run in runs]
    value, std_error = median_aggregate(values, ses)
    return {
        "value": value,
        "std_error": std_error,
        "t_value": value / std_error if std_error > 0 else float("inf"),
        "method": runs[0][index].meta,
    }


def build_report(
    spec: FunctionalSpec,
    components,
    scenarios,
    rv_thresholds,
    level: float,
    sample: dict,
    folds: dict,
    diagnostics: dict,
    extra_runs=(),
) -> dict:
    """Assemble the analysis report from estimated components.

    ``components`` is the (theta, sigma2, nu2) estimate triple; scenario
    bounds and (confidence-bound) robustness values are derived here, so
    injected component estimates round-trip through the exact reporting
    path. ``extra_runs`` holds the triples from additional fold-plan
    repetitions; with repetitions, every reported quantity is the median
    across runs and standard errors absorb the across-run spread.
    """
    runs = [components, *extra_runs]
    z = z_quantile(level)

    estimates = {
        "theta_s": _aggregated_estimate(runs, 0),
        "sigma2_s": _aggregated_estimate(runs, 1),
        "nu2_s": _aggregated_estimate(runs, 2),
    }
    s_value = math.sqrt(estimates["sigma2_s"]["value"] * estimates["nu2_s"]["value"])
    estimates["s_value"] = s_value

    scenario_rows = []
    for params in scenarios:
        per_run = [compute_bounds(*run, params, a=level) for run in runs]
        minus, se_minus = median_aggregate(
            [b.theta_minus for b in per_run],
            [(b.theta_minus - b.conf_lower) / z for b in per_run],
        )
        plus, se_plus = median_aggregate(
            [b.theta_plus for b in per_run],
            [(b.conf_upper - b.theta_plus) / z for b in per_run],
        )
        scenario_rows.append(
            {
                "eta_y2": params.eta_y2,
                "eta_d2": params.eta_d2,
                "rho_abs": params.rho_abs,
                "cy2": params.cy2,
                "cd2": params.cd2,
                "bias_bound": float(np.median([b.bias_bound for b in per_run])),
                "theta_minus": minus,
                "theta_plus": plus,
                "conf_lower": minus - z * se_minus,
                "conf_upper": plus + z * se_plus,
                "level": level,
            }
        )

    rv_rows = []
    for threshold in rv_thresholds:
        per_run_rv = [
            robustness_value(run[0].value, math.sqrt(run[1].value * run[2].value), threshold)
            for run in runs
        ]
        per_run_rv_a = [
            robustness_value(
                run[0].value,
                math.sqrt(run[1].value * run[2].value),
                threshold,
                components=run,
                a=level,
            )
            for run in runs
        ]
        rv_rows.append(
            {
                "threshold": threshold,
                "rv": float(np.median(per_run_rv)),
                "rv_a": float(np.median(per_run_rv_a)),
                "level": level,
            }
        )

    notes = [GENERAL_MODEL_NOTE, f"nu2 estimated by the {runs[0][2].meta} score"]
    if len(runs) > 1:
        notes.append(
            f"median aggregation over {len(runs)} fold-plan repetitions; "
            "standard errors absorb the across-run spread"
        )
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "package": f"ovbounds {__version__}",
        "functional": {
            "kind": spec.kind,
            "weight": spec.weight,
            "apo_level": spec.apo_level,
            "direction": spec.direction,
            "fd_step": spec.fd_step if spec.kind == ACD else None,
        },
        "sample": sample,
        "folds": folds,
        "estimates": estimates,
        "scenarios": scenario_rows,
        "robustness_values": rv_rows,
        "diagnostics": dict(diagnostics, notes=notes),
    }


def _scenarios(config: dict):
    rows = config.get("sensitivity", {}).get("scenarios", [])
    return [
        SensitivityParams.from_eta(
            eta_y2=row["eta_y2"], eta_d2=row["eta_d2"], rho_abs=row.get("rho_abs", 1.0)
        )
        for row in rows
    ]


def _run_components(config: dict, data: Dataset, spec: FunctionalSpec, seed: int):
    """Estimate components for each cross-fitting repetition."""
    folds_cfg = config.get("folds", {})
    num_folds = folds_cfg.get("num_folds", 5)
    repeats = folds_cfg.get("repeats", 1)
    strata = _strata(config, data)
    groups = data.group_label

    children = np.random.SeedSequence(seed).spawn(max(repeats, 1))
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
    runs = []
    for rep_seed in seeds:
        plan = make_fold_plan(data.n, num_folds, seed=rep_seed, groups=groups, strata=strata)
        cfg = _component_config(config, data, spec, plan, rep_seed)
        runs.append((rep_seed, cfg, estimate_components(data, spec, plan, cfg)))
    return runs


def cmd_analyze(config: dict, out_dir: Path, seed=None, threads=None) -> Path:
    """End-to-end analysis producing ``report.json``; returns its path."""
    del threads
    validate_config(config)
    data = _load_data(config)
    spec = _build_spec(config, data)
    sens_cfg = config.get("sensitivity", {})
    level = sens_cfg.get("level", 0.05)
    base_seed = seed if seed is not None else config.get("folds", {}).get("seed", 0)

    runs = _run_components(config, data, spec, base_seed)
    rep_seeds = [s for s, _, _ in runs]
    sets = [cs for _, _, cs in runs]

    first = sets[0]
    diagnostics = {
        "riesz_method": first.riesz_method,
        "riesz": first.diagnostics,
        "fold_seeds": rep_seeds,
        "learner_cv_rmse": _learner_rmse(config, data, spec, rep_seeds[0]),
    }
    report = build_report(
        spec=spec,
        components=first.as_tuple(),
        scenarios=_scenarios(config),
        rv_thresholds=sens_cfg.get("rv_thresholds", [0.0]),
        level=level,
        sample={"n": data.n, "num_covariates": data.p},
        folds={
            "num_folds": config.get("folds", {}).get("num_folds", 5),
            "repeats": len(sets),
            "seeds": rep_seeds,
        },
        diagnostics=diagnostics,
        extra_runs=[cs.as_tuple() for cs in sets[1:]],
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    write_json(path, report)
    return path


def _learner_rmse(config, data, spec, seed):
    """Cross-validated RMSE of the configured learners (diagnostics only)."""
    plan = make_fold_plan(
        data.n,
        config.get("folds", {}).get("num_folds", 5),
        seed=seed,
        groups=data.group_label,
        strata=_strata(config, data),
    )
    out = {}
    try:
        if spec.kind == PLM_COEFFICIENT:
            learner_cfg = config.get("learners", {})
            outcome = _resolve_learner(
                _build_learner(learner_cfg.get("outcome"), seed),
                data.covariates,
                data.outcome,
                plan,
            )
            treatment = _resolve_learner(
                _build_learner(learner_cfg.get("treatment"), seed),
                data.covariates,
                data.treatment,
                plan,
            )
            out["outcome_given_x"] = float(
                np.sqrt(cross_val_mse(outcome, data.covariates, data.outcome, plan))
            )
            out["treatment_given_x"] = float(
                np.sqrt(cross_val_mse(treatment, data.covariates, data.treatment, plan))
            )
        else:
            regression = _resolve_learner(
                _build_learner(config.get("learners", {}).get("regression"), seed),
                data.wmatrix,
                data.outcome,
                plan,
            )
            out["outcome_given_dw"] = float(
                np.sqrt(cross_val_mse(regression, data.wmatrix, data.outcome, plan))
            )
    except Exception as exc:  # noqa: BLE001 - diagnostics must not block reports
        out["error"] = str(exc)
    return out


def cmd_contour(config: dict, out_dir: Path, seed=None, threads=None) -> Path:
    """Contour grid export (CSV, optionally SVG); returns the CSV path."""
    del threads
    validate_config(config)
    contour_cfg = config.get("contour")
    if not contour_cfg:
        raise ConfigError("missing 'contour' section")
    data = _load_data(config)
    spec = _build_spec(config, data)
    base_seed = seed if seed is not None else config.get("folds", {}).get("seed", 0)
    runs = _run_components(config, data, spec, base_seed)
    components = runs[0][2].as_tuple()
    level = config.get("sensitivity", {}).get("level", 0.05)

    points = contour_cfg.get("grid_points", 25)
    eta_d2_axis = np.linspace(0.0, contour_cfg["eta_d2_max"], points)
    eta_y2_axis = np.linspace(0.0, contour_cfg["eta_y2_max"], points)
    quantity = contour_cfg.get("quantity", "conf_lower")
    grid = contour_grid(
        components,
        SensitivityParams.from_strength(0.0, 0.0, rho_abs=1.0),
        eta_d2_axis,
        eta_y2_axis,
        quantity=quantity,
        threshold=contour_cfg.get("threshold", 0.0),
        a=level,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "contour.csv"
    write_csv(csv_path, ["eta_d2", "eta_y2", "value"], grid.long_rows())

    if contour_cfg.get("svg", False):
        reference = []
        bench_cfg = config.get("benchmark")
        if bench_cfg:
            multiplier = contour_cfg.get("reference_multiplier", 1.0)
            cfg = runs[0][1]
            rows = benchmark_covariates(
                data, spec, runs[0][2].plan, cfg, bench_cfg["covariates"], full=runs[0][2]
            )
            for row in rows:
                if row.error is None:
                    params = row.implied_params(multiplier)
                    reference.append(
                        (params.eta_d2, params.eta_y2, f"{multiplier:g} x {row.covariate}")
                    )
        svg = render_contour_svg(
            grid.eta_d2_axis,
            grid.eta_y2_axis,
            grid.values(),
            critical_threshold=grid.critical_threshold,
            reference_points=reference,
            title=f"{quantity} under latent confounding",
        )
        (out_dir / "contour.svg").write_text(svg, encoding="utf-8", newline="\n")
    return csv_path


def cmd_benchmark(config: dict, out_dir: Path, seed=None, threads=None) -> Path:
    """Observed-covariate benchmark table; returns the CSV path."""
    del threads
    validate_config(config)
    bench_cfg = config.get("benchmark")
    if not bench_cfg:
        raise ConfigError("missing 'benchmark' section")
    data = _load_data(config)
    spec = _build_spec(config, data)
    base_seed = seed if seed is not None else config.get("folds", {}).get("seed", 0)
    runs = _run_components(config, data, spec, base_seed)
    _, cfg, full = runs[0]
    rows = benchmark_covariates(data, spec, full.plan, cfg, bench_cfg["covariates"], full=full)

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "benchmark.csv"
    write_csv(
        path,
        ["covariate", "delta_eta_y2", "delta_eta_d2", "rho_j", "delta_theta", "error"],
        [
            (r.covariate, r.delta_eta_y2, r.delta_eta_d2, r.rho_j, r.delta_theta, r.error or "")
            for r in rows
        ],
    )
    return path


def cmd_simulate(config: dict, out_dir: Path, seed=None, threads=None) -> Path:
    """Coverage experiment; returns the coverage CSV path."""
    validate_config(config)
    sim_cfg = config.get("simulate")
    if not sim_cfg:
        raise ConfigError("missing 'simulate' section")
    if "synthetic" not in config["data"]:
        raise ConfigError("simulate needs a synthetic data source")
    spec = _synth_spec(config)
    if seed is not None:
        spec = replace(spec, seed=seed)
    coverage = coverage_experiment(
        spec,
        reps=sim_cfg["reps"],
        a=sim_cfg.get("level", 0.05),
        config=CoverageConfig(
            oracle_nuisances=sim_cfg.get("oracle_nuisances", False),
            num_folds=config.get("folds", {}).get("num_folds", 5),
            workers=threads if threads is not None else sim_cfg.get("workers", 1),
        ),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "coverage.csv"
    summary = coverage.as_dict()
    write_csv(path, list(summary.keys()), [list(summary.values())])
    return path


COMMANDS = {
    "analyze": cmd_analyze,
    "contour": cmd_contour,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ovbounds",
        description=(
            "Sharp omitted-variable-bias bounds and debiased-ML confidence "
            "bounds for causal functionals"
        ),
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON configuration")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the fold seed")
    parser.add_argument("--threads", type=int, default=None, help="worker count override")
    args = parser.parse_args(argv)

    try:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        print(
            json.dumps({"error": {"type": "ConfigError", "message": f"no such config: {args.config}"}}),
            file=sys.stderr,
        )
        return 2
    except json.JSONDecodeError as exc:
        print(
            json.dumps({"error": {"type": "ConfigError", "message": f"invalid JSON: {exc}"}}),
            file=sys.stderr,
        )
        return 2

    try:
        path = COMMANDS[args.command](
            config, Path(args.out), seed=args.seed, threads=args.threads
        )
    except Exception as exc:  # noqa: BLE001 - structured error reporting
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
