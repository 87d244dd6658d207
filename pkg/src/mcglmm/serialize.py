"""File formats: dataset CSV, config JSON, result/trace/summary output.

All floating-point output is printed with 17 significant digits and
every file is written to a temporary name and atomically renamed, so
identical runs produce byte-identical files and interrupted runs leave
no partial output. Wall-clock timings are deliberately kept out of the
result and summary files (they would break reproducibility) and go to
a sidecar file instead.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Any

import numpy as np

from .covariance import CovarianceParams
from .fitter import FitConfig, FitResult
from .model import BINOMIAL, POISSON, Family, ModelData, check_model_data
from .simulate import BINOMIAL_UNIFORM, POISSON_GRID, ReplicateResult, ScenarioSpec, SummaryRow
from .stopping import IterationRecord, SampleSizeConfig, StoppingConfig

CONFIG_SECTIONS = {"seed", "family", "covariance", "stopping", "sampling", "scenario"}

RESULT_SCHEMA = {
    "type": "object",
    "required": [
        "beta_hat",
        "se_beta",
        "wald_ci_beta",
        "tau2",
        "lambda",
        "log_tau2",
        "log_lambda",
        "theta_information",
        "converged",
        "n_iterations",
        "m_samples",
        "re_posterior_mean",
        "re_posterior_var_mean",
    ],
    "additionalProperties": False,
    "properties": {
        "beta_hat": {"type": "array", "items": {"type": "number"}},
        "se_beta": {"type": "array", "items": {"type": "number"}},
        "wald_ci_beta": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "tau2": {"type": "number"},
        "lambda": {"type": "number"},
        "log_tau2": {"type": "number"},
        "log_lambda": {"type": "number"},
        "theta_information": {
            "type": "array",
            "items": {"type": "array", "items": {"type": ["number", "null"]}},
        },
        "converged": {"type": "boolean"},
        "n_iterations": {"type": "integer"},
        "m_samples": {"type": "integer"},
        "re_posterior_mean": {"type": "array", "items": {"type": "number"}},
        "re_posterior_var_mean": {"type": "number"},
    },
}


def fmt(x) -> str:
    """Render one scalar for CSV output (floats at 17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def atomic_write(path: str, text: str) -> None:
    """Write text to path via a temporary file and atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj: Any, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits (non-finite -> null)."""
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{inner}{json.dumps(str(k))}: {dumps_json(v, indent + 2)}'
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{inner}{dumps_json(v, indent + 2)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    return json.dumps(obj)


# ---------------------------------------------------------------------------
# dataset CSV


def write_dataset(path: str, data: ModelData, family: Family) -> None:
    """Write a dataset with the coord_x,coord_y,y[,trials],x1..xP schema.

    Only datasets with one random effect per observation (Z = identity)
    are representable on disk.
    """
    n, p = data.X.shape
    if data.Z.shape != (n, n) or not np.array_equal(data.Z, np.eye(n)):
        raise ValueError("only identity-Z datasets can be written to CSV")
    header = ["coord_x", "coord_y", "y"]
    if family.kind == BINOMIAL:
        header.append("trials")
    header += [f"x{j + 1}" for j in range(p)]
    lines = [",".join(header)]
    for i in range(n):
        row = [fmt(data.coords[i, 0]), fmt(data.coords[i, 1]), str(int(data.y[i]))]
        if family.kind == BINOMIAL:
            row.append(str(int(family.trials[i])))
        row += [fmt(v) for v in data.X[i]]
        lines.append(",".join(row))
    atomic_write(path, "\n".join(lines) + "\n")


def read_dataset(path: str, family_kind: str) -> tuple[ModelData, Family]:
    """Parse a dataset CSV, reporting the offending line and field on error."""
    with open(path) as handle:
        raw = [line.rstrip("\n") for line in handle]
    if not raw:
        raise ValueError(f"{path}: empty file")
    header = raw[0].split(",")
    base = ["coord_x", "coord_y", "y"]
    if family_kind == BINOMIAL:
        base.append("trials")
    n_fixed = len(header) - len(base)
    expected = base + [f"x{j + 1}" for j in range(max(n_fixed, 0))]
    if n_fixed < 1 or header != expected:
        raise ValueError(
            f"{path}: header must be {','.join(base)},x1..xP; got {raw[0]!r}"
        )
    rows = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise ValueError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        parsed = []
        for name, value in zip(header, fields):
            try:
                parsed.append(float(value))
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: field {name!r}: not a number: {value!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows)
    coords = table[:, :2]
    y = table[:, 2]
    col = 3
    if family_kind == BINOMIAL:
        family = Family.binomial(table[:, 3])
        col = 4
    else:
        family = Family.poisson()
    X = table[:, col:]
    n = table.shape[0]
    data = check_model_data(y, X, np.eye(n), coords, family)
    return data, family


# ---------------------------------------------------------------------------
# config JSON


def _require_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(path: str) -> dict:
    try:
        with open(path) as handle:
            config = json.load(handle)
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON: {err}") from None
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    _require_keys(config, CONFIG_SECTIONS, "config")
    return config


def apply_override(config: dict, assignment: str) -> None:
    """Apply one ``section.key=value`` override, parsing the value as JSON."""
    if "=" not in assignment:
        raise ValueError(f"override must look like key=value, got {assignment!r}")
    dotted, _, value = assignment.partition("=")
    keys = dotted.split(".")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    target = config
    for key in keys[:-1]:
        target = target.setdefault(key, {})
        if not isinstance(target, dict):
            raise ValueError(f"cannot override inside non-object {key!r}")
    target[keys[-1]] = parsed


def family_kind_from_config(config: dict) -> str:
    section = config.get("family", {})
    _require_keys(section, {"kind"}, "family")
    kind = section.get("kind", POISSON)
    if kind not in (POISSON, BINOMIAL):
        raise ValueError(f"unknown family kind {kind!r}")
    return kind


def fit_config_from_config(config: dict) -> FitConfig:
    cov = config.get("covariance", "auto")
    if cov == "auto":
        cov_params = None
    else:
        _require_keys(cov, {"tau2", "lambda"}, "covariance")
        if "tau2" not in cov or "lambda" not in cov:
            raise ValueError("covariance section needs both tau2 and lambda")
        cov_params = CovarianceParams.from_raw(float(cov["tau2"]), float(cov["lambda"]))
    stopping = dict(config.get("stopping", {}))
    _require_keys(
        stopping, {"t0", "bf_threshold", "min_iterations", "max_iterations"}, "stopping"
    )
    sampling = dict(config.get("sampling", {}))
    _require_keys(sampling, {"p_mc", "m_min", "m_max", "m_fixed"}, "sampling")
    return FitConfig(
        covariance_init=cov_params,
        stopping=StoppingConfig(**stopping),
        sampling=SampleSizeConfig(**sampling),
        seed=int(config.get("seed", 0)),
        record_trace=True,
    )


def scenario_from_config(config: dict) -> ScenarioSpec:
    section = dict(config.get("scenario", {}))
    _require_keys(
        section,
        {"design", "beta", "tau2", "lambda", "replicates", "cells_per_dim", "n", "trials"},
        "scenario",
    )
    for key in ("design", "beta", "tau2", "lambda", "replicates"):
        if key not in section:
            raise ValueError(f"scenario section is missing {key!r}")
    design = section["design"]
    if design not in (POISSON_GRID, BINOMIAL_UNIFORM):
        raise ValueError(f"unknown design {design!r}")
    beta = section["beta"]
    if not isinstance(beta, (list, tuple)) or len(beta) != 2:
        raise ValueError("scenario beta must be a pair [beta0, beta1]")
    return ScenarioSpec(
        design=design,
        beta=(float(beta[0]), float(beta[1])),
        theta=(float(section["tau2"]), float(section["lambda"])),
        replicates=int(section["replicates"]),
        base_seed=int(config.get("seed", 0)),
        cells_per_dim=int(section.get("cells_per_dim", 10)),
        n=int(section.get("n", 100)),
        trials=int(section.get("trials", 1)),
        fit_config=fit_config_from_config(config),
    )


# ---------------------------------------------------------------------------
# result / trace / summary output


def result_to_dict(result: FitResult) -> dict:
    return {
        "beta_hat": list(result.beta_hat),
        "se_beta": list(result.se_beta),
        "wald_ci_beta": [list(row) for row in result.wald_ci_beta],
        "tau2": result.theta_hat.tau2,
        "lambda": result.theta_hat.lam,
        "log_tau2": result.theta_hat.log_tau2,
        "log_lambda": result.theta_hat.log_lambda,
        "theta_information": [list(row) for row in result.theta_information],
        "converged": bool(result.converged),
        "n_iterations": int(result.n_iterations),
        "m_samples": int(result.m_samples),
        "re_posterior_mean": list(result.re_posterior_mean),
        "re_posterior_var_mean": result.re_posterior_var_mean,
    }


def write_result(path: str, result: FitResult) -> None:
    atomic_write(path, dumps_json(result_to_dict(result)) + "\n")


def write_trace(path: str, trace: list[IterationRecord]) -> None:
    n_beta = trace[0].beta.shape[0] if trace and trace[0].beta is not None else 0
    header = ["t", "delta_mean", "delta_se", "p_value", "prior_pi0", "log_bf", "ess", "m_used"]
    header += [f"beta{j}" for j in range(n_beta)]
    header += ["log_tau2", "log_lambda"]
    lines = [",".join(header)]
    for rec in trace:
        row = [
            str(rec.t),
            fmt(rec.delta_mean),
            fmt(rec.delta_se),
            fmt(rec.p_value),
            fmt(rec.prior_pi0),
            fmt(rec.log_bf),
            fmt(rec.ess),
            str(rec.m_used),
        ]
        row += [fmt(v) for v in (rec.beta if rec.beta is not None else [])]
        row += [fmt(rec.log_tau2), fmt(rec.log_lambda)]
        lines.append(",".join(row))
    atomic_write(path, "\n".join(lines) + "\n")


SUMMARY_COMMENT = (
    "# bias CIs: normal theory (mean +- 1.96 se); "
    "MRB CIs: order-statistic (binomial) method for the median"
)

SUMMARY_COLUMNS = [
    "design", "n", "trials", "tau2_true", "lambda_true", "beta0_true", "beta1_true",
    "replicates", "n_failed", "n_trimmed",
    "bias_b0", "bias_b0_lo", "bias_b0_hi",
    "bias_b1", "bias_b1_lo", "bias_b1_hi",
    "coverage_b0", "coverage_b1",
    "mrb_tau2", "mrb_tau2_lo", "mrb_tau2_hi",
    "mrb_lambda", "mrb_lambda_lo", "mrb_lambda_hi",
    "mean_var_u",
]


def write_summary(path: str, spec: ScenarioSpec, row: SummaryRow) -> None:
    values = [
        spec.design, str(row.n_obs), str(spec.trials),
        fmt(spec.theta[0]), fmt(spec.theta[1]), fmt(spec.beta[0]), fmt(spec.beta[1]),
        str(row.replicates), str(row.n_failed), str(row.n_trimmed),
        fmt(row.bias_b0), fmt(row.bias_b0_ci[0]), fmt(row.bias_b0_ci[1]),
        fmt(row.bias_b1), fmt(row.bias_b1_ci[0]), fmt(row.bias_b1_ci[1]),
        fmt(row.coverage_b0), fmt(row.coverage_b1),
        fmt(row.mrb_tau2), fmt(row.mrb_tau2_ci[0]), fmt(row.mrb_tau2_ci[1]),
        fmt(row.mrb_lambda), fmt(row.mrb_lambda_ci[0]), fmt(row.mrb_lambda_ci[1]),
        fmt(row.mean_var_u),
    ]
    text = SUMMARY_COMMENT + "\n" + ",".join(SUMMARY_COLUMNS) + "\n" + ",".join(values) + "\n"
    atomic_write(path, text)


REPLICATE_COLUMNS = [
    "replicate", "ok", "converged", "n_iterations",
    "beta0_hat", "beta1_hat", "se_b0", "se_b1",
    "ci_b0_lo", "ci_b0_hi", "ci_b1_lo", "ci_b1_hi",
    "covers_b0", "covers_b1", "tau2_hat", "lambda_hat", "var_u_mean", "error",
]


def write_replicates(path: str, results: list[ReplicateResult]) -> None:
    lines = [",".join(REPLICATE_COLUMNS)]
    for r in results:
        if r.ok:
            row = [
                str(r.index), "true", fmt(r.converged), str(r.n_iterations),
                fmt(r.beta_hat[0]), fmt(r.beta_hat[1]), fmt(r.se_beta[0]), fmt(r.se_beta[1]),
                fmt(r.ci_lower[0]), fmt(r.ci_upper[0]), fmt(r.ci_lower[1]), fmt(r.ci_upper[1]),
                fmt(bool(r.covers[0])), fmt(bool(r.covers[1])),
                fmt(r.tau2_hat), fmt(r.lambda_hat), fmt(r.var_u_mean), "",
            ]
        else:
            row = [str(r.index), "false", "false", "0"] + ["nan"] * 13
            row.append((r.error or "").replace(",", ";"))
        lines.append(",".join(row))
    atomic_write(path, "\n".join(lines) + "\n")


def write_timings(path: str, results: list[ReplicateResult]) -> None:
    lines = ["replicate,wall_time_seconds"]
    for r in results:
        lines.append(f"{r.index},{fmt(r.wall_time_seconds)}")
    atomic_write(path, "\n".join(lines) + "\n")
