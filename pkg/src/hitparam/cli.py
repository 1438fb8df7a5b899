"""Batch front end: validated JSON run configs, deterministic runs, CSV and JSON output.

Exit codes: 0 success, 2 invalid config (the path of the first violation is
printed), 3 a standard error exceeded the configured cap.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import estimator_backward as bw
from . import estimator_forward as fw
from .coefficients import BUILTIN_MODELS, ModelError, build_model
from .engine import EstimateSummary
from .oracles import baseline_bridge_euler, baseline_discrete_euler, crossing_probability, oracle_for
from .payoffs import PAYOFF_NAMES, PayoffError, build_payoff, indicator_at, indicator_before
from .series_quadrature import QuadratureError, series_terms

OUT_DIR_ENV = "HITPARAM_OUT_DIR"
DEFAULT_OUT_DIR = "hitparam-out"
CSV_COLUMNS = ("query_point", "estimate", "stderr", "n", "branch_interior", "branch_correction")
EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 2, 3

_NUMBER = {"type": "number"}
_POINTS = {"type": "array", "items": _NUMBER, "minItems": 1}
_PAYOFF = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": list(PAYOFF_NAMES)},
        "coefficients": _POINTS,
        "rate": _NUMBER,
        "x_grid": _POINTS,
        "values": _POINTS,
        "survival_only": {"type": "boolean"},
    },
}


def _query(kind, required=(), **props):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["kind", *required],
        "properties": {"kind": {"const": kind}, **props},
    }


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "query", "T"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tag"],
            "properties": {
                "tag": {"enum": sorted(BUILTIN_MODELS)},
                "params": {"type": "object", "additionalProperties": _NUMBER},
                "barrier": _NUMBER,
                "regularity_class": {"enum": ["H1", "H2"]},
                "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "query": {
            "oneOf": [
                _query("functional", ["payoff"], payoff=_PAYOFF),
                _query("density-K", ["points"], points=_POINTS),
                _query("density-D", ["points"], points=_POINTS),
                _query("derivative", ["target"], target={"enum": list(bw.DERIVATIVE_KINDS)},
                       point=_NUMBER, payoff=_PAYOFF),
                _query("atom", ["horizons"], horizons=_POINTS),
                _query("baseline-compare", ["steps"],
                       steps={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                       payoff=_PAYOFF),
                _query("series-terms", ["density", "points"], density={"enum": ["K", "D"]}, points=_POINTS,
                       tol={"type": "number", "exclusiveMinimum": 0}),
            ]
        },
        "method": {"enum": ["auto", "forward", "backward"]},
        "x0": _NUMBER,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "intensity": {"type": "number", "exclusiveMinimum": 0},
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "stderr_cap": {"type": "number", "exclusiveMinimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _path_of(error):
    return "/" + "/".join(str(p) for p in error.absolute_path)


def validate_config(config):
    """Raise ConfigError naming the first schema violation (in document order)."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = list(validator.iter_errors(config))
    if not errors:
        return
    first = min(errors, key=lambda e: [str(p) for p in e.absolute_path])
    # oneOf failures on the query: report the branch matching the declared kind
    if first.validator == "oneOf" and isinstance(first.instance, dict):
        kind = first.instance.get("kind")
        for branch in first.context:
            if branch.validator != "const" and list(branch.relative_schema_path)[0] == _branch_index(kind):
                raise ConfigError(_path_of(branch), branch.message)
        if kind not in _QUERY_KINDS:
            raise ConfigError(_path_of(first) + "/kind", f"unknown query kind {kind!r}")
    raise ConfigError(_path_of(first), first.message)


_QUERY_KINDS = [b["properties"]["kind"]["const"] for b in CONFIG_SCHEMA["properties"]["query"]["oneOf"]]


def _branch_index(kind):
    return _QUERY_KINDS.index(kind) if kind in _QUERY_KINDS else -1


def content_hash(config):
    """Git blob hash of the canonical JSON form of the config."""
    body = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


# --- run orchestration ------------------------------------------------------------

def _model(spec):
    try:
        model = build_model(spec["tag"], spec.get("params"), spec.get("barrier", 1.0), spec.get("eta"))
    except (ModelError, TypeError) as exc:
        raise ConfigError("/model", str(exc)) from None
    declared = spec.get("regularity_class")
    if declared == "H2" and model.regularity_class == "H1":
        model = replace(model, regularity_class="H2")
    elif declared == "H1" and model.regularity_class == "H2":
        raise ConfigError("/model/regularity_class", f"{spec['tag']} has no declared derivatives; it is H2")
    return model


def _method(config, model):
    method = config.get("method", "auto")
    if method == "auto":
        return "forward" if model.regularity_class == "H1" else "backward"
    if method == "forward" and model.regularity_class != "H1":
        raise ConfigError("/method", "forward estimators need an H1 model")
    return method


def _payoff(spec, T, where):
    try:
        return build_payoff(spec, T)
    except (PayoffError, KeyError) as exc:
        raise ConfigError(where, str(exc)) from None


def _row(s: EstimateSummary, point):
    return (point, s.mean, s.std_error, s.n_samples, s.branch_means.get("interior", 0.0),
            s.branch_means.get("correction", 0.0))


def _listify(result):
    return result if isinstance(result, list) else [result]


def execute(config, seed, workers):
    """Run a validated config; returns {csv name: rows} and the summary payload."""
    model = _model(config["model"])
    T = float(config["T"])
    x0 = float(config.get("x0", 0.0))
    n = int(config.get("n", 100_000))
    lam = config.get("intensity")
    q = config["query"]
    kind = q["kind"]
    common = dict(intensity=lam, n=n, seed=seed, workers=workers)
    tables, extra = {}, {}
    if kind == "series-terms":
        method = _method(config, model)
        try:
            terms = series_terms(method, q["density"], x0, q["points"], T, model, q.get("tol", 1e-6))
        except (QuadratureError, ValueError) as exc:
            raise ConfigError("/query", str(exc)) from None
        tables["curve.csv"] = [(p, t0.value + t1.value, t1.abs_error_estimate, 0, t0.value, t1.value)
                               for p, t0, t1 in terms]
        extra["terms"] = [t.to_row(p) for p, t0, t1 in terms for t in (t0, t1)]
        return tables, [], extra, method
    method = "backward" if kind == "derivative" else _method(config, model)
    summaries = []
    if kind == "functional":
        h = _payoff(q["payoff"], T, "/query/payoff")
        est = fw.estimate_functional if method == "forward" else bw.estimate_functional_bw
        summaries = [(T, est(model, h, x0, T, **common))]
    elif kind in ("density-K", "density-D"):
        pts = np.asarray(q["points"], dtype=float)
        if kind == "density-K" and (np.any(pts <= 0) or np.any(pts > T)):
            raise ConfigError("/query/points", "hitting times must lie in (0, T]")
        if kind == "density-K":
            est = fw.estimate_density_K if method == "forward" else bw.estimate_density_K_bw
        else:
            est = fw.estimate_density_D if method == "forward" else bw.estimate_density_D_bw
        summaries = list(zip(pts.tolist(), _listify(est(model, x0, pts, T, **common))))
    elif kind == "derivative":
        target = q["target"]
        point = q.get("point")
        kwargs = dict(common)
        if target == "densityD":
            kwargs["z"] = _need(point, "/query/point")
        elif target == "densityK":
            kwargs["t"] = _need(point, "/query/point")
        else:
            h = _payoff(_need(q.get("payoff"), "/query/payoff"), T, "/query/payoff")
            kwargs["h"] = lambda z: h(T, z)
        summaries = [(point if point is not None else T, bw.estimate_dx(target, model, x0, T, **kwargs))]
    elif kind == "atom":
        for horizon in q["horizons"]:
            if method == "forward":
                s = fw.estimate_atom(model, x0, float(horizon), **common)
            else:
                s = bw.estimate_functional_bw(model, indicator_at(float(horizon)), x0, float(horizon), **common)
            summaries.append((float(horizon), s))
    elif kind == "baseline-compare":
        h = _payoff(q["payoff"], T, "/query/payoff") if "payoff" in q else indicator_before(T)
        est = fw.estimate_functional if method == "forward" else bw.estimate_functional_bw
        summaries = [(T, est(model, h, x0, T, **common))]
        base = dict(n=n, seed=seed, workers=workers, h=h)
        disc = [(s, baseline_discrete_euler(model, x0, T, s, **base)) for s in q["steps"]]
        brid = [(s, baseline_bridge_euler(model, x0, T, s, **base)) for s in q["steps"]]
        tables["baseline_discrete.csv"] = [_row(s, p) for p, s in disc]
        tables["baseline_bridge.csv"] = [_row(s, p) for p, s in brid]
        oracle = oracle_for(model, x0) if "payoff" not in q else None
        if oracle is not None:
            extra["oracle"] = float(crossing_probability(oracle, T))
        extra["baselines"] = {"discrete": [dict(steps=p, **_plain(s)) for p, s in disc],
                              "bridge": [dict(steps=p, **_plain(s)) for p, s in brid]}
    tables["curve.csv"] = [_row(s, p) for p, s in summaries]
    return tables, [s for _, s in summaries], extra, method


def _need(value, path):
    if value is None:
        raise ConfigError(path, "required for this query")
    return value


def _plain(summary: EstimateSummary):
    """Summary fields that do not depend on timing, so outputs are reproducible."""
    d = summary.to_dict()
    d.pop("wall_seconds", None)
    return d


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def run(config, seed=None, workers=None, out_dir=None):
    """Validate, execute and write artifacts; returns the exit code."""
    validate_config(config)
    seed = int(config.get("seed", 0) if seed is None else seed)
    workers = int(config.get("workers", 1) if workers is None else workers)
    out = Path(out_dir or config.get("output", {}).get("dir") or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    try:
        tables, summaries, extra, method = execute(config, seed, workers)
    except ConfigError:
        raise
    except (ValueError, ModelError) as exc:
        raise ConfigError("/query", str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in tables.items():
        write_csv(out / name, rows)
    payload = {
        "config": config,
        "config_hash": content_hash(config),
        "seed": seed,
        "method": method,
        "summaries": [_plain(s) for s in summaries],
        **extra,
    }
    (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"workers": workers, "wall_seconds": [s.wall_seconds for s in summaries]},
                                                indent=2) + "\n", encoding="utf-8")
    cap = config.get("stderr_cap")
    if cap is not None and any(s.std_error > cap for s in summaries):
        return EXIT_CAP
    return EXIT_OK


# --- plotting of an existing curve ------------------------------------------------

def plot_curve(csv_path, image_path):
    """Draw estimate +- 3 stderr from a curve.csv (needs the optional matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(data["query_point"], data["estimate"], yerr=3.0 * data["stderr"], fmt="o-", ms=3, capsize=2)
    ax.set_xlabel("query point")
    ax.set_ylabel("estimate (3 stderr bars)")
    fig.tight_layout()
    fig.savefig(image_path, dpi=150)
    plt.close(fig)


# --- entry point ----------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="hitparam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run any query"),
                       ("baseline-compare", "run a baseline-compare query"),
                       ("series-terms", "run a series-terms query")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="JSON run config")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--workers", type=int, help="worker threads (overrides the config)")
        s.add_argument("--out", help=f"output directory (default: config, then ${OUT_DIR_ENV}, then ./{DEFAULT_OUT_DIR})")
    s = sub.add_parser("plot", help="plot a curve.csv (optional matplotlib)")
    s.add_argument("csv", help="curve.csv written by a run")
    s.add_argument("--image", default=None, help="output image (default: next to the CSV, .png)")
    return p


def _load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError("/", f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}") from None


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "plot":
        image = args.image or str(Path(args.csv).with_suffix(".png"))
        try:
            plot_curve(args.csv, image)
        except ImportError:
            print("plotting needs matplotlib: pip install matplotlib", file=sys.stderr)
            return 1
        print(image)
        return EXIT_OK
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        config = _load(args.config)
        if args.command != "run" and isinstance(config, dict):
            kind = config.get("query", {}).get("kind") if isinstance(config.get("query"), dict) else None
            if kind != args.command:
                raise ConfigError("/query/kind", f"the {args.command} command needs query kind {args.command!r}")
        code = run(config, args.seed, args.workers, args.out)
    except ConfigError as exc:
        print(f"invalid config at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_CAP:
        print("a standard error exceeded stderr_cap", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
