"""Command-line front end: ``cbmm simulate | fit | eval | repro``.

Exit codes: 0 success, 1 input error, 2 fit collapse, 3 internal error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from cbmm.baselines import bic_value, gmm_em_fit, gmm_predict, gmm_to_cbmm
from cbmm.copulas import CopulaFamily
from cbmm.exceptions import CbmmError, CollapseError
from cbmm.gice import GiceConfig, convergence_index, gice_fit
from cbmm.marginals import MarginalFamily
from cbmm.metrics import accuracy, error_ratio, mean_silhouette
from cbmm.mixture import Cbmm, log_likelihood, map_labels, simulate

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_COLLAPSE, EXIT_INTERNAL = 0, 1, 2, 3


class InputError(Exception):
    """Bad user input: missing file, malformed CSV or JSON, schema violation."""


# ---------------------------------------------------------------------------
# schemas

_NUM_OR_NULL = {"type": ["number", "null"]}

_MARGINAL = {
    "type": "object",
    "properties": {
        "family": {"type": "string"},
        "shape1": _NUM_OR_NULL,
        "shape2": _NUM_OR_NULL,
        "loc": {"type": "number"},
        "scale": {"type": "number"},
    },
    "required": ["family", "loc", "scale"],
    "additionalProperties": False,
}

_COPULA = {
    "type": "object",
    "properties": {"family": {"type": "string"}, "alpha": _NUM_OR_NULL},
    "required": ["family"],
    "additionalProperties": False,
}

CBMM_SCHEMA = {
    "type": "object",
    "properties": {
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "weight": {"type": "number"},
                    "marginals": {"type": "array", "items": _MARGINAL, "minItems": 2, "maxItems": 2},
                    "copula": _COPULA,
                },
                "required": ["weight", "marginals", "copula"],
                "additionalProperties": False,
            },
        }
    },
    "required": ["components"],
    "additionalProperties": False,
}

_FIT_FIELDS = {
    "method": {"enum": ["gice", "gmm"]},
    "K": {"type": "integer", "minimum": 1},
    "T": {"type": "integer", "minimum": 1},
    "iter_max": {"type": "integer", "minimum": 1},
    "init": {"enum": ["kmeans", "gmm"]},
    "marginals": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    "copulas": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    "seed": {"type": ["integer", "null"], "minimum": 0},
    "min_subgroup": {"type": "integer", "minimum": 1},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "model": CBMM_SCHEMA,
        "data": {"type": "string"},
        "truth": {"type": "string"},
        **_FIT_FIELDS,
    },
    "additionalProperties": False,
    "anyOf": [{"required": ["model"]}, {"required": ["data"]}],
}

SUITE_SCHEMA = {
    "type": "object",
    "properties": {
        "master_seed": {"type": "integer", "minimum": 0},
        "cells": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "scenario": {"type": "string"},
                    "data": {"type": "string"},
                    "n": {"type": "integer", "minimum": 1},
                    "repeats": {"type": "integer", "minimum": 1},
                    "config": {
                        "type": "object",
                        "properties": _FIT_FIELDS,
                        "additionalProperties": False,
                    },
                },
                "required": ["repeats", "config"],
                "additionalProperties": False,
                "oneOf": [{"required": ["scenario"]}, {"required": ["data"]}],
            },
        },
    },
    "required": ["cells"],
    "additionalProperties": False,
}


def _validate(doc, schema, what):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{what} failed validation:"]
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"  {where}: {e.message}")
        raise InputError("\n".join(lines))


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from None


def builtin_scenarios():
    files = resources.files("cbmm").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_scenario(name_or_path):
    """Load a scenario JSON from a path or by built-in name (e.g. ``nongaussian``)."""
    if os.path.exists(name_or_path):
        doc = _read_json(name_or_path, "scenario")
    elif name_or_path in builtin_scenarios():
        text = resources.files("cbmm").joinpath("scenarios", name_or_path + ".json").read_text("utf-8")
        doc = json.loads(text)
    else:
        raise InputError(
            f"scenario not found: {name_or_path} (built-ins: {', '.join(builtin_scenarios())})"
        )
    _validate(doc, SCENARIO_SCHEMA, "scenario")
    return doc


def _model_from_doc(doc):
    _validate(doc, CBMM_SCHEMA, "model")
    try:
        return Cbmm.from_dict(doc)
    except (CbmmError, ValueError, TypeError) as exc:
        raise InputError(f"invalid model: {exc}") from None


# ---------------------------------------------------------------------------
# CSV I/O


def read_points(path):
    """Read a header-mandatory CSV; returns (points (N, 2), labels or None).

    The first two columns are the coordinates; a column named ``z`` holds
    labels when present.
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise InputError(f"{path}: line 1: need at least 2 columns, got {len(header)}")
        try:
            float(header[0])
            raise InputError(f"{path}: line 1: a header row is required")
        except ValueError:
            pass
        zcol = header.index("z") if "z" in header else None
        if zcol is not None and zcol < 2:
            raise InputError(f"{path}: line 1: the label column z must come after the 2 coordinates")
        pts, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                p = (float(row[0]), float(row[1]))
            except ValueError:
                raise InputError(f"{path}: line {lineno}: non-numeric coordinate in {row[:2]}") from None
            if not (math.isfinite(p[0]) and math.isfinite(p[1])):
                raise InputError(f"{path}: line {lineno}: non-finite coordinate")
            pts.append(p)
            if zcol is not None:
                try:
                    labels.append(int(float(row[zcol])))
                except ValueError:
                    raise InputError(f"{path}: line {lineno}: non-integer label {row[zcol]!r}") from None
    if len(pts) < 2:
        raise InputError(f"{path}: need at least 2 data rows, got {len(pts)}")
    return np.array(pts), (np.array(labels) if zcol is not None else None)


def read_labels(path):
    """Labels from the ``z`` column of a CSV (or its only column)."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise InputError(f"truth file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if not header:
            raise InputError(f"{path}: empty file")
        if "z" in header:
            col = header.index("z")
        elif len(header) == 1:
            col = 0
        else:
            raise InputError(f"{path}: line 1: no z column")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(int(float(row[col])))
            except (ValueError, IndexError):
                raise InputError(f"{path}: line {lineno}: bad label") from None
    return np.array(out)


def write_points(path, x, z):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x1", "x2", "z"])
        for (a, b), k in zip(x, z):
            writer.writerow([repr(float(a)), repr(float(b)), int(k)])


# ---------------------------------------------------------------------------
# seeds


def derive_seed(master, *keys):
    """Integer seed for the stream identified by ``keys`` under ``master``."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# fitting core shared by fit and repro


def _families(names, parse, what):
    try:
        return tuple(parse(n) for n in names)
    except (ValueError, KeyError) as exc:
        raise InputError(f"unknown {what}: {exc}") from None


def build_config(opts):
    """GiceConfig from a dict of fit fields (CLI flags or JSON config)."""
    kw = {"K": opts.get("K", 2)}
    for src, dst in (("T", "T"), ("iter_max", "iter_max"), ("seed", "seed"),
                     ("min_subgroup", "min_subgroup"), ("init", "init")):
        if opts.get(src) is not None:
            kw[dst] = opts[src]
    if opts.get("marginals"):
        kw["marginal_candidates"] = _families(opts["marginals"], MarginalFamily.parse, "marginal family")
    if opts.get("copulas"):
        kw["copula_candidates"] = _families(opts["copulas"], CopulaFamily.parse, "copula family")
    try:
        return GiceConfig(**kw)
    except ValueError as exc:
        raise InputError(f"invalid configuration: {exc}") from None


def run_fit(x, opts, truth=None):
    """Fit with ``opts['method']``; returns (Cbmm, trace rows writer, info dict)."""
    method = opts.get("method", "gice")
    t0 = time.perf_counter()
    if method == "gmm":
        gmm, ll_trace = gmm_em_fit(x, opts.get("K", 2), seed=opts.get("seed"),
                                   iter_max=opts.get("iter_max") or 100)
        model = gmm_to_cbmm(gmm)
        labels = gmm_predict(gmm, x)

        def write_trace(path):
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "log_likelihood"])
                for i, ll in enumerate(ll_trace):
                    w.writerow([i, repr(float(ll))])
    else:
        config = build_config(opts)
        model, trace = gice_fit(x, config, true_labels=truth)
        labels = map_labels(model, x)

        def write_trace(path):
            trace.to_csv(path)
    seconds = time.perf_counter() - t0
    info = {"seconds": seconds, "kolmogorov": convergence_index(model, x)}
    if truth is not None:
        info["error_ratio"] = error_ratio(labels, truth)
        info["accuracy"] = 1.0 - info["error_ratio"]
    return model, write_trace, info


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    if args.n is not None and args.n < 1:
        raise InputError(f"--n must be >= 1, got {args.n}")
    doc = load_scenario(args.scenario)
    if "model" not in doc:
        raise InputError("scenario has no generating model")
    model = _model_from_doc(doc["model"])
    n = args.n if args.n is not None else doc.get("n")
    if n is None:
        raise InputError("sample size missing: pass --n or set n in the scenario")
    x, z = simulate(model, n, np.random.default_rng(args.seed))
    write_points(args.out, x, z + 1)
    print(f"simulated {n} points from:")
    print(model.describe())
    return EXIT_OK


def _fit_options(args):
    opts = {}
    if args.config:
        doc = load_scenario(args.config)
        opts.update({k: v for k, v in doc.items() if k in _FIT_FIELDS or k in ("data", "truth")})
    for key in ("method", "K", "T", "iter_max", "init", "marginals", "copulas", "seed"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    if args.data:
        opts["data"] = args.data
    if "data" not in opts:
        raise InputError("no data: pass --data or a config with a data path")
    return opts


def cmd_fit(args):
    opts = _fit_options(args)
    x, z = read_points(opts["data"])
    truth = None
    if args.use_truth:
        if opts.get("truth"):
            truth = read_labels(opts["truth"])
        elif z is not None:
            truth = z
        else:
            raise InputError("--use-truth needs a z column in the data")
        if truth.size != x.shape[0]:
            raise InputError("truth labels and data differ in length")
    try:
        model, write_trace, info = run_fit(x, opts, truth)
    except CollapseError as exc:
        if exc.trace is not None and args.out_trace:
            exc.trace.to_csv(args.out_trace)
            print(f"partial trace written to {args.out_trace}", file=sys.stderr)
        raise
    with open(args.out_model, "w", encoding="utf-8") as fh:
        fh.write(model.to_json(indent=2))
    if args.out_trace:
        write_trace(args.out_trace)
    print(model.describe())
    print(f"kolmogorov distance: {info['kolmogorov']:.6f}")
    if "error_ratio" in info:
        print(f"error ratio: {info['error_ratio']:.6f}")
    print(f"wall-clock: {info['seconds']:.2f} s")
    return EXIT_OK


def evaluate(model, x, truth=None):
    res = {"n": int(x.shape[0]), "kolmogorov": convergence_index(model, x)}
    ll = log_likelihood(model, x)
    res["log_likelihood"] = ll
    res["bic"] = bic_value(ll, model.n_params, x.shape[0])
    if truth is not None:
        labels = map_labels(model, x)
        res["error_ratio"] = error_ratio(labels, truth)
        res["accuracy"] = accuracy(labels, truth)
        try:
            res["mean_silhouette"] = mean_silhouette(x, labels)
        except CbmmError:
            res["mean_silhouette"] = None
    return res


def cmd_eval(args):
    model = _model_from_doc(_read_json(args.model, "model"))
    x, z = read_points(args.data)
    truth = None
    if args.truth is not None:
        truth = z if args.truth == "-" else read_labels(args.truth)
        if truth is None:
            raise InputError("--truth given but the data has no z column")
        if truth.size != x.shape[0]:
            raise InputError("truth labels and data differ in length")
    res = evaluate(model, x, truth)
    if args.json:
        print(json.dumps(res, indent=2))
    else:
        for key, val in res.items():
            print(f"{key}: {val}")
    return EXIT_OK


REPRO_COLUMNS = (
    "cell", "name", "method", "repeats", "succeeded",
    "accuracy_mean", "accuracy_min", "accuracy_max",
    "kolmogorov_mean", "kolmogorov_min", "kolmogorov_max",
    "seconds_mean", "errors",
)


def run_cell(index, cell, master_seed):
    """All repeats of one suite cell; returns a result row (dict)."""
    opts = dict(cell["config"])
    fixed = None
    if "data" in cell:
        fixed = read_points(cell["data"])
        if fixed[1] is None:
            raise InputError(f"{cell['data']}: a z column is required for accuracy")
    else:
        doc = load_scenario(cell["scenario"])
        model = _model_from_doc(doc["model"])
        n = cell.get("n", doc.get("n"))
        if n is None:
            raise InputError(f"cell {index}: sample size missing")
        opts.setdefault("K", model.K)
    accs, kss, secs, errors = [], [], [], []
    for r in range(cell["repeats"]):
        opts["seed"] = derive_seed(master_seed, index, r, 1)
        try:
            if fixed is None:
                x, z = simulate(model, n, np.random.default_rng(derive_seed(master_seed, index, r, 0)))
            else:
                x, z = fixed
            _, _, info = run_fit(x, opts, z)
        except (CbmmError, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"repeat {r}: {type(exc).__name__}: {exc}")
            continue
        accs.append(info["accuracy"])
        kss.append(info["kolmogorov"])
        secs.append(info["seconds"])
    row = {
        "cell": index, "name": cell.get("name", cell.get("scenario", cell.get("data"))),
        "method": opts.get("method", "gice"), "repeats": cell["repeats"], "succeeded": len(accs),
        "errors": " | ".join(errors),
    }
    for key, vals in (("accuracy", accs), ("kolmogorov", kss)):
        if vals:
            lo, hi = float(np.min(vals)), float(np.max(vals))
            # summation rounding must not put the mean outside [min, max]
            row[f"{key}_mean"] = min(max(math.fsum(vals) / len(vals), lo), hi)
            row[f"{key}_min"], row[f"{key}_max"] = lo, hi
        else:
            row[f"{key}_mean"] = row[f"{key}_min"] = row[f"{key}_max"] = ""
    row["seconds_mean"] = float(np.mean(secs)) if secs else ""
    return row


def cmd_repro(args):
    suite = _read_json(args.suite, "suite")
    _validate(suite, SUITE_SCHEMA, "suite")
    master = suite.get("master_seed", 0)
    rows = []
    for i, cell in enumerate(suite["cells"]):
        try:
            row = run_cell(i, cell, master)
        except InputError as exc:
            row = {"cell": i, "name": cell.get("name", ""), "method": cell["config"].get("method", "gice"),
                   "repeats": cell["repeats"], "succeeded": 0, "errors": str(exc)}
        rows.append(row)
        print(f"cell {i} ({row['name']}): {row['succeeded']}/{row['repeats']} repeats, "
              f"accuracy mean {row.get('accuracy_mean', '')}, "
              f"kolmogorov mean {row.get('kolmogorov_mean', '')}, "
              f"{row.get('seconds_mean', '')} s per fit", flush=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPRO_COLUMNS, restval="", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="cbmm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a labelled sample from a scenario model")
    s.add_argument("--scenario", required=True, help="scenario JSON path or built-in name")
    s.add_argument("--n", type=int, help="sample size (default: the scenario's n)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a CBMM with GICE or a GMM with EM")
    f.add_argument("--data")
    f.add_argument("--config", help="JSON fit request; flags override its fields")
    f.add_argument("--method", choices=["gice", "gmm"])
    f.add_argument("--K", type=int)
    f.add_argument("--T", type=int)
    f.add_argument("--iter-max", dest="iter_max", type=int)
    f.add_argument("--init", choices=["kmeans", "gmm"])
    f.add_argument("--marginals", type=_csv_list, help="comma-separated marginal families")
    f.add_argument("--copulas", type=_csv_list, help="comma-separated copula families")
    f.add_argument("--seed", type=int)
    f.add_argument("--out-model", dest="out_model", required=True)
    f.add_argument("--out-trace", dest="out_trace")
    f.add_argument("--use-truth", dest="use_truth", action="store_true",
                   help="trace the error ratio against the z column")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a model on data")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--truth", nargs="?", const="-",
                   help="labels CSV; without a value the data's z column is used")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("repro", help="run a suite of repeated fits and aggregate")
    r.add_argument("--suite", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CollapseError as exc:
        print(f"fit collapsed: {exc}", file=sys.stderr)
        return EXIT_COLLAPSE
    except (CbmmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
