"""Command-line front end: ``mrrobust analyze`` and ``mrrobust simulate``.

Errors go to stderr as ``mrrobust: <CODE>: message``. Exit status is 0 when a
report was written, 1 for input problems and 2 for numerical failures; no
partial report is written on a nonzero exit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .diagnostics import DegenerateVarianceError, overall_f, per_iv_f
from .inference import UnsupportedInputError, invert_test, mr_liml, q_pleiotropy
from .numerics import NumericalDomainError
from .robust_tests import DegenerateStatisticError, TestKind, run_test
from .simulation import (
    DgpConfig,
    ExperimentConfig,
    direct_effect_vector,
    generate_dataset,
    replicate_rng,
    run_experiment,
)
from .summary_data import (
    CorrelationSpec,
    InconsistentInputError,
    SummaryData,
    SummaryDataError,
    adjust_for_correlation,
    validate,
)

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("id", "beta_exposure", "se_exposure", "beta_outcome", "se_outcome")
SAMPLE_SIZE_COLUMNS = ("n_exposure", "n_outcome")  # optional, constant within a file
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class CliError(Exception):
    def __init__(self, code, message, exit_code=EXIT_INPUT):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


# ---------------------------------------------------------------- file formats


def _read_text(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError("FILE", f"cannot read {path}: {exc.strerror}") from exc


def parse_summary_csv(path):
    """Read per-instrument betas and standard errors into diagonal SummaryData."""
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise CliError("EMPTY_FILE", f"{path}: no header row")
    header = [h.strip().lower() for h in rows[0]]
    missing = [c for c in SUMMARY_COLUMNS if c not in header]
    if missing:
        raise CliError("MISSING_COLUMN", f"{path}: missing column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in SUMMARY_COLUMNS}
    body = rows[1:]
    if not body:
        raise CliError("EMPTY_FILE", f"{path}: no data rows")

    ids, values = [], {c: [] for c in SUMMARY_COLUMNS[1:]}
    seen = {}
    for row_no, row in enumerate(body, start=1):
        if len(row) < len(header):
            raise CliError("SHORT_ROW", f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
        ident = row[col["id"]].strip()
        if ident in seen:
            raise CliError("DUPLICATE_ID", f"{path}: id {ident!r} in row {row_no} duplicates row {seen[ident]}")
        seen[ident] = row_no
        ids.append(ident)
        for name in SUMMARY_COLUMNS[1:]:
            cell = row[col[name]].strip()
            try:
                x = float(cell)
            except ValueError:
                raise CliError("NOT_NUMERIC", f"{path}: row {row_no}, column {name}: {cell!r} is not a number") from None
            if not math.isfinite(x):
                raise CliError("NOT_FINITE", f"{path}: row {row_no}, column {name}: value is not finite")
            if name.startswith("se_") and x <= 0:
                raise CliError("NONPOSITIVE_SE", f"{path}: row {row_no}, column {name}: standard error must be > 0, got {cell}")
            values[name].append(x)
    sizes = {name: _sample_size_column(path, body, header, name) for name in SAMPLE_SIZE_COLUMNS}
    return SummaryData.from_standard_errors(
        np.array(values["beta_exposure"]),
        np.array(values["se_exposure"]),
        np.array(values["beta_outcome"]),
        np.array(values["se_outcome"]),
        ids=tuple(ids),
        **sizes,
    )


def _sample_size_column(path, body, header, name):
    if name not in header:
        return None
    j = header.index(name)
    cells = {row[j].strip() for row in body if j < len(row)}
    try:
        values = {int(c) for c in cells}
    except ValueError:
        raise CliError("NOT_NUMERIC", f"{path}: column {name} must hold integers") from None
    if len(values) != 1 or min(values) < 1:
        raise CliError("BAD_SAMPLE_SIZE", f"{path}: column {name} must hold one positive integer for every row")
    return values.pop()


def export_summary_csv(data, path_or_file):
    """Write diagonal SummaryData in the ``parse_summary_csv`` format.

    Floats are written with ``repr`` so that parsing the file back reproduces
    the arrays bit for bit.
    """
    if not data.is_diagonal:
        raise SummaryDataError(["only diagonal covariances can be exported as standard errors"])
    ids = data.ids or tuple(f"iv{i + 1}" for i in range(data.n_instruments))
    se_g = np.sqrt(np.diag(data.sigma_gamma))
    se_G = np.sqrt(np.diag(data.sigma_Gamma))
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        sizes = [(name, getattr(data, name)) for name in SAMPLE_SIZE_COLUMNS if getattr(data, name) is not None]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(SUMMARY_COLUMNS) + [name for name, _ in sizes])
        for i in range(data.n_instruments):
            w.writerow([ids[i], repr(float(data.gamma_hat[i])), repr(float(se_g[i])),
                        repr(float(data.Gamma_hat[i])), repr(float(se_G[i]))] + [int(n) for _, n in sizes])
    finally:
        if own:
            fh.close()


def parse_matrix_csv(path, L):
    """Headerless comma-separated L x L matrix; tiny asymmetries are averaged out."""
    rows = [r for r in csv.reader(io.StringIO(_read_text(path))) if any(c.strip() for c in r)]
    try:
        m = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise CliError("NOT_NUMERIC", f"{path}: {exc}") from None
    if m.ndim != 2 or m.shape != (L, L):
        shape = f"{len(rows)} rows" if m.ndim != 2 else f"{m.shape[0]}x{m.shape[1]}"
        raise CliError("DIMENSION", f"{path}: expected a {L}x{L} matrix, got {shape}")
    asym = float(np.max(np.abs(m - m.T)))
    if asym >= 1e-8:
        raise CliError("ASYMMETRIC", f"{path}: matrix is not symmetric (max asymmetry {asym:.3g})")
    return 0.5 * (m + m.T)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------- report


def _num(x):
    """JSON-safe number: infinities become the strings "-inf"/"inf"."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


def region_to_json(region):
    return {
        "level": region.level,
        "grid_points": region.grid_points,
        "intervals": [[_num(iv.lo), _num(iv.hi)] for iv in region.intervals],
        "empty": region.is_empty,
        "bounded": region.is_bounded,
    }


def result_to_json(res):
    return {
        "kind": res.kind.value,
        "beta0": _num(res.beta_null),
        "statistic": _num(res.statistic),
        "p_value": _num(res.p_value),
        "df_or_conditioning": _num(res.df_or_conditioning),
    }


def _threads(value):
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("MR_ROBUST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError("BAD_ENV", f"MR_ROBUST_THREADS must be an integer, got {env!r}") from None
    return 1


def _load_analysis_input(args):
    data = parse_summary_csv(args.input)
    digests = {args.input: file_sha256(args.input)}
    corr_flags = {
        "--corr-exposure": args.corr_exposure,
        "--corr-outcome": args.corr_outcome,
        "--n-exposure": args.n_exposure,
        "--n-outcome": args.n_outcome,
    }
    if args.corr_exposure or args.corr_outcome:
        absent = [k for k, v in corr_flags.items() if v is None]
        if absent:
            raise CliError("FLAG_DEPENDENCY", f"correlation adjustment needs all of {', '.join(corr_flags)}; missing {', '.join(absent)}")
    data = SummaryData(
        gamma_hat=data.gamma_hat, Gamma_hat=data.Gamma_hat,
        sigma_gamma=data.sigma_gamma, sigma_Gamma=data.sigma_Gamma,
        n_exposure=data.n_exposure if args.n_exposure is None else args.n_exposure,
        n_outcome=data.n_outcome if args.n_outcome is None else args.n_outcome,
        ids=data.ids,
    )
    validate(data)
    if args.corr_exposure:
        L = data.n_instruments
        spec = CorrelationSpec(
            m_outcome=parse_matrix_csv(args.corr_outcome, L),
            m_exposure=parse_matrix_csv(args.corr_exposure, L),
        )
        digests[args.corr_outcome] = file_sha256(args.corr_outcome)
        digests[args.corr_exposure] = file_sha256(args.corr_exposure)
        data = adjust_for_correlation(data, spec)
    return data, digests


def build_report(data, kinds, beta0s, alpha, grid_points, digests, threads=1):
    tests = [result_to_json(run_test(data, kind, b)) for b in beta0s for kind in kinds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            regions = list(pool.map(lambda k: invert_test(data, k, alpha, grid_points), kinds))
    else:
        regions = [invert_test(data, k, alpha, grid_points) for k in kinds]
    est = mr_liml(data)

    f = per_iv_f(data)
    strength = {"per_iv_f": [float(x) for x in f], "overall_f_mean_approx": float(np.mean(f)),
                "overall_f_exact": None, "n_exposure": data.n_exposure}
    if data.n_exposure is not None:
        try:
            rep = overall_f(data)
            strength.update(overall_f_exact=rep.overall_f_exact, variant=rep.variant)
        except (SummaryDataError, InconsistentInputError) as exc:
            strength["note"] = str(exc)
    else:
        strength["note"] = "overall F needs --n-exposure"

    try:
        pleio = result_to_json(q_pleiotropy(data))
    except (UnsupportedInputError, SummaryDataError) as exc:
        pleio = {"unsupported": True, "reason": str(exc)}

    return {
        "tests": tests,
        "regions": {k.value: region_to_json(r) for k, r in zip(kinds, regions)},
        "liml": {"beta_hat": _num(est.beta_hat), "min_stat": _num(est.min_stat), "converged": est.converged},
        "strength": strength,
        "pleiotropy": pleio,
        "provenance": {"version": __version__, "seed": None, "inputs": digests, "alpha": alpha},
    }


def report_to_tsv(report):
    out = io.StringIO()
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(["section", "name", "field", "value"])
    for t in report["tests"]:
        for key in ("statistic", "p_value", "df_or_conditioning"):
            w.writerow(["test", f"{t['kind']}@{t['beta0']!r}", key, t[key]])
    for kind, reg in report["regions"].items():
        if reg["empty"]:
            w.writerow(["region", kind, "empty", "true"])
        for lo, hi in reg["intervals"]:
            w.writerow(["region", kind, "interval", f"{lo},{hi}"])
    for key, val in report["liml"].items():
        w.writerow(["liml", "mrLIML", key, val])
    for key in ("overall_f_exact", "overall_f_mean_approx"):
        w.writerow(["strength", "F", key, report["strength"][key]])
    for key, val in report["pleiotropy"].items():
        w.writerow(["pleiotropy", "Q", key, val])
    w.writerow(["provenance", "version", "value", report["provenance"]["version"]])
    for path, digest in report["provenance"]["inputs"].items():
        w.writerow(["provenance", path, "sha256", digest])
    return out.getvalue()


def analyze_command(args, stdout):
    kinds = [TestKind.parse(k) for k in args.tests.split(",") if k.strip()]
    if any(k is TestKind.Q for k in kinds) or not kinds:
        raise CliError("BAD_FLAG", "--tests takes a comma-separated subset of mrAR,mrK,mrCLR")
    if not (0.0 < args.alpha < 1.0):
        raise CliError("BAD_FLAG", f"--alpha must lie in (0, 1), got {args.alpha}")
    if args.grid_points < 3:
        raise CliError("BAD_FLAG", "--grid-points must be >= 3")
    data, digests = _load_analysis_input(args)
    beta0s = args.beta0 if args.beta0 else [0.0]
    report = build_report(data, kinds, beta0s, args.alpha, args.grid_points, digests, _threads(args.threads))
    if args.format == "json":
        stdout.write(json.dumps(report, indent=2) + "\n")
    else:
        stdout.write(report_to_tsv(report))
    return EXIT_OK


# ---------------------------------------------------------------- simulate


_DGP_KEYS = {"n_outcome", "n_exposure", "L", "beta", "rho", "r", "alpha_direct", "allele_freq_range",
             "corr_bandwidth", "corr_rho", "seed"}
_PROTOCOL_KEYS = {"kind", "beta0_grid", "K_grid", "replicates", "alpha_level", "tests", "corr_working",
                  "corr_working_rho", "corr_working_bandwidth", "correlated_mode", "grid_points", "base_input"}
_REQUIRED = ("kind", "seed", "replicates")


def load_config_document(path):
    import yaml  # JSON is a subset of YAML

    try:
        doc = yaml.safe_load(_read_text(path))
    except yaml.YAMLError as exc:
        raise CliError("BAD_CONFIG", f"{path}: not valid YAML/JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CliError("BAD_CONFIG", f"{path}: expected a mapping of keys to values")
    return doc


def experiment_from_document(doc):
    """Build an ExperimentConfig from a flat key-value document."""
    unknown = sorted(set(doc) - _DGP_KEYS - _PROTOCOL_KEYS)
    if unknown:
        raise CliError("UNKNOWN_KEY", f"unknown config key(s): {', '.join(unknown)}")
    for key in _REQUIRED:
        if key not in doc:
            raise CliError("MISSING_KEY", f"config is missing required key '{key}'")
    kind = doc["kind"]
    grid_key = "K_grid" if kind == "stress" else "beta0_grid"
    if kind in ("size", "power", "invalid", "correlated") and grid_key not in doc:
        raise CliError("MISSING_KEY", f"config is missing required key '{grid_key}'")

    dgp_kw = {k: doc[k] for k in ("n_outcome", "n_exposure", "L", "beta", "r", "corr_bandwidth", "corr_rho", "seed") if k in doc}
    if "rho" in doc:
        dgp_kw["rho_endogeneity"] = doc["rho"]
    if "allele_freq_range" in doc:
        dgp_kw["allele_freq_range"] = tuple(doc["allele_freq_range"])
    L = int(doc.get("L", DgpConfig.L))
    a = doc.get("alpha_direct")
    if isinstance(a, dict):
        if set(a) != {"value", "proportion"}:
            raise CliError("BAD_CONFIG", "alpha_direct mapping needs exactly the keys value and proportion")
        dgp_kw["alpha_direct"] = direct_effect_vector(L, float(a["value"]), float(a["proportion"]))
    elif isinstance(a, (int, float)):
        dgp_kw["alpha_direct"] = tuple([float(a)] * L)
    elif a is not None:
        dgp_kw["alpha_direct"] = tuple(a)

    proto_kw = {k: doc[k] for k in _PROTOCOL_KEYS - {"kind", "base_input", "K_grid", "beta0_grid"} if k in doc}
    for key in ("K_grid", "beta0_grid"):
        if key in doc:
            val = doc[key]
            proto_kw[key] = tuple(val) if isinstance(val, (list, tuple)) else (val,)
    try:
        return ExperimentConfig(kind=kind, dgp=DgpConfig(**dgp_kw), **proto_kw)
    except (TypeError, ValueError) as exc:
        raise CliError("BAD_CONFIG", str(exc)) from None


def simulate_command(args, stdout):
    doc = load_config_document(args.config)
    cfg = experiment_from_document(doc)
    if args.export_dataset:
        export_summary_csv(generate_dataset(cfg.dgp, replicate_rng(cfg.dgp.seed, 0)), args.export_dataset)
    base = None
    if doc.get("base_input"):
        path = doc["base_input"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
        base = parse_summary_csv(path)
    result = run_experiment(cfg, base=base, workers=_threads(args.threads))
    w = csv.writer(stdout, lineterminator="\n")
    w.writerow(["grid_value", "test", "rate", "replicates", "seed"])
    for g, label, rate in result.rows():
        w.writerow([repr(g), label, repr(rate), result.replicates, result.seed])
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="mrrobust", description="Weak-instrument robust two-sample summary-data MR")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="tests, confidence regions and diagnostics for one summary file")
    a.add_argument("--input", required=True, help="CSV with id,beta_exposure,se_exposure,beta_outcome,se_outcome")
    a.add_argument("--beta0", type=float, action="append", help="null value to test (repeatable, default 0)")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--tests", default="mrAR,mrK,mrCLR", help="comma-separated subset of mrAR,mrK,mrCLR")
    a.add_argument("--corr-exposure", help="instrument correlation matrix in the exposure sample (headerless CSV)")
    a.add_argument("--corr-outcome", help="instrument correlation matrix in the outcome sample (headerless CSV)")
    a.add_argument("--n-exposure", type=int, help="exposure sample size")
    a.add_argument("--n-outcome", type=int, help="outcome sample size")
    a.add_argument("--grid-points", type=int, default=4001)
    a.add_argument("--format", choices=("json", "tsv"), default="json")
    a.add_argument("--threads", type=int, help="worker threads (default: MR_ROBUST_THREADS or 1)")

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment from a YAML/JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--threads", type=int, help="worker processes (default: MR_ROBUST_THREADS or 1)")
    s.add_argument("--export-dataset", help="also write the first replicate's summary data to this CSV")
    return p


def main(argv=None, stdout=None, stderr=None):
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=stderr, format="%(name)s: %(message)s")
    command = analyze_command if args.command == "analyze" else simulate_command
    buffer = io.StringIO()  # nothing reaches stdout unless the command succeeds
    try:
        code = command(args, buffer)
    except CliError as exc:
        stderr.write(f"mrrobust: {exc.code}: {exc}\n")
        return exc.exit_code
    except (DegenerateStatisticError, DegenerateVarianceError, NumericalDomainError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        stderr.write(f"mrrobust: NUMERIC: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:  # SummaryDataError, ConfigurationError, bad test names, ...
        stderr.write(f"mrrobust: INPUT: {exc}\n")
        return EXIT_INPUT
    stdout.write(buffer.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
