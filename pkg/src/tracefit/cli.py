"""Command-line interface: ``tracefit <command> ...``.

Commands: ``fit``, ``compare``, ``sensitivity``, ``simulate``, ``pmf``,
``gof``, ``cdf`` and ``rerun``. Every output file is written atomically and
accompanied by ``<file>.manifest.json`` holding the resolved options, the
input digest, the tool version and the argument vector; ``tracefit rerun
<manifest>`` replays it.

Exit codes
----------
0  success
1  numerical or model failure
2  usage or input error
3  fit did not converge, or its maximum lies on a parameter boundary
   (E[K] = R0, or p = 1)
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import datetime as _dt
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path


from . import datasets
from .degree import FAMILIES, parse_degree_spec
from .inference import (
    DetecteeHistogram,
    FitOptions,
    FitStatus,
    IngestError,
    fit_mle,
    resolve_model,
)
from .kernels import EpidemicParams
from .mixture import detectee_pmf
from .selection import BinningError, LowExpectedCountWarning, chi_square_gof, cumulative_compare
from .simulator import SimConfig, records_to_csv, records_to_histogram, simulate

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3
BUILTIN_DATA = {"karnataka", "karnataka.csv"}


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed as a distribution
        return "0+unknown"


# --------------------------------------------------------------------- I/O

def ingest(path: str) -> DetecteeHistogram:
    """Read a ``detectees,frequency`` CSV; ``karnataka`` names the bundled data set."""
    if path in BUILTIN_DATA and not Path(path).exists():
        return datasets.karnataka()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return DetecteeHistogram.from_csv_text(text, path)


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


def make_manifest(args, digest: str | None = None, extra: dict | None = None) -> dict:
    opts = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}
    man = {
        "command": args.command,
        "options": opts,
        "argv": list(args.argv),
        "input_digest": digest,
        "version": _version(),
        "seed": getattr(args, "seed", None),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        man.update(extra)
    return man


def emit(path: str | None, text: str, manifest: dict) -> None:
    """Write ``text`` and its manifest, or print ``text`` when no path is given."""
    if path is None:
        sys.stdout.write(text)
        return
    write_atomic(path, text)
    write_atomic(f"{path}.manifest.json", json.dumps(dict(manifest, output=str(path)),
                                                   indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return format(x, ".10g")
    return str(x)


def _csv(header, rows) -> str:
    out = [",".join(header)]
    for r in rows:
        cells = []
        for v in r:
            s = _fmt(v)
            if any(c in s for c in ',"\n'):
                s = '"' + s.replace('"', '""') + '"'
            cells.append(s)
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------- parsing

def _kmax(text: str):
    if text.lower() in ("none", "inf", "0"):
        return None
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("kmax must be a positive integer or 'none'")
    return v


def _pair(text: str) -> tuple:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return a, b


def _grid(text: str) -> list:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"grid lower end {lo} exceeds upper end {hi}")
    if step <= 0:
        raise argparse.ArgumentTypeError("grid step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + j * step, 12) for j in range(n)]


def _families(text: str) -> list:
    if text == "all":
        return list(FAMILIES)
    fams = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in fams if f not in FAMILIES]
    if bad or not fams:
        raise argparse.ArgumentTypeError(f"unknown families {bad}; choose from {FAMILIES} or 'all'")
    return fams


def _fit_options(args) -> FitOptions:
    return FitOptions(k_cap=args.kmax, powerlaw_kmax=args.kmax or 200, restarts=args.restarts,
                      seed=args.seed, final_abs_tol=args.tol)


def _add_fit_flags(p, family=True):
    p.add_argument("--data", required=True, help="detectee CSV, or 'karnataka' for the bundled data")
    if family:
        p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--mode", default="forward", choices=["forward", "full"])
    p.add_argument("--kmax", type=_kmax, default=200,
                   help="cut degree sums at k <= kmax (also the power-law support); 'none' disables")
    p.add_argument("--tol", type=float, default=1e-11, help="quadrature tolerance at the optimum")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="seed of the optimizer restarts")


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    data = ingest(args.data)
    prof = {"auto": None, "yes": True, "no": False}[args.profile]
    fit = fit_mle(data, args.family, args.r0, args.mode, _fit_options(args), profile=prof)
    report = fit.to_json()
    emit(args.out, report, make_manifest(args, data.digest()))
    if args.out is not None:
        est = ", ".join(f"{k}={v:.4g}" for k, v in fit.estimates.items() if v is not None)
        print(f"{fit.family}: {fit.status.value}; {est}; ll={fit.ll_max:.3f}; AIC={fit.aic:.2f}")
    if fit.message:
        print(f"note: {fit.message}", file=sys.stderr)
    return EXIT_OK if fit.status is FitStatus.CONVERGED else EXIT_NOT_CONVERGED


def _compare_row(pairs, family, r0, mode, options) -> dict:
    data = DetecteeHistogram.from_pairs(pairs)
    row = {"family": family, "status": "failed", "note": ""}
    try:
        fit = fit_mle(data, family, r0, mode, options)
    except (ValueError, ArithmeticError) as exc:
        row["note"] = str(exc)
        return row
    ci = fit.wald_ci or {}
    row.update(status=fit.status.value, p=fit.p, ll=fit.ll_max, aic=fit.aic,
               mean_k=fit.estimates.get("mean_k"), note=fit.message)
    row["p_lo"], row["p_hi"] = ci.get("p", (None, None))
    if fit.profile_ci_mean_k is not None:
        row["mean_k_lo"], row["mean_k_hi"] = fit.profile_ci_mean_k
    else:
        row["mean_k_lo"], row["mean_k_hi"] = ci.get("mean_k", (None, None))
    extra = []
    for name in ("gamma", "r", "k"):
        if name in fit.estimates and fit.estimates[name] is not None:
            lo_hi = ci.get(name)
            s = f"{name}={fit.estimates[name]:.4g}"
            if lo_hi is not None:
                s += f" ({lo_hi[0]:.3g}; {lo_hi[1]:.3g})"
            extra.append(s)
    row["extra"] = " ".join(extra)
    try:
        pmf = detectee_pmf(fit.params(), fit.model(), mode, max(data.max_count, 8), r0=r0,
                           k_cap=options.k_cap)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LowExpectedCountWarning)
            row["chi2_p"] = chi_square_gof(data, pmf, fit.n_params).p_value
        if caught:
            row["note"] = "; ".join(s for s in (row["note"], f"chi2: {caught[0].message}") if s)
    except (BinningError, ValueError, ArithmeticError) as exc:
        row["note"] = "; ".join(s for s in (row["note"], f"chi2: {exc}") if s)
    return row


COMPARE_COLUMNS = ("family", "status", "p", "p_lo", "p_hi", "mean_k", "mean_k_lo", "mean_k_hi",
                   "extra", "ll", "aic", "chi2_p", "note")


def _workers() -> int:
    env = os.environ.get("TRACEFIT_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def compare_rows(data: DetecteeHistogram, families, r0, mode, options) -> list:
    """Fit every family; rows sorted by AIC with failed fits last."""
    pairs = data.items()
    n_workers = min(_workers(), len(families))
    if n_workers > 1:
        with cf.ProcessPoolExecutor(n_workers) as ex:
            rows = list(ex.map(_compare_row, [pairs] * len(families), families,
                               [r0] * len(families), [mode] * len(families),
                               [options] * len(families)))
    else:
        rows = [_compare_row(pairs, f, r0, mode, options) for f in families]
    return sorted(rows, key=lambda r: (r.get("aic") is None, r.get("aic") or 0.0, r["family"]))


def _aligned(rows) -> str:
    cols = ("family", "status", "p", "mean_k", "extra", "aic", "chi2_p")
    table = [cols] + [tuple(_fmt(r.get(c)) if not isinstance(r.get(c), float)
                            else format(r[c], ".4g") for c in cols) for r in rows]
    widths = [max(len(t[j]) for t in table) for j in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(t, widths)).rstrip() for t in table]
    notes = [f"  {r['family']}: {r['note']}" for r in rows if r.get("note")]
    return "\n".join(lines + (["notes:"] + notes if notes else [])) + "\n"


def cmd_compare(args) -> int:
    data = ingest(args.data)
    rows = compare_rows(data, args.families, args.r0, args.mode, _fit_options(args))
    text = _csv(COMPARE_COLUMNS, [[r.get(c) for c in COMPARE_COLUMNS] for r in rows])
    if args.out is not None:
        emit(args.out, text, make_manifest(args, data.digest()))
    sys.stdout.write(_aligned(rows))
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    data = ingest(args.data)
    options = _fit_options(args)
    rows = []
    for r0 in args.r0_grid:
        try:
            fit = fit_mle(data, args.family, r0, args.mode, options, profile=False)
            shape = {k: v for k, v in fit.estimates.items() if k in ("gamma", "r", "k")}
            rows.append([r0, fit.status.value, fit.p, fit.estimates.get("mean_k"),
                         " ".join(f"{k}={v:.6g}" for k, v in shape.items()), fit.ll_max,
                         fit.aic, fit.message])
        except (ValueError, ArithmeticError) as exc:
            rows.append([r0, "failed", None, None, "", None, None, str(exc)])
    text = _csv(("r0", "status", "p", "mean_k", "shape", "ll", "aic", "note"), rows)
    emit(args.out, text, make_manifest(args, data.digest()))
    return EXIT_OK


def _graph(text: str):
    if text == "tree":
        return "tree", None
    if text.startswith("config:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            n = -1
        if n < 2:
            raise argparse.ArgumentTypeError("config:N needs an integer N >= 2")
        return "configuration", n
    raise argparse.ArgumentTypeError(f"graph must be 'tree' or 'config:N', got {text!r}")


def _opt_int(text: str):
    return None if text.lower() in ("none", "inf") else int(text)


def cmd_simulate(args) -> int:
    params = EpidemicParams(beta=args.beta, alpha=args.alpha, sigma=args.sigma, p=args.p)
    graph, n_nodes = args.graph
    window = args.window or ((0.0, args.max_time) if args.max_time else (0.0, math.inf))
    cfg = SimConfig(params=params, degree=parse_degree_spec(args.degree), mode=args.mode,
                    graph=graph, n_nodes=n_nodes or 100_000, max_infected=args.max_infected,
                    max_index_cases=args.max_index_cases, max_time=args.max_time,
                    window=window, seed=args.seed)
    res = simulate(cfg)
    man = make_manifest(args, None, {"summary": res.summary})
    rec_path = f"{args.out}.records.csv"
    hist_path = f"{args.out}.histogram.csv"
    emit(rec_path, records_to_csv(res.records), man)
    hist = (records_to_histogram(res.records, cfg.mode).to_csv() if res.records
            else "detectees,frequency\n")
    emit(hist_path, hist, man)
    print(json.dumps(res.summary, sort_keys=True))
    return EXIT_OK


def _from_report(path: str):
    try:
        rep = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read fit report {path}: {exc}") from None
    params, model = resolve_model(rep["family"], rep["r0"], rep["estimates"],
                                  rep.get("powerlaw_kmax", 200))
    return rep, params, model


def cmd_pmf(args) -> int:
    if args.report:
        rep, params, model = _from_report(args.report)
        mode, r0, k_cap = rep["mode"], rep["r0"], rep.get("k_cap")
    else:
        if args.degree is None:
            raise UsageError("pmf needs --report or --degree with the rate flags")
        params = EpidemicParams(beta=args.beta, alpha=args.alpha, sigma=args.sigma, p=args.p)
        model = parse_degree_spec(args.degree)
        mode, r0, k_cap = args.mode, args.r0, args.kmax
    pmf = detectee_pmf(params, model, mode, args.imax, r0=r0, k_cap=k_cap)
    cdf = pmf.cdf()
    text = _csv(("i", "probability", "cdf"),
                [[i, float(pmf.probs[i]), float(cdf[i])] for i in range(pmf.i_max + 1)])
    emit(args.out, text, make_manifest(args, None, {"tail_mass": pmf.tail}))
    return EXIT_OK


def _data_and_pmf(args):
    data = ingest(args.data)
    rep, params, model = _from_report(args.report)
    pmf = detectee_pmf(params, model, rep["mode"], max(data.max_count, 8), r0=rep["r0"],
                       k_cap=rep.get("k_cap"))
    return data, rep, pmf


def cmd_gof(args) -> int:
    data, rep, pmf = _data_and_pmf(args)
    g = chi_square_gof(data, pmf, rep["n_params"])
    emit(args.out, g.to_csv(), make_manifest(args, data.digest()))
    if args.out is not None:
        print(f"chi2={g.statistic:.4f} dof={g.dof} p_value={g.p_value:.4g}")
    return EXIT_OK


def cmd_cdf(args) -> int:
    data, _, pmf = _data_and_pmf(args)
    tab = cumulative_compare(data, pmf)
    text = _csv(("i", "empirical", "theoretical"),
                [[int(i), float(e), float(t)] for i, e, t in tab])
    emit(args.out, text, make_manifest(args, data.digest()))
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        man = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    return main(man["argv"])


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracefit",
                                 description="Estimate contact-tracing probability and degree "
                                             "distribution from detectee counts.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum-likelihood fit of one degree family")
    _add_fit_flags(p)
    p.add_argument("--r0", type=float, required=True)
    p.add_argument("--profile", choices=["auto", "yes", "no"], default="auto",
                   help="profile-likelihood interval for E[K]")
    p.add_argument("--out", help="JSON report path (stdout if omitted)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit several families and rank them by AIC")
    _add_fit_flags(p, family=False)
    p.add_argument("--r0", type=float, required=True)
    p.add_argument("--families", type=_families, default=list(FAMILIES),
                   help="'all' or a comma-separated list")
    p.add_argument("--out", help="CSV table path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sensitivity", help="refit over a grid of R0 values")
    _add_fit_flags(p)
    p.add_argument("--r0-grid", type=_grid, required=True, help="lo:hi:step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("simulate", help="stochastic SIR simulation with contact tracing")
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--degree", default="poisson:4", help="e.g. poisson:4, fixed:4, negbinom:0.2:4")
    p.add_argument("--graph", type=_graph, default=("tree", None), help="tree or config:N")
    p.add_argument("--mode", default="forward", choices=["forward", "full"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-infected", type=_opt_int, default=100_000)
    p.add_argument("--max-index-cases", type=_opt_int, default=None)
    p.add_argument("--max-time", type=float, default=None)
    p.add_argument("--window", type=_pair, default=None, help="t0:t1")
    p.add_argument("--out", default="sim", help="output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pmf", help="theoretical distribution of detectees per index case")
    p.add_argument("--report", help="fit report JSON to take the model from")
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--degree", help="degree spec, e.g. poisson:4 or randommix")
    p.add_argument("--r0", type=float, help="needed for the random-mixing limit")
    p.add_argument("--mode", default="forward", choices=["forward", "full"])
    p.add_argument("--kmax", type=_kmax, default=None)
    p.add_argument("--imax", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pmf)

    for name, func, hlp in (("gof", cmd_gof, "binned chi-square goodness of fit"),
                            ("cdf", cmd_cdf, "empirical vs theoretical cumulative distribution")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--data", required=True)
        p.add_argument("--report", required=True, help="fit report JSON")
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except (UsageError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
