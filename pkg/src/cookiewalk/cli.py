"""Command-line entry point: ``cookiewalk <subcommand> [options]``.

Every run can write a manifest (``<out>.manifest.json``) holding the model,
the seed, the subcommand and all of its options.  ``cookiewalk run MANIFEST``
replays it and produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .env import CookieConfig, EnvironmentVariant
from .errors import CookieWalkError, DomainError

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
DEFAULT_MODEL = {"p": ["3/4", "3/4", "3/4"]}


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


class ConfigError(CookieWalkError):
    pass


# ---------------------------------------------------------------------------
# output


class Table:
    def __init__(self, header, rows):
        self.header = list(header)
        self.rows = rows

    def to_json(self):
        return [dict(zip(self.header, r)) for r in self.rows]


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def render(payload, fmt: str) -> str:
    if isinstance(payload, list) and fmt == "csv" and payload:
        payload = Table(payload[0].keys(), [list(r.values()) for r in payload])
    if isinstance(payload, list):
        return json.dumps(_plain(payload), indent=2) + "\n"
    if isinstance(payload, Table):
        if fmt == "json":
            return json.dumps(_plain(payload.to_json()), indent=2) + "\n"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(payload.header)
        w.writerows(_plain(payload.rows))
        return buf.getvalue()
    # dict payloads are always JSON; a flat CSV view is offered for scalars
    if fmt == "csv" and all(np.isscalar(v) for v in payload.values()):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows((k, _plain(v)) for k, v in payload.items())
        return buf.getvalue()
    return json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _env(ns, cfg):
    if getattr(ns, "positive_half_line", False):
        return EnvironmentVariant.positive_half_line(cfg)
    return cfg


def cmd_simulate_walk(ns, cfg):
    from .rng import replica_rng
    from .walk import hitting_times, simulate_walk, simulate_walk_summary

    env = _env(ns, cfg)
    if ns.trace:
        tr = simulate_walk(env, ns.steps, replica_rng(ns.seed, "walk", 0))
        return Table(["step", "position"], list(enumerate(tr.positions.tolist()))), EXIT_OK
    rows = []
    if ns.summary:
        for r in range(ns.replicas):
            s = simulate_walk_summary(env, ns.steps, replica_rng(ns.seed, "walk", r))
            rows += [(r, n, sup, x) for n, sup, x in zip(s.checkpoints, s.sup_at, s.pos_at)]
        return Table(["replica", "checkpoint_n", "sup_at_n", "position_at_n"], rows), EXIT_OK
    for r in range(ns.replicas):
        h = hitting_times(env, ns.max_level, replica_rng(ns.seed, "walk", r), ns.horizon,
                          step_cap=ns.step_cap)
        rows += [(r, n, T, sup, inf) for n, T, sup, inf in zip(h.levels, h.T, h.sup_at, h.inf_from)]
    return Table(["replica", "checkpoint_n", "T_n", "sup_at_n", "inf_from_n"], rows), EXIT_OK


def cmd_simulate_excursions(ns, cfg):
    from .branching import simulate_excursions

    b = simulate_excursions(cfg, ns.replicas, ns.seed, start_state=ns.start)
    rows = list(zip(range(len(b.sigma)), b.sigma, b.progeny, b.peak, b.truncated.astype(int)))
    return Table(["replica", "sigma", "progeny", "peak", "truncated_flag"], rows), EXIT_OK


def cmd_kernel_analyze(ns, cfg):
    from .kernel import build_kernel, conditional_moments, expected_sigma, stationary_law, survival_probabilities
    from .stats import fit_tail_curve

    k = build_kernel(cfg, ns.N)
    mc = conditional_moments(cfg)
    xs = range(ns.moments_up_to + 1)
    out = {"N": ns.N, "alpha": cfg.alpha, "max_row_mean_residual": float(k.row_mean_residuals().max()),
           "lyapunov_constant": k.lyapunov_constant,
           "f1": [mc.f1(x) for x in xs], "f2": [mc.f2(x) for x in xs]}
    if cfg.alpha > 0:
        es, err = expected_sigma(k, ns.x)
        out["E_sigma"] = {"x": ns.x, "value": es, "error": err}
        curve = survival_probabilities(k, ns.x, ns.n_max)
        out["survival_curve"] = [list(r) for r in zip(curve.n.tolist(), curve.P.tolist(), curve.err.tolist())]
        fit = fit_tail_curve(curve.n, curve.P, (ns.n_max / 10, ns.n_max))
        out["sigma_tail_fit"] = {**fit.as_dict(), "target": cfg.alpha + 1,
                                 "relative_error_at_n_max": float(curve.err[-1] / curve.P[-1])}
        pi = stationary_law(k)
        x = np.arange(len(pi.probs))
        hi = min(2000, ns.N // 2)
        fit = fit_tail_curve(x, pi.probs, (hi / 40, hi), kind="pmf", log_correct=abs(cfg.alpha - 1) < 1e-12)
        out["stationary_tail_fit"] = {**fit.as_dict(), "target": min(cfg.alpha, 1.0), "note": pi.note}
    return out, EXIT_OK


def cmd_genfun_eval(ns, cfg):
    from .genfun import GenFnContext, J_series
    from .kernel import build_kernel

    ctx = GenFnContext(cfg)
    if ns.what == "pgfA":
        js = range(cfg.M) if ns.j is None else [ns.j]
        return [{"j": j, "s": s, "value": ctx.pgf_A(j, s)} for j in js for s in ns.s], EXIT_OK
    if ns.what == "delta":
        return [{"s": s, "value": ctx.delta(s)} for s in ns.s], EXIT_OK
    if ns.what == "gamma":
        g = ctx.gamma_seq(ns.n_max)
        return [{"n": n, "log_gamma": lg} for n, lg in enumerate(g.log_gamma.tolist())], EXIT_OK
    k = build_kernel(cfg, ns.N)
    out = []
    for s in ns.s:
        d = J_series(ns.x, s, k, ctx, tol=ns.tol)
        out.append({"x": ns.x, "s": s, "J_direct": d.direct, "J_direct_err": d.direct_err,
                    "J_hat": d.hat, "J_tilde": d.tilde, "J_decomposed": d.decomposed,
                    "discrepancy": d.discrepancy})
    return out, EXIT_OK


def cmd_bessel_eval(ns, cfg):
    from . import bessel

    if ns.self_test:
        res = bessel.self_test()
        return res, EXIT_OK if res["ok"] else EXIT_FAILED
    if ns.eta is None or ns.x is None:
        raise ConfigError("bessel-eval needs --eta and --x (or --self-test)")
    e = bessel.bessel_k(ns.eta, ns.x, ns.method)
    return {"eta": e.eta, "x": e.x, "K": e.value, "method": e.method,
            "F": e.value * e.x**e.eta}, EXIT_OK


def cmd_verify(ns, cfg):
    from . import verify
    from .branching import simulate_excursions

    if ns.check == "stopping":
        r = verify.optional_stopping_check(cfg, ns.lam, ns.replicas, ns.seed)
        return {"lambda": r.lam, "lhs": r.lhs, "rhs": r.rhs, "pooled_se": r.pooled_se,
                "paired_se": r.paired_se, "excursions": r.count, "truncated": r.truncated,
                "passed": r.passed()}, EXIT_OK if r.passed() else EXIT_FAILED
    if ns.check == "martingale":
        f = verify.martingale_flatness(cfg, ns.lam, ns.start, ns.n_max, ns.replicas, ns.seed)
        ok = f.max_deviation_se <= 4 and f.max_increment <= f.increment_cap
        return {"lambda": f.lam, "start": f.start, "Y0": f.Y0, "max_deviation_se": f.max_deviation_se,
                "max_increment": f.max_increment, "increment_cap": f.increment_cap,
                "deviation_se": f.deviation_se, "passed": ok}, EXIT_OK if ok else EXIT_FAILED
    if ns.check == "coupling":
        r = verify.coupling_check(cfg, ns.levels, ns.replicas, ns.seed)
        d, se = r.mean_drift()
        return {"levels": r.levels, "ks": r.ks_consecutive, "ks_threshold": r.ks_threshold,
                "ks_critical_5pct": r.ks_critical, "mean_gap": r.mean_gap, "se_gap": r.se_gap,
                "drift": d, "capped": r.capped, "law_ks_sumZ": r.law_ks,
                "paired_independent_ks": r.paired_ks, "seeds": r.seeds,
                "note": "K_n measured on the walk path; the sum-of-Z law is compared with independent branching samples",
                "passed": r.passed()}, EXIT_OK if r.passed() else EXIT_FAILED
    # moments
    b = simulate_excursions(cfg, ns.replicas, ns.seed)
    out = {}
    for beta in ns.beta or [0.5 * cfg.nu, 1.5]:
        v = verify.progeny_moment_divergence(beta, b)
        out[str(beta)] = {"verdict": v.verdict, "slope": v.slope, "sizes": v.sizes, "estimates": v.estimates}
    return out, EXIT_OK


def _read_column(path, column):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if column not in (rd.fieldnames or []):
            raise ConfigError(f"{path}: no column {column!r} (have {rd.fieldnames})")
        return np.array([float(r[column]) for r in rd])


def cmd_fit_tail(ns, cfg):
    from .stats import fit_tail

    data = _read_column(ns.input, ns.column)
    win = tuple(ns.window) if ns.window else None
    if ns.curve_x:
        x = _read_column(ns.input, ns.curve_x)
        r = fit_tail(curve=(x, data), window=win, kind=ns.kind, log_correct=ns.log_correct)
    else:
        r = fit_tail(data, window=win, method=ns.method, log_correct=ns.log_correct, seed=ns.seed)
    return r.as_dict(), EXIT_OK


def cmd_sample_law(ns, cfg):
    from .stats import sample_mittag_leffler, sample_stable

    fn = sample_stable if ns.law == "stable" else sample_mittag_leffler
    nu = ns.nu if ns.nu is not None else cfg.nu
    s = fn(nu, ns.replicas, ns.seed)
    return Table(["index", ns.law], list(enumerate(s.tolist()))), EXIT_OK


def cmd_limit_law(ns, cfg):
    from .stats import limit_law_comparison

    r = limit_law_comparison(cfg, ns.n_grid, ns.replicas, ns.seed)
    return r.as_dict(), EXIT_OK


def cmd_reproduce_paper(ns, cfg):
    from . import acceptance
    from .walk import simulate_walk

    if ns.figure == 1:
        fig = CookieConfig.uniform(3, "3/4")
        tr = simulate_walk(fig, 100_000, ns.seed)
        return Table(["step", "position"], list(enumerate(tr.positions.tolist()))), EXIT_OK
    if ns.all or ns.criteria:
        res = acceptance.run_all(ns.criteria, quick=ns.quick, log=lambda s: print(s, file=sys.stderr))
        rows = [(r.number, r.name, "PASS" if r.passed else "FAIL", r.summary, round(r.seconds, 2)) for r in res]
        return Table(["criterion", "name", "result", "summary", "seconds"], rows), \
            EXIT_OK if all(r.passed for r in res) else EXIT_FAILED
    raise ConfigError("reproduce-paper needs --figure 1, --all or --criteria")


COMMANDS = {
    "simulate-walk": cmd_simulate_walk,
    "simulate-excursions": cmd_simulate_excursions,
    "kernel-analyze": cmd_kernel_analyze,
    "genfun-eval": cmd_genfun_eval,
    "bessel-eval": cmd_bessel_eval,
    "verify": cmd_verify,
    "fit-tail": cmd_fit_tail,
    "sample-law": cmd_sample_law,
    "limit-law": cmd_limit_law,
    "reproduce-paper": cmd_reproduce_paper,
}


# ---------------------------------------------------------------------------
# parser


def _globals() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--replicas", type=int, default=argparse.SUPPRESS, help="replica / sample count")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file (default stdout)")
    g.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    g.add_argument("--p", nargs="+", default=argparse.SUPPRESS, metavar="P_I",
                   help="cookie strengths, decimals or num/den (default 3/4 3/4 3/4)")
    g.add_argument("--M", type=int, default=argparse.SUPPRESS, help="repeat a single --p value M times")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    return g


GLOBAL_DEFAULTS = {"seed": 0, "replicas": None, "out": None, "format": None, "p": None, "M": None, "config": None}


def build_parser() -> argparse.ArgumentParser:
    g = _globals()
    ap = argparse.ArgumentParser(prog="cookiewalk", parents=[g],
                                 description="Excited random walks and their branching process.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("simulate-walk", parents=[g], help="hitting times per replica, or a trace (CSV)")
    p.add_argument("--max-level", type=int, default=1024, help="levels 1, 2, 4, ... up to this")
    p.add_argument("--horizon", type=int, help="window for inf after n (default 10 n^(1/nu))")
    p.add_argument("--step-cap", type=int, help="required when alpha <= 0")
    p.add_argument("--trace", action="store_true", help="dump one path as (step, position)")
    p.add_argument("--steps", type=int, default=100_000, help="path length for --trace and --summary")
    p.add_argument("--summary", action="store_true", help="sup and position at doubling times")
    p.add_argument("--positive-half-line", action="store_true", help="cookies on sites >= 0 only")

    p = sub.add_parser("simulate-excursions", parents=[g], help="excursions of Z (CSV)")
    p.add_argument("--start", type=int, default=0)

    p = sub.add_parser("kernel-analyze", parents=[g], help="exact kernel summaries (JSON)")
    p.add_argument("--N", type=int, default=4096)
    p.add_argument("--x", type=int, default=1)
    p.add_argument("--n-max", type=int, default=500)
    p.add_argument("--moments-up-to", type=int, default=10, help="states for the f1, f2 tables")

    p = sub.add_parser("genfun-eval", parents=[g], help="generating functions (JSON records)")
    p.add_argument("--what", choices=("pgfA", "delta", "gamma", "J"), default="J")
    p.add_argument("--s", type=float, nargs="+", default=[0.5])
    p.add_argument("--j", type=int, help="index of A_j (default all)")
    p.add_argument("--x", type=int, default=1)
    p.add_argument("--n-max", type=int, default=1000, help="last gamma_n")
    p.add_argument("--N", type=int, default=4096)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("bessel-eval", parents=[g], help="K_eta(x) with the branch used")
    p.add_argument("--eta", type=float)
    p.add_argument("--x", type=float)
    p.add_argument("--method", choices=("series", "integral", "asymptotic"))
    p.add_argument("--self-test", action="store_true", help="run the identity grid")

    p = sub.add_parser("verify", parents=[g], help="martingale, coupling and moment checks (JSON)")
    p.add_argument("--check", required=True, choices=("stopping", "martingale", "coupling", "moments"))
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--n-max", type=int, default=200)
    p.add_argument("--levels", type=int, nargs="+", default=[500, 1000])
    p.add_argument("--beta", type=float, nargs="+")

    p = sub.add_parser("fit-tail", parents=[g], help="tail exponent of a CSV column (JSON)")
    p.add_argument("--input", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--curve-x", help="treat --column as an exact curve over this column")
    p.add_argument("--kind", choices=("survival", "pmf"), default="survival")
    p.add_argument("--window", type=float, nargs=2)
    p.add_argument("--method", choices=("LogLogRegression", "Hill"), default="LogLogRegression")
    p.add_argument("--log-correct", action="store_true")

    p = sub.add_parser("sample-law", parents=[g], help="stable or Mittag-Leffler draws (CSV)")
    p.add_argument("--law", choices=("stable", "mittag-leffler"), default="mittag-leffler")
    p.add_argument("--nu", type=float)

    p = sub.add_parser("limit-law", parents=[g], help="KS distance to the Mittag-Leffler law (JSON)")
    p.add_argument("--n-grid", type=int, nargs="+", default=[2**13, 2**15, 2**17])

    p = sub.add_parser("reproduce-paper", parents=[g], help="figure trace or the acceptance table")
    p.add_argument("--figure", type=int, choices=(1,))
    p.add_argument("--all", action="store_true")
    p.add_argument("--criteria", type=int, nargs="+", choices=range(1, 13))
    p.add_argument("--quick", action="store_true", help="reduced replica counts (not acceptance-sized)")

    p = sub.add_parser("run", parents=[g], help="replay a config or manifest file")
    p.add_argument("manifest")
    p.add_argument("--set", nargs="+", default=[], metavar="KEY=VALUE", help="override experiment options")
    return ap


DEFAULT_REPLICAS = {
    "simulate-walk": 1,
    "simulate-excursions": 10_000, "verify": 100_000, "sample-law": 10_000,
    "limit-law": 10_000,
}


# ---------------------------------------------------------------------------
# config files


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1:1: expected a JSON object")
    return doc


def _model(ns, doc) -> CookieConfig:
    if ns.p is not None:
        ps = ns.p * ns.M if (ns.M and len(ns.p) == 1) else ns.p
        return CookieConfig.from_strengths(ps)
    model = (doc or {}).get("model", DEFAULT_MODEL)
    return CookieConfig.from_dict(model)


def _experiment(ns) -> dict:
    skip = set(GLOBAL_DEFAULTS) | {"command", "manifest", "set"}
    return {k: v for k, v in sorted(vars(ns).items()) if k not in skip}


def manifest(ns, cfg) -> dict:
    return {
        "version": _version(),
        "model": cfg.to_dict(),
        "seed": ns.seed,
        "replicas": ns.replicas,
        "format": ns.format,
        "out": ns.out,
        "experiment": {"subcommand": ns.command, **_experiment(ns)},
        "seeding": "numpy SeedSequence(entropy=seed, spawn_key=(module id, replica)) -> PCG64",
    }


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _replay_namespace(parser, ns):
    doc = load_config(ns.manifest)
    exp = dict(doc.get("experiment", {}))
    for item in ns.set:
        k, _, v = item.partition("=")
        exp[k.replace("-", "_")] = _coerce(v)
    if "subcommand" not in exp:
        raise ConfigError(f"{ns.manifest}: missing experiment.subcommand")
    base = parser.parse_args([exp.pop("subcommand")])
    for k, v in exp.items():
        setattr(base, k, v)
    for k in ("seed", "replicas", "format", "out"):
        if k in doc and doc[k] is not None:
            setattr(base, k, doc[k])
    # globals given on the command line win over the file
    for k in GLOBAL_DEFAULTS:
        if hasattr(ns, k) and k != "config":
            setattr(base, k, getattr(ns, k))
    return base, doc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    try:
        doc = None
        if ns.command == "run":
            ns, doc = _replay_namespace(parser, ns)
        elif getattr(ns, "config", None):
            doc = load_config(ns.config)
            for k, v in doc.get("experiment", {}).items():
                setattr(ns, k.replace("-", "_"), v)
            for k in ("seed", "replicas"):
                if k in doc:
                    setattr(ns, k, doc[k])
        for k, v in GLOBAL_DEFAULTS.items():
            if not hasattr(ns, k):
                setattr(ns, k, v)
        if ns.replicas is None:
            ns.replicas = DEFAULT_REPLICAS.get(ns.command, 2000)
        cfg = _model(ns, doc)
        payload, code = COMMANDS[ns.command](ns, cfg)
    except (CookieWalkError, ValueError, OSError) as e:
        print(f"cookiewalk: error: {e}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, (ConfigError, DomainError, OSError)) else EXIT_FAILED

    fmt = ns.format or ("csv" if isinstance(payload, Table) else "json")
    text = render(payload, fmt)
    if ns.out:
        Path(ns.out).write_text(text)
        Path(f"{ns.out}.manifest.json").write_text(json.dumps(_plain(manifest(ns, cfg)), indent=2) + "\n")
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
