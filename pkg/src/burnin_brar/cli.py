"""Command-line interface: ``brar <command> [--config FILE] [flags]``.

Every command reads an optional JSON config whose keys match the long flag
names (dashes become underscores); flags given on the command line win.
Reports are CSV files whose first line is a ``#`` header carrying the
engine version, a hash of the resolved config and the numeric tolerances.

Exit status: 0 ok, 1 config error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exact_tests import SCAN_STEP, TIE_DIGITS, TestKind, build_test, format_float
from .group_sequential import (
    DESIGN_MENU, MTNR_GRID, NULL_GRID, BlockRule, GsDesignSpec, calibrate_ost,
    gs_coefficients, gs_ocs, mtnr, ux_ost,
)
from .mc_oracle import BurnInRule, SimConfig, bracket_z, burn_in_rule_chi2, mc_estimate
from .oc import DEFAULT_PHI, DesignEvaluator, OcKind, OcReport, TestSpec, burnin_sweep, pobp_map
from .policy import DesignSpec, cached_policy_table
from .posterior import POLICY_TOL, STATISTIC_TOL, BetaPrior, StatisticKind

CACHE_ENV = "BRAR_CACHE_DIR"
LARGE_LIMIT = 100
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# option tables: name -> (type, default, help)

_COMMON = {
    "n": (int, 60, "maximum trial size"),
    "stat": (str, "ppcs", "test statistic: ppcs or wald"),
    "prior": (float, [1.0, 1.0], "Beta prior: a b (both arms) or aC bC aD bD"),
    "clip": (float, None, "clip bounds lo hi for the allocation probability"),
    "alpha_upper": (float, 0.025, "upper tail level"),
    "alpha_lower": (float, 0.025, "lower tail level"),
    "b": (int, None, "burn-in lengths"),
    "bp": (float, None, "burn-in proportions 2b/n (alternative to --b)"),
}

_COMMANDS = {
    "critvals": {
        "tests": (str, ["calibrated", "ux", "cxs"], "tests: calibrated, ux, cxs"),
        "cxs_s": (int, None, "total-success values reported for CX-S (default n/5 and 4n/5)"),
    },
    "sweep": {
        "tests": (str, ["calibrated"], "tests such as calibrated, ux-wald, asymptotic"),
        "kinds": (str, ["rejection"], "OC kinds: rejection, epasa, piwd, bias"),
        "delta": (float, [0.0], "treatment effects theta_D - theta_C"),
        "metric": (str, "max", "wide-table summary: avg, min or max, optionally suffixed -KIND"),
        "phi": (float, DEFAULT_PHI, "PIWD imbalance margin"),
        "empty_arm": (str, "adjusted", "bias estimate with an empty arm: adjusted or zero"),
    },
    "pobp": {
        "tests": (str, ["ux"], "tests"),
        "step": (float, 0.05, "theta grid step"),
    },
    "priors": {
        "priors": (str, ["1,1", "0.01,0.01", "0.5,0.5", "1.4,0.6", "0.6,1.4"], "priors as a,b or aC,bC,aD,bD"),
        "tests": (str, ["calibrated", "cxs", "ux", "asymptotic"], "tests"),
        "kinds": (str, ["rejection", "epasa", "bias"], "OC kinds"),
        "delta": (float, [0.0, 0.1, 0.2, 0.4], "treatment effects"),
        "phi": (float, DEFAULT_PHI, "PIWD imbalance margin"),
        "empty_arm": (str, "adjusted", "bias estimate with an empty arm: adjusted or zero"),
    },
    "arrest": {
        "block": (int, 30, "block size"),
        "ost": (float, 0.986, "fixed optional stopping threshold"),
        "ost_rules": (str, ["fixed", "calibrated", "ux"], "thresholds to evaluate"),
        "theta": (float, [0.12, 0.37], "theta_C theta_D"),
        "theta_prime": (float, 0.12, "null point for the calibrated threshold"),
        "alpha": (float, 0.05, "one-sided level for threshold calibration"),
        "phi": (float, DEFAULT_PHI, "PNIWD imbalance margin"),
        "block_rule": (str, "deterministic", "deterministic or binomial"),
        "pniwd_scope": (str, "full", "full or realized"),
    },
    "mc-check": {
        "theta": (float, [0.3, 0.6], "theta_C theta_D"),
        "tests": (str, ["calibrated"], "tests for rejection-rate checks"),
        "kinds": (str, ["rejection", "epasa", "piwd", "bias"], "OC kinds"),
        "replications": (int, 100_000, "Monte Carlo replications"),
        "seed": (int, 1, "RNG seed"),
        "burn_in_rule": (str, "alternating", "alternating or random-allocation-rule"),
        "z": (float, 3.5, "pass bracket in standard errors"),
    },
}

_OVERRIDES = {"arrest": {"n": 150, "clip": [0.25, 0.75], "b": list(DESIGN_MENU)},
              "mc-check": {"n": 20, "b": [5]}}

_LISTS = {"prior", "clip", "b", "bp", "tests", "kinds", "delta", "cxs_s", "priors", "ost_rules", "theta"}


def _options(command: str) -> dict:
    opts = dict(_COMMON)
    opts.update(_COMMANDS[command])
    for k, v in _OVERRIDES.get(command, {}).items():
        t, _, h = opts[k]
        opts[k] = (t, v, h)
    return opts


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="brar", description="Exact evaluation of burn-in BRAR designs.")
    p.add_argument("--version", action="version", version=f"burnin_brar {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in _COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory (default .)")
        sp.add_argument("--cache-dir", help=f"policy cache directory (default ${CACHE_ENV})")
        sp.add_argument("--large", action="store_true", default=None,
                        help=f"allow n > {LARGE_LIMIT}; n=240 needs about 33 minutes of policy evaluation per pass")
        for name, (typ, default, hlp) in _options(cmd).items():
            flag = "--" + name.replace("_", "-")
            kw = dict(type=typ, default=None, help=f"{hlp} (default {default})")
            if name in _LISTS:
                kw["nargs"] = "*"
            aliases = ["--test"] if name == "tests" else []
            sp.add_argument(flag, *aliases, dest=name, **kw)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    opts = _options(args.command)
    cfg = {k: v for k, (_, v, _) in opts.items()}
    cfg.update(out=".", cache_dir=os.environ.get(CACHE_ENV), large=False)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"config field {k!r}: unknown for command {args.command}")
            cfg[key] = v
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in ("out", "cache_dir", "large")}
    blob = json.dumps({"command": command, **keep}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_line(chash: str, extra: str = "") -> str:
    line = (f"# burnin_brar {__version__} config={chash} policy_tol={POLICY_TOL:g} "
            f"statistic_tol={STATISTIC_TOL:g} tie_digits={TIE_DIGITS} bernstein_scan={SCAN_STEP:g}")
    return line + (f" {extra}" if extra else "")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


def write_csv(path: Path, header: str, fields, rows) -> None:
    """RFC-4180 CSV with LF endings, written to a temporary file and renamed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    os.replace(tmp, path)


# validation helpers


def _field(cfg, name, check, msg):
    try:
        ok = check(cfg[name])
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise ConfigError(f"config field {name!r}: {msg} (got {cfg[name]!r})")


def _parse_prior(v, name="prior") -> BetaPrior:
    if isinstance(v, str):
        v = [float(x) for x in v.split(",")]
    try:
        v = [float(x) for x in v]
        if len(v) == 2:
            return BetaPrior.both(*v)
        if len(v) == 4:
            return BetaPrior(*v)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field {name!r}: {e}") from e
    raise ConfigError(f"config field {name!r}: expected 2 or 4 positive numbers")


def _burn_ins(cfg: dict, default) -> list[int]:
    n = cfg["n"]
    if cfg["b"] is not None and cfg["bp"] is not None:
        raise ConfigError("config fields 'b' and 'bp' are mutually exclusive")
    if cfg["bp"] is not None:
        bs = []
        for p in cfg["bp"]:
            b = p * n / 2
            if abs(b - round(b)) > 1e-9 or not 0 <= p <= 1:
                raise ConfigError(f"config field 'bp': {p} is not a burn-in proportion of n={n}")
            bs.append(int(round(b)))
    elif cfg["b"] is not None:
        bs = list(cfg["b"])
    else:
        bs = list(default)
    if not bs:
        raise ConfigError("config field 'b': empty burn-in list")
    for b in bs:
        if not isinstance(b, (int, np.integer)) or not 0 <= b <= n // 2:
            raise ConfigError(f"config field 'b': {b!r} outside [0, {n // 2}]")
    return [int(b) for b in bs]


def _validate_fixed(cfg: dict) -> None:
    _field(cfg, "n", lambda n: isinstance(n, int) and n >= 2 and n % 2 == 0, "a positive even integer")
    if cfg["n"] > LARGE_LIMIT and not cfg["large"]:
        raise ConfigError(f"config field 'n': n={cfg['n']} exceeds {LARGE_LIMIT}; pass --large")
    _field(cfg, "stat", lambda s: s in ("ppcs", "wald"), "ppcs or wald")
    if cfg["clip"] is not None:
        _field(cfg, "clip", lambda c: len(c) == 2 and 0 <= c[0] <= c[1] <= 1, "two bounds 0 <= lo <= hi <= 1")
    for k in ("alpha_upper", "alpha_lower"):
        _field(cfg, k, lambda a: 0 <= a < 1, "in [0, 1)")


def _test_specs(names, stat: str) -> list[TestSpec]:
    out = []
    for t in names:
        try:
            spec = TestSpec.parse(t if "-" in t or t == "asymptotic" else f"{t}-{stat}")
        except ValueError as e:
            raise ConfigError(f"config field 'tests': {t!r} ({e})") from e
        out.append(spec)
    if not out:
        raise ConfigError("config field 'tests': empty list")
    return out


def _kinds(names) -> list[OcKind]:
    try:
        out = [OcKind(k) for k in names]
    except ValueError as e:
        raise ConfigError(f"config field 'kinds': {e}") from e
    if not out:
        raise ConfigError("config field 'kinds': empty list")
    return out


def _evaluator(cfg, prior=None, empty_arm="adjusted") -> DesignEvaluator:
    prior = prior or _parse_prior(cfg["prior"])
    clip = tuple(cfg["clip"]) if cfg["clip"] is not None else None
    policy = cached_policy_table(cfg["n"], prior, clip, POLICY_TOL, cfg["cache_dir"])
    return DesignEvaluator(cfg["n"], prior, clip, policy, cfg["alpha_upper"], cfg["alpha_lower"],
                           empty_arm=empty_arm)


def _default_bp_list(n: int) -> list[int]:
    if n % 20 == 0:
        return [k * n // 20 for k in range(11)]
    return list(range(n // 2 + 1))


# commands


def cmd_critvals(cfg, out: Path, chash: str) -> list[Path]:
    _validate_fixed(cfg)
    n, stat = cfg["n"], cfg["stat"]
    bs = _burn_ins(cfg, range(n // 2 + 1))
    kinds = [TestKind(t) for t in cfg["tests"]] if cfg["tests"] else []
    if not kinds:
        raise ConfigError("config field 'tests': empty list")
    svals = cfg["cxs_s"] if cfg["cxs_s"] is not None else [n // 5, 4 * n // 5]
    for s in svals:
        if not 0 <= s <= n:
            raise ConfigError(f"config field 'cxs_s': {s} outside [0, {n}]")
    ev = _evaluator(cfg)
    statistic = StatisticKind(stat)
    fields = ["b", "BP"]
    for k in kinds:
        if k is TestKind.CXS:
            fields += [f"cxs_{stat}_s{s}_{side}" for s in svals for side in ("upper", "lower")]
        else:
            fields += [f"{k.value}_{stat}_{side}" for side in ("upper", "lower")]
    rows = []
    for b in bs:
        fr = ev.frontier(b)
        row = [b, 2 * b / n]
        for k in kinds:
            t = build_test(k, fr, ev.statistic(statistic), statistic, cfg["alpha_upper"], cfg["alpha_lower"])
            if k is TestKind.CXS:
                for s in svals:
                    row += [float(t.upper[s]), float(t.lower[s])]
            else:
                row += [float(t.upper), float(t.lower)]
        rows.append(row)
        ev.forget(b)
    path = out / f"critvals-n{n}-{stat}.csv"
    write_csv(path, header_line(chash), fields, rows)
    return [path]


def _sweep_rows(cfg, ev, chash):
    bs = _burn_ins(cfg, _default_bp_list(cfg["n"]))
    specs = _test_specs(cfg["tests"], cfg["stat"])
    kinds = _kinds(cfg["kinds"])
    deltas = [float(d) for d in cfg["delta"]]
    if not deltas:
        raise ConfigError("config field 'delta': empty list")
    for d in deltas:
        if not -1 < d < 1:
            raise ConfigError(f"config field 'delta': {d} outside (-1, 1)")
    return burnin_sweep(ev, bs, specs, kinds, deltas, cfg["phi"], chash)


def _metric(cfg) -> tuple[str, OcKind | None]:
    summary, _, kind = str(cfg["metric"]).partition("-")
    if summary not in ("avg", "min", "max"):
        raise ConfigError(f"config field 'metric': {cfg['metric']!r} is not avg, min or max[-KIND]")
    return summary, (_kinds([kind])[0] if kind else None)


def cmd_sweep(cfg, out: Path, chash: str) -> list[Path]:
    _validate_fixed(cfg)
    summary, metric_kind = _metric(cfg)
    _field(cfg, "empty_arm", lambda m: m in ("adjusted", "zero"), "adjusted or zero")
    _burn_ins(cfg, _default_bp_list(cfg["n"]))  # fail before any computation
    _test_specs(cfg["tests"], cfg["stat"])
    kinds = _kinds(cfg["kinds"])
    if metric_kind is not None and metric_kind not in kinds:
        cfg = dict(cfg, kinds=[k.value for k in kinds] + [metric_kind.value])
    reports = _sweep_rows(cfg, _evaluator(cfg, empty_arm=cfg["empty_arm"]), chash)
    n = cfg["n"]
    long_path = out / f"sweep-n{n}.csv"
    write_csv(long_path, header_line(chash), OcReport.FIELDS, [r.row() for r in reports])

    attr = f"value_{summary}"
    bs = sorted({r.burn_in for r in reports})
    groups: dict = {}
    for r in reports:
        if metric_kind is None or r.kind == metric_kind.value:
            groups.setdefault((r.test, r.statistic, r.kind, r.delta), {})[r.burn_in] = getattr(r, attr)
    fields = ["n", "test", "statistic", "kind", "delta", "metric"] + [f"BP={2 * b / n:g}" for b in bs]
    rows = [[n, *key, summary, *(vals.get(b, float("nan")) for b in bs)] for key, vals in groups.items()]
    wide_path = out / f"sweep-n{n}-{cfg['metric']}.csv"
    write_csv(wide_path, header_line(chash), fields, rows)
    return [long_path, wide_path]


def cmd_pobp(cfg, out: Path, chash: str) -> list[Path]:
    _validate_fixed(cfg)
    _field(cfg, "step", lambda s: 0 < s <= 0.5, "in (0, 0.5]")
    specs = _test_specs(cfg["tests"], cfg["stat"])
    n = cfg["n"]
    grid = np.round(np.arange(cfg["step"], 1.0 - 1e-12, cfg["step"]), 12)
    thetas = [(float(a), float(b)) for a in grid for b in grid if a != b]
    ev = _evaluator(cfg)
    paths = []
    for spec in specs:
        rows = [[tc, td, spec.label(), b, 2 * b / n] for tc, td, b in pobp_map(ev, spec, thetas)]
        path = out / f"pobp-n{n}-{spec.label()}.csv"
        write_csv(path, header_line(chash), ["theta_C", "theta_D", "test", "b_star", "BP_star"], rows)
        paths.append(path)
    return paths


def cmd_priors(cfg, out: Path, chash: str) -> list[Path]:
    _validate_fixed(cfg)
    _field(cfg, "empty_arm", lambda m: m in ("adjusted", "zero"), "adjusted or zero")
    n = cfg["n"]
    default_b = sorted({0, n // 10, n // 4, 4 * n // 10, n // 2})
    _burn_ins(cfg, default_b)
    priors = [_parse_prior(p, "priors") for p in cfg["priors"]]
    if not priors:
        raise ConfigError("config field 'priors': empty list")
    fields = ("prior",) + OcReport.FIELDS
    rows = []
    for prior in priors:
        ev = _evaluator(cfg, prior, cfg["empty_arm"])
        sub = dict(cfg, b=_burn_ins(cfg, default_b), bp=None)
        rows += [[prior.label(), *r.row()] for r in _sweep_rows(sub, ev, chash)]
    path = out / f"priors-n{n}.csv"
    write_csv(path, header_line(chash), fields, rows)
    return [path]


def cmd_arrest(cfg, out: Path, chash: str) -> list[Path]:
    _field(cfg, "block_rule", lambda r: r in {x.value for x in BlockRule}, "deterministic or binomial")
    _field(cfg, "pniwd_scope", lambda r: r in ("full", "realized"), "full or realized")
    _field(cfg, "theta", lambda t: len(t) == 2 and all(0 <= x <= 1 for x in t), "two probabilities")
    _field(cfg, "ost_rules", lambda r: set(r) <= {"fixed", "calibrated", "ux"}, "fixed, calibrated, ux")
    _field(cfg, "ost", lambda o: o > 0.5, "greater than 0.5")
    bs = _burn_ins(cfg, DESIGN_MENU)
    if not cfg["ost_rules"]:
        raise ConfigError("config field 'ost_rules': empty list")
    clip = tuple(cfg["clip"]) if cfg["clip"] is not None else (0.0, 1.0)
    try:
        designs = {b: GsDesignSpec(cfg["n"], cfg["block"], b, clip, _parse_prior(cfg["prior"]),
                                   cfg["ost"], cfg["block_rule"]) for b in bs}
    except ValueError as e:
        raise ConfigError(f"config: {e}") from e
    theta = tuple(cfg["theta"])
    fields = ["b", "ost_rule", "ost", "power", "futility", "epasa", "pniwd", "mtnr", "expected_sample_size"]
    rows = []
    for b, d in designs.items():
        for rule in cfg["ost_rules"]:
            if rule == "fixed":
                ost = cfg["ost"]
            elif rule == "calibrated":
                ost = calibrate_ost(d, cfg["theta_prime"], cfg["alpha"])
            else:
                ost = ux_ost(d, NULL_GRID, cfg["alpha"])
            dd = d.with_ost(ost)
            co = gs_coefficients(dd)
            o = gs_ocs(dd, theta, cfg["phi"], cfg["pniwd_scope"], co)
            rows.append([b, rule, float(ost), o.rejection, o.futility, o.epasa, o.pniwd,
                         mtnr(dd, MTNR_GRID, co), o.expected_sample_size])
    path = out / "arrest.csv"
    extra = f"block_rule={cfg['block_rule']} pniwd_scope={cfg['pniwd_scope']}"
    write_csv(path, header_line(chash, extra), fields, rows)
    return [path]


def cmd_mc_check(cfg, out: Path, chash: str) -> list[Path]:
    _validate_fixed(cfg)
    _field(cfg, "replications", lambda r: r >= 1000, "at least 1000")
    _field(cfg, "theta", lambda t: len(t) == 2 and all(0 <= x <= 1 for x in t), "two probabilities")
    _field(cfg, "burn_in_rule", lambda r: r in {x.value for x in BurnInRule}, "alternating or random-allocation-rule")
    bs = _burn_ins(cfg, [cfg["n"] // 4])
    kinds = _kinds(cfg["kinds"])
    specs = _test_specs(cfg["tests"], cfg["stat"])
    theta = tuple(float(x) for x in cfg["theta"])
    ev = _evaluator(cfg)
    rows = []
    for b in bs:
        design = DesignSpec(cfg["n"], b, ev.prior, ev.clip)
        sim = SimConfig(design, theta, cfg["replications"], cfg["seed"], cfg["burn_in_rule"], ev.policy)
        for kind in kinds:
            if kind is OcKind.PIWD and theta[0] == theta[1]:
                continue
            for spec in (specs if kind is OcKind.REJECTION else [None]):
                exact = ev.point(b, kind, theta, spec)
                est, se = mc_estimate(sim, ev.test(b, spec) if spec else kind)
                z = bracket_z(exact, est, se, cfg["replications"], kind in (OcKind.REJECTION, OcKind.PIWD))
                label = spec.label() if spec else ""
                rows.append([b, kind.value, label, exact, est, se, z, "pass" if abs(z) <= cfg["z"] else "FAIL"])
        p = burn_in_rule_chi2(design, theta, cfg["replications"], cfg["seed"])
        rows.append([b, "burn-in-rule-chi2", "", float("nan"), p, float("nan"), float("nan"),
                     "pass" if p >= 1e-3 else "FAIL"])
    path = out / f"mc-check-n{cfg['n']}.csv"
    write_csv(path, header_line(chash, f"replications={cfg['replications']} seed={cfg['seed']}"),
              ["b", "kind", "test", "exact", "mc", "se", "z", "result"], rows)
    return [path]


COMMANDS = {
    "critvals": cmd_critvals,
    "sweep": cmd_sweep,
    "pobp": cmd_pobp,
    "priors": cmd_priors,
    "arrest": cmd_arrest,
    "mc-check": cmd_mc_check,
}


def run(argv=None) -> int:
    """Parse ``argv``, run one command and return the exit status."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        chash = config_hash(args.command, cfg)
        for p in COMMANDS[args.command](cfg, Path(cfg["out"]), chash):
            print(p)
        return EXIT_OK
    except ConfigError as e:
        print(f"brar: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as e:  # quadrature failure, overflow
        print(f"brar: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:  # invalid design rejected by a compute module
        print(f"brar: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"brar: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
