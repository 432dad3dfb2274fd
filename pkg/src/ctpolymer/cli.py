"""Experiment harness: ``ctpolymer run|validate|version``.

Configuration files are flat ``key = value`` text; list values are
comma-separated and ``#`` starts a comment. Precedence, lowest first:
built-in defaults, the file, the environment variables
``CTPOLYMER_OUTPUT_DIR`` and ``CTPOLYMER_WORKERS``, then ``--set key=value``
and the dedicated flags on the command line.

Every run writes its CSV files and a ``manifest.json`` (config echo,
version, timings, file digests) into ``output_dir``. All randomness
descends from ``seed``.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

from . import __version__
from .exceptions import ConfigError, CtpolymerError
from .fieldopt import (DEFAULT_STATE_CAP, ConstraintSpec, GridEnvironment, TimeGrid,
                       _env_seed, dp_sup_field, estimate_C0, estimate_F, estimate_F_rho,
                       estimate_upsilon)
from .gibbs import (ModelParams, PartitionEstimate, estimate_partition, free_energy_point,
                    gibbs_average, series_truncation_bound, TAGS, env_seeds)
from .env import EnvironmentSheet
from .seeding import PATH_STREAM, derive_seed, make_rng

log = logging.getLogger("ctpolymer")

EXPERIMENTS = ("partition", "free-energy", "field-sup", "scaling", "upsilon",
               "disorder", "overlap", "c0-pipeline")

# key -> (parser, is_list, default)
_int, _float, _str = int, float, str
SCHEMA = {
    "experiment": (_str, False, None),
    "d": (_int, False, 1),
    "beta": (_float, True, [1.0]),
    "t": (_float, True, [1.0]),
    "K_per_unit_time": (_int, False, 8),
    "n_env": (_int, False, 32),
    "n_paths": (_int, False, 1000),
    "r": (_float, True, [1.0]),
    "rho": (_float, True, [0.1]),
    "varrho": (_float, True, [0.0]),
    "seed": (_int, False, 0),
    "output_dir": (_str, False, "out"),
    "workers": (_int, False, 1),
    # estimator settings
    "method": (_str, False, "transfer"),
    "dt": (_float, False, 0.05),
    "box_radius": (_int, False, 0),
    "n_bases": (_int, False, 8),
    "n_samples": (_int, False, 20000),
    "return_cap": (_int, False, 4096),
    "return_samples": (_int, False, 100000),
    "theta": (_float, False, 0.02),
    "state_cap": (_int, False, DEFAULT_STATE_CAP),
    "series_n_max": (_int, False, 0),
    "quad_samples": (_int, False, 8),
    "r_budget": (_float, False, 1.0),
}
LIST_KEYS = tuple(k for k, v in SCHEMA.items() if v[1])


@dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def echo(self):
        return dict(sorted(self.values.items()))


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning" | "info"
    key: str
    message: str
    data: dict = field(default_factory=dict)

    def as_dict(self):
        return {"level": self.level, "key": self.key, "message": self.message, **self.data}


# -- configuration -------------------------------------------------------------------

def parse_text(text):
    """Raw ``{key: string}`` from config text."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'", keys=())
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _convert(key, raw):
    parse, is_list, _ = SCHEMA[key]
    if isinstance(raw, str):
        parts = [p.strip() for p in raw.split(",")] if is_list else [raw.strip()]
        parts = [p for p in parts if p != ""]
    else:
        parts = list(raw) if is_list else [raw]
    try:
        vals = [parse(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}", keys=(key,)) from None
    if is_list:
        return vals
    if len(vals) != 1:
        raise ConfigError(f"{key} needs exactly one value", keys=(key,))
    return vals[0]


def build_config(raw, env=None, overrides=None):
    """Merge defaults, ``raw`` file keys, environment and ``overrides``."""
    env = os.environ if env is None else env
    merged = dict(raw)
    if env.get("CTPOLYMER_OUTPUT_DIR"):
        merged["output_dir"] = env["CTPOLYMER_OUTPUT_DIR"]
    if env.get("CTPOLYMER_WORKERS"):
        merged["workers"] = env["CTPOLYMER_WORKERS"]
    merged.update(overrides or {})
    unknown = sorted(set(merged) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}", keys=tuple(unknown))
    values = {k: (list(v[2]) if v[1] else v[2]) for k, v in SCHEMA.items()}
    for k, v in merged.items():
        values[k] = _convert(k, v)
    return ExperimentConfig(values)


def load_config(path, env=None, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_text(fh.read()), env, overrides)


# -- validation ------------------------------------------------------------------------

def validate(config, state_cap=None):
    """Static diagnostics for ``config``; never raises."""
    c = config
    diags = []
    if c.experiment not in EXPERIMENTS:
        diags.append(Diagnostic("error", "experiment",
                                f"experiment must be one of {', '.join(EXPERIMENTS)}"))
        return diags
    for k in LIST_KEYS:
        if not c.values[k]:
            diags.append(Diagnostic("error", k, f"{k} list is empty"))
    for k in ("d", "n_env", "n_paths", "K_per_unit_time", "workers"):
        if c.values[k] < 1:
            diags.append(Diagnostic("error", k, f"{k} must be >= 1"))
    if any(x < 0 for x in c.beta):
        diags.append(Diagnostic("error", "beta", "beta must be >= 0"))
    if any(x <= 0 for x in c.t):
        diags.append(Diagnostic("error", "t", "horizons must be positive"))
    if c.n_env < 2:
        diags.append(Diagnostic("error", "n_env", "n_env must be >= 2"))
    elif c.n_env < 8:
        diags.append(Diagnostic("warning", "n_env", "fewer than 8 environments; "
                                "standard errors will be unreliable"))
    if any(d.level == "error" for d in diags):
        return diags
    cap = c.state_cap if state_cap is None else state_cap

    def forecast(r, rho, t):
        grid = TimeGrid.per_unit_time(t, c.K_per_unit_time)
        spec = ConstraintSpec.from_rates(r, t, grid.dt, rho)
        R = max(spec.max_jumps, 1)
        states = grid.K * (2 * R + 1) ** c.d * (spec.max_jumps + 1) * (spec.min_separation_steps + 1)
        if states > cap:
            diags.append(Diagnostic("error", "state_cap",
                                    f"DP at r={r}, rho={rho}, t={t} needs {states} states "
                                    f"(cap {cap})", {"states": states, "cap": cap}))

    if c.experiment in ("field-sup", "scaling", "upsilon"):
        for r in c.r:
            for rho in (c.varrho if c.experiment == "field-sup" else [0.0]):
                for t in c.t:
                    forecast(r, rho, t)
    if c.experiment == "c0-pipeline":
        forecast(1.0, 0.0, max(c.t))
    if c.experiment in ("field-sup", "scaling") and any(t != sorted(c.t)[i] for i, t in enumerate(c.t)):
        diags.append(Diagnostic("error", "t", "t list must be increasing"))
    if c.experiment == "partition" and c.series_n_max > 0:
        for b in c.beta:
            for t in c.t:
                bound = series_truncation_bound(ModelParams(c.d, b, t), c.series_n_max)
                level = "warning" if bound > 1e-8 else "info"
                diags.append(Diagnostic(level, "series_n_max",
                                        f"series tail beyond n={c.series_n_max} at t={t}: {bound:.3g}",
                                        {"truncation_bound": bound}))
    if c.experiment == "disorder":
        for b in c.beta:
            if b ** 2 >= 4 * c.d:
                diags.append(Diagnostic("warning", "beta",
                                        f"beta^2 = {b ** 2:g} >= 4d = {4 * c.d}: the local-time "
                                        "bound does not apply", {"beta": b}))
        if len(c.t) < 2:
            diags.append(Diagnostic("error", "t", "disorder needs at least two horizons"))
    if c.experiment == "upsilon":
        for t in c.t:
            dt = 1.0 / (2 * c.K_per_unit_time)
            for rho in c.rho:
                if rho < dt:
                    diags.append(Diagnostic("warning", "rho",
                                            f"rho={rho} below the grid step {dt:g}: tube is trivial"))
    return diags


# -- output helpers --------------------------------------------------------------------

class Outputs:
    def __init__(self, directory):
        self.dir = directory
        os.makedirs(directory, exist_ok=True)
        self.files = []

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{name}: row width {len(row)} != header width {len(header)}")
            w.writerow([_fmt(v) for v in row])
        self._write(name, buf.getvalue())

    def json(self, name, obj):
        self._write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def jsonl(self, name, records):
        self._write(name, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))

    def text(self, name, text):
        self._write(name, text)

    def _write(self, name, text):
        data = text.encode("utf-8")
        with open(os.path.join(self.dir, name), "wb") as fh:
            fh.write(data)
        self.files.append({"name": name, "bytes": len(data),
                           "sha256": hashlib.sha256(data).hexdigest()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


# -- experiments -------------------------------------------------------------------------

def _box(c):
    return c.box_radius if c.box_radius > 0 else None


def _exp_partition(c, out):
    rows, detail = [], []
    for beta in c.beta:
        for t in c.t:
            params = ModelParams(c.d, beta, t)
            fe = free_energy_point(params, c.n_env, c.n_paths, c.seed, "sampling", c.workers)
            rows.append((c.d, beta, t, c.n_env, c.n_paths, c.seed, fe.p_hat, fe.std_error,
                         fe.ess_min))
            for e, lz in enumerate(fe.log_Z):
                detail.append({"d": c.d, "beta": beta, "t": t, "env_id": e, "log_Z": lz})
    out.csv("partition.csv", GIBBS_HEADER, rows)
    out.jsonl("partition_replicas.jsonl", detail)


GIBBS_HEADER = ("d", "beta", "t", "n_env", "n_paths", "seed", "p_hat", "se", "ess_min")


def _exp_free_energy(c, out):
    rows = []
    for beta in c.beta:
        for t in c.t:
            fe = free_energy_point(ModelParams(c.d, beta, t), c.n_env, c.n_paths, c.seed,
                                   c.method, c.workers, c.dt, _box(c))
            ess = fe.ess_min if math.isfinite(fe.ess_min) else float(c.n_paths)
            rows.append((c.d, beta, t, c.n_env, c.n_paths, c.seed, fe.p_hat, fe.std_error, ess))
            log.info("free-energy beta=%g t=%g p_hat=%.6g", beta, t, fe.p_hat)
    out.csv("free_energy.csv", GIBBS_HEADER, rows)


F_HEADER = ("r", "rho", "t", "K", "d", "n_env", "F_hat", "se")
F_DETAIL_HEADER = ("r", "rho", "t", "K", "max_jumps", "F_hat", "se", "F_grid", "se_grid",
                   "mean_jumps", "envelope_ratio")


def _f_rows(table):
    main = [(table.r, table.rho, row.t, row.K, table.d, table.n_env, row.F_hat, row.se)
            for row in table.rows]
    detail = [(table.r, table.rho, row.t, row.K, row.max_jumps, row.F_hat, row.se,
               row.F_grid, row.se_grid, row.mean_jumps, row.envelope_ratio) for row in table.rows]
    return main, detail


def _exp_field_sup(c, out):
    main, detail, paths = [], [], []
    for r in c.r:
        for rho in c.varrho:
            tab = estimate_F_rho(r, rho, c.t, c.K_per_unit_time, c.n_env, c.d, c.seed, c.workers)
            m, dd = _f_rows(tab)
            main += m
            detail += dd
            # maximizer of replica 0 at the largest horizon, for inspection
            t = c.t[-1]
            grid = TimeGrid.per_unit_time(t, c.K_per_unit_time)
            spec = ConstraintSpec.from_rates(r, t, grid.dt, rho)
            genv = GridEnvironment.sample(grid, max(spec.max_jumps, 1), c.d,
                                          _env_seed(c.seed, grid.K, 0))
            best = dp_sup_field(genv, spec)
            paths.append({"r": r, "rho": rho, "env_id": 0, "value": best.value,
                          "path": json.loads(best.to_jump_path(grid).to_record())})
    out.csv("field_sup.csv", F_HEADER, main)
    out.csv("field_sup_detail.csv", F_DETAIL_HEADER, detail)
    out.jsonl("argmax_paths.jsonl", paths)


def _exp_scaling(c, out):
    main, detail, rows = [], [], []
    tables = [estimate_F(r, c.t, c.K_per_unit_time, c.n_env, c.d, c.seed, c.workers) for r in c.r]
    base = tables[0]
    for tab in tables:
        m, dd = _f_rows(tab)
        main += m
        detail += dd
        rows.append((tab.r, c.t[-1], tab.F, tab.se, tab.F / base.F, math.sqrt(tab.r / base.r)))
    out.csv("field_sup.csv", F_HEADER, main)
    out.csv("field_sup_detail.csv", F_DETAIL_HEADER, detail)
    out.csv("scaling.csv", ("r", "t", "F_hat", "se", "ratio_to_first", "sqrt_r_ratio"), rows)


def _exp_upsilon(c, out):
    rows = []
    for r in c.r:
        for t, rho, u, se in estimate_upsilon(r, c.rho, c.t, c.n_env, c.n_bases, c.d, c.seed,
                                              c.K_per_unit_time, c.workers):
            rows.append((r, rho, t, u, se))
    out.csv("upsilon.csv", ("r", "rho", "t", "Upsilon_hat", "se"), rows)


def _exp_disorder(c, out):
    from .disorder import (direct_local_time_mgf, gamma_of_beta, local_time_mgf,
                           martingale_trajectories, return_probability)
    traj, ratios, summary = [], [], {"verdicts": []}
    ret = None
    for beta in c.beta:
        rep = martingale_trajectories(c.d, beta, c.t, c.n_env, c.n_paths, c.seed, c.method,
                                      c.dt, _box(c), c.theta, n_ratio_samples=c.n_samples,
                                      workers=c.workers)
        for e in range(c.n_env):
            for i, t in enumerate(rep.t_grid):
                traj.append((c.d, beta, t, e, float(rep.trajectories[e, i])))
        ratios += [(c.d, beta, t, ratio, se) for t, ratio, se in rep.second_moment_ratio]
        entry = {"beta": beta, "verdict": rep.verdict, **rep.stats}
        if c.d >= 3 and beta ** 2 < 4 * c.d:
            if ret is None:
                ret = return_probability(c.d, c.return_cap, c.return_samples, c.seed,
                                         c.workers)
            g = gamma_of_beta(c.d, beta)
            lt = local_time_mgf(c.d, g, ret.q_hat, ret.se)
            direct, direct_se = direct_local_time_mgf(ret, g)
            entry["local_time"] = {"gamma": g, "q_hat": ret.q_hat, "q_se": ret.se,
                                   "q_half": ret.q_half, "cap": ret.cap,
                                   "mgf": lt.mgf_value, "mgf_se": lt.mgf_se,
                                   "diverged": lt.diverged, "direct_mgf": direct,
                                   "direct_se": direct_se}
        summary["verdicts"].append(entry)
    out.csv("disorder_trajectories.csv", ("d", "beta", "t", "env_id", "log_M"), traj)
    out.csv("second_moment.csv", ("d", "beta", "t", "ratio", "se"), ratios)
    out.json("disorder_summary.json", summary)


def _exp_overlap(c, out):
    rows = []
    for beta in c.beta:
        for t in c.t:
            params = ModelParams(c.d, beta, t)
            for e, s in enumerate(env_seeds(c.seed, c.n_env)):
                for k, tag in enumerate(TAGS):
                    sheet = EnvironmentSheet(c.d, s)
                    rng = make_rng(c.seed, PATH_STREAM, e, k)
                    g = gibbs_average(sheet, params, tag, c.n_paths, rng)
                    rows.append((c.d, beta, t, e, tag, g.value, g.std_error,
                                 g.effective_sample_size, g.low_confidence))
    out.csv("overlap.csv", ("d", "beta", "t", "env_id", "tag", "value", "se", "ess",
                            "low_confidence"), rows)


def _exp_c0(c, out):
    tab = estimate_F(1.0, c.t, c.K_per_unit_time, c.n_env, c.d, c.seed, c.workers)
    m, dd = _f_rows(tab)
    out.csv("field_sup.csv", F_HEADER, m)
    out.csv("field_sup_detail.csv", F_DETAIL_HEADER, dd)
    C0, C0_se = estimate_C0(tab.F, tab.se)
    out.csv("c0.csv", ("F1_hat", "F1_se", "C0_hat", "C0_se"), [(tab.F, tab.se, C0, C0_se)])
    # free energy on the horizon list, largest horizon used for the comparison
    t = c.t[-1]
    rows = []
    for beta in c.beta:
        fe = free_energy_point(ModelParams(c.d, beta, t), c.n_env, c.n_paths, c.seed,
                               c.method, c.workers, c.dt, _box(c))
        lb = math.log(beta) if beta > 0 else float("nan")
        ratio = fe.p_hat * lb / beta ** 2 if beta > 1 else float("nan")
        rows.append((beta, t, fe.p_hat, fe.std_error, ratio, C0, ratio / C0,
                     fe.p_hat / (beta ** 2 / 2) if beta > 0 else float("nan")))
    out.csv("comparison.csv", ("beta", "t", "p_hat", "se", "p_logbeta_over_beta2", "C0_hat",
                               "ratio_over_C0", "p_over_annealed"), rows)


RUNNERS = {
    "partition": _exp_partition,
    "free-energy": _exp_free_energy,
    "field-sup": _exp_field_sup,
    "scaling": _exp_scaling,
    "upsilon": _exp_upsilon,
    "disorder": _exp_disorder,
    "overlap": _exp_overlap,
    "c0-pipeline": _exp_c0,
}


def run(config):
    """Execute ``config``; returns the manifest dict (also written to disk)."""
    errors = [d for d in validate(config) if d.level == "error"]
    if errors:
        raise ConfigError("; ".join(d.message for d in errors),
                          keys=tuple(sorted({d.key for d in errors})))
    out = Outputs(config.output_dir)
    started = time.time()
    t0 = time.perf_counter()
    log.info("running %s", config.experiment)
    RUNNERS[config.experiment](config, out)
    stage = time.perf_counter() - t0
    manifest = {
        "artifact": "ctpolymer",
        "version": __version__,
        "config": config.echo(),
        "started_unix": started,
        "timings": {config.experiment: stage},
        "wall_clock_seconds": time.time() - started,
        "files": list(out.files),
    }
    with open(os.path.join(out.dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# -- command line ----------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="ctpolymer", description="Directed polymer experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        s.add_argument("--output-dir")
        s.add_argument("--workers", type=int)
    sub.add_parser("version")
    return p


def _error(kind, message, **extra):
    rec = {"error": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    if args.command == "version":
        print(f"ctpolymer {__version__}")
        return 0
    overrides = {}
    for item in args.set:
        if "=" not in item:
            _error("usage", f"--set expects KEY=VALUE, got {item!r}")
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.workers:
        overrides["workers"] = str(args.workers)
    try:
        config = load_config(args.config, overrides=overrides)
    except OSError as exc:
        _error("usage", f"cannot read config: {exc}")
        return 2
    except ConfigError as exc:
        _error("usage", str(exc), keys=list(exc.keys))
        return 2
    if args.command == "validate":
        diags = validate(config)
        for d in diags:
            print(json.dumps(d.as_dict(), sort_keys=True))
        return 2 if any(d.level == "error" for d in diags) else 0
    try:
        manifest = run(config)
    except ConfigError as exc:
        _error("usage", str(exc), keys=list(exc.keys))
        return 2
    except (CtpolymerError, ValueError) as exc:
        _error(type(exc).__name__, str(exc), experiment=config.experiment)
        return 1
    print(json.dumps({"output_dir": config.output_dir,
                      "files": [f["name"] for f in manifest["files"]]}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
