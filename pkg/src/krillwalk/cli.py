"""Command-line front end: ``krillwalk {analyze,ballot,simulate,series,tails}``.

Parameters are resolved with the precedence flag > ``--config`` file >
``KRILLWALK_SEED`` (seed only) > built-in default.  The resolved
:class:`RunConfig` is echoed to stderr and embedded in every result.

Exit codes: 0 success, 1 runtime failure (a ``<out>.partial`` marker is
written when an output path was requested), 2 usage or unparseable law
specs, 3 semantically invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_NODES,
    explore_batch,
    simulate_batch,
    spine_batch,
)
from .errors import KrillwalkError, LatticeSpanError, SpecSyntaxError
from .lab import ez_series, m_tail, max_profile, z_tail, zlogz_trend
from .model import OffspringLaw, StepLaw, classify, critical_plusminus_p
from .pathlaw import (
    BarrierProfile,
    PathQuery,
    TerminalCondition,
    ballot_asymptotic,
    path_probability_exact,
    path_result,
)

SEED_ENV = "KRILLWALK_SEED"
PEMANTLE_STEP = "-1:0.9330127018922193,1:0.0669872981077807"


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (converter, default)
OPTIONS = {
    "step": (str, None),
    "offspring": (str, "const:2"),
    "calibrate": (_bool, False),
    "band": (float, 1e-9),
    "n": (int, None),
    "terminal": (str, None),
    "profile": (str, "one_sided:0"),
    "exact": (_bool, False),
    "state_cap": (int, 1_000_000),
    "trials": (int, 10_000),
    "seed": (int, 0),
    "max_nodes": (int, DEFAULT_MAX_NODES),
    "max_depth": (int, DEFAULT_MAX_DEPTH),
    "mode": (str, "direct"),
    "emit": (str, None),
    "spine_n": (int, 10),
    "prune_eps": (float, 1e-2),
    "frontier_budget": (int, 1000),
    "frontier_cap": (int, 10**6),
    "N": (int, 1000),
    "target": (str, "z"),
    "thresholds": (str, None),
    "replicates": (int, 1),
    "out": (str, None),
    "threads": (int, None),
}

COMMANDS = {
    "analyze": ["step", "offspring", "calibrate", "band", "out"],
    "ballot": ["step", "n", "terminal", "profile", "exact", "state_cap", "out"],
    "simulate": ["step", "offspring", "trials", "seed", "max_nodes", "max_depth", "mode", "emit",
                 "spine_n", "prune_eps", "frontier_budget", "frontier_cap", "out", "threads"],
    "series": ["step", "offspring", "N", "state_cap", "out"],
    "tails": ["step", "offspring", "target", "thresholds", "trials", "seed", "max_nodes",
              "replicates", "out", "threads"],
}

# keys that never change results; left out of the config embedded in data files
VOLATILE = ("out", "emit", "threads")

HELP = {
    "step": "step law, e.g. -1:0.93,1:0.07 (value:prob pairs, fractions allowed)",
    "offspring": "offspring law: const:K, geom:Q, poisson:MU or table:k:p,...",
    "calibrate": "replace p of a +-1 step law by the critical value",
    "band": "half-width of the critical band on f(lambda*) - log EB",
    "n": "path length",
    "terminal": "terminal condition: eq:K, ge:K, le:K or any",
    "profile": "barrier profile(s) joined by '+': one_sided:M, corridor:M,TOP, fnk:K, useful:K,M0, pin:I,J",
    "exact": "also compute the exact rational probability",
    "state_cap": "maximum number of DP states before giving up",
    "trials": "number of independent trees",
    "seed": "master seed (default: KRILLWALK_SEED, else 0)",
    "max_nodes": "per-tree node budget; larger trees are truncated",
    "max_depth": "maximum generation explored",
    "mode": "direct, maxbar (un-killed maximum) or spine",
    "emit": "write one CSV row per trial to this path",
    "spine_n": "spine length in spine mode",
    "prune_eps": "pruning tolerance for the un-killed maximum",
    "frontier_budget": "frontier size used to set the pruning threshold",
    "frontier_cap": "hard frontier limit for the un-killed maximum",
    "N": "number of series terms",
    "target": "z, m, zlogz or profile",
    "thresholds": "comma-separated thresholds (k values for m, sample sizes for zlogz)",
    "replicates": "independent streams whose median is reported for zlogz",
    "out": "output path (.csv or .json); stdout when omitted",
    "threads": "worker threads (results do not depend on this)",
}

DEFAULT_THRESHOLDS = {"z": "100,1000,10000", "m": "1,2,3,4,5,6", "zlogz": "10000,100000", "profile": ""}


class UsageError(KrillwalkError):
    exit_code = 2


@dataclass
class RunConfig:
    """Fully resolved parameters of one invocation."""

    command: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "params": self.params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        return cls(d["command"], d["params"])

    def stable(self) -> dict:
        """Config without output paths and worker count."""
        return {"command": self.command,
                "params": {k: v for k, v in sorted(self.params.items()) if k not in VOLATILE}}

    def __getattr__(self, name):
        try:
            return self.__dict__["params"][name]
        except KeyError:
            raise AttributeError(name) from None


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krillwalk", description="Killed branching random walk toolkit.")
    parser.add_argument("--version", action="version", version=f"krillwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "criticality report for a step / offspring pair",
        "ballot": "exact constrained-path probability and its asymptotic scale",
        "simulate": "Monte Carlo trials of the killed tree, spine or un-killed maximum",
        "series": "E[Z] from the level-mean series",
        "tails": "tail tables for Z, M, Z log Z or the maximum profile",
    }
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value file with defaults for these flags")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            if OPTIONS[key][0] is _bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, help=HELP[key])
            else:
                p.add_argument(flag, dest=key, help=HELP[key])
    return parser


def _join_dash_values(argv: list[str]) -> list[str]:
    # "--step -1:0.9,1:0.1" would otherwise read the law as an unknown flag
    valued = {"--" + k.replace("_", "-") for k, (conv, _) in OPTIONS.items() if conv is not _bool}
    valued.add("--config")
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in valued and i + 1 < len(argv) and argv[i + 1].startswith("-") and not argv[i + 1].startswith("--"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def parse_config(argv=None, env=None) -> RunConfig:
    """Resolve flags, config file, environment and defaults into a RunConfig."""
    env = os.environ if env is None else env
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = vars(build_parser().parse_args(_join_dash_values(argv)))
    command = ns.pop("command")
    keys = COMMANDS[command]
    file_values = read_config_file(ns.pop("config")) if "config" in ns else {}
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    params = {}
    for key in keys:
        conv, default = OPTIONS[key]
        if key in ns:
            raw, origin = ns[key], "flag"
        elif key in file_values:
            raw, origin = file_values[key], "config file"
        elif key == "seed" and env.get(SEED_ENV):
            raw, origin = env[SEED_ENV], SEED_ENV
        else:
            params[key] = default
            continue
        try:
            params[key] = conv(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key} ({origin}): {raw!r}") from exc
    if "step" in params and params["step"] is None:
        if command == "analyze" and params.get("calibrate"):
            params["step"] = PEMANTLE_STEP
        else:
            raise UsageError("--step is required")
    if command == "ballot":
        for key in ("n", "terminal"):
            if params[key] is None:
                raise UsageError(f"--{key} is required")
    if command == "tails" and params["thresholds"] is None:
        params["thresholds"] = DEFAULT_THRESHOLDS.get(params["target"], "")
    for key in ("trials", "N", "replicates", "spine_n"):
        if key in params and params[key] < 0:
            raise UsageError(f"--{key.replace('_', '-')} must be non-negative")
    return RunConfig(command, params)


# ----------------------------------------------------------------- helpers

def _step(cfg: RunConfig, need_span: bool) -> StepLaw:
    law = StepLaw.from_spec(cfg.step)
    if need_span and law.span != 1:
        raise LatticeSpanError(f"step law has lattice span {law.span}; this command needs span 1")
    return law


def _offspring(cfg: RunConfig) -> OffspringLaw:
    return OffspringLaw.from_spec(cfg.offspring)


def _ints(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse integer list {text!r}") from exc


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _header(cfg: RunConfig) -> dict:
    h = {"tool": "krillwalk", "version": __version__, "config": cfg.stable()}
    if "seed" in cfg.params:
        h["seed"] = cfg.params["seed"]
    return h


def _csv_text(cfg: RunConfig, rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    h = _header(cfg)
    buf.write(f"# {h['tool']} {h['version']}\n")
    if "seed" in h:
        buf.write(f"# seed {h['seed']}\n")
    buf.write(f"# config {json.dumps(h['config'], sort_keys=True)}\n")
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _json_text(cfg: RunConfig, result: dict) -> str:
    return json.dumps(_clean({**_header(cfg), "result": result}), indent=2, sort_keys=True) + "\n"


class Output:
    """Writes result files; wall clock and worker count go to a ``.meta.json`` sidecar."""

    def __init__(self, cfg: RunConfig, stdout):
        self.cfg = cfg
        self.stdout = stdout
        self.t0 = time.perf_counter()
        self.written: list[str] = []

    def emit(self, text: str, path: str | None):
        if path is None:
            self.stdout.write(text)
            return
        Path(path).write_text(text)
        self.written.append(path)

    def finish(self):
        wall = time.perf_counter() - self.t0
        meta = {**_header(self.cfg), "run_config": json.loads(self.cfg.to_json()),
                "threads": self.cfg.params.get("threads") or os.cpu_count() or 1,
                "wall_clock_seconds": wall}
        for path in self.written:
            Path(path + ".meta.json").write_text(json.dumps(_clean(meta), indent=2, sort_keys=True) + "\n")
        print(f"krillwalk: {self.cfg.command} done in {wall:.3f} s", file=sys.stderr)


# ------------------------------------------------------------- subcommands

def run_analyze(cfg: RunConfig, out: Output):
    offspring = _offspring(cfg)
    if cfg.calibrate:
        # move the +-1 step law onto the critical surface for this offspring mean
        p = critical_plusminus_p(offspring.mean)
        step = StepLaw((-1, 1), (1 - p, p))
    else:
        step = _step(cfg, need_span=False)
    report = classify(step, offspring, band=cfg.band)
    result = report.to_dict()
    result["step"] = step.to_spec()
    out.emit(_json_text(cfg, result), cfg.out)


def _parse_terminal(text: str, n: int) -> TerminalCondition:
    kind, _, arg = text.partition(":")
    try:
        if kind == "eq":
            return TerminalCondition.equals(int(arg))
        if kind == "ge":
            return TerminalCondition.at_least(int(arg))
        if kind == "le":
            return TerminalCondition.at_most(int(arg))
        if kind == "any" and not arg:
            return TerminalCondition.anything()
    except ValueError:
        pass
    raise UsageError(f"bad terminal {text!r}; expected eq:<k>, ge:<k>, le:<k> or any")


def _parse_profile(text: str, n: int, k: int | None):
    """Returns the barrier profile and the asymptotic formula matching it (or None)."""
    profile = None
    formula = None
    for part in text.split("+"):
        kind, _, arg = part.partition(":")
        try:
            args = [int(a) for a in arg.split(",")] if arg else []
        except ValueError:
            raise UsageError(f"bad profile component {part!r}") from None
        if kind == "one_sided" and len(args) == 1:
            profile = BarrierProfile.one_sided(n, args[0])
            formula = None if k is None else ("mean0", dict(n=n, k=k, m=args[0]))
        elif kind == "corridor" and len(args) == 2:
            profile = BarrierProfile.corridor(n, args[0], args[1])
            formula = None
        elif kind == "fnk" and len(args) == 1:
            profile = BarrierProfile.fnk(n, args[0])
            formula = ("fnk", dict(n=n, k=args[0]))
        elif kind == "useful" and len(args) == 2:
            profile = BarrierProfile.useful(n, args[0], args[1])
            formula = ("gnk", dict(n=n, k=args[0]))
        elif kind == "pin" and len(args) == 2:
            base = profile if profile is not None else BarrierProfile.free(n)
            if formula is not None and formula[0] == "fnk":
                formula = ("fnksmj", dict(n=n, k=formula[1]["k"], m=args[0], j=args[1]))
            else:
                formula = None
            profile = base.with_pin(args[0], args[1])
        else:
            raise UsageError(f"bad profile component {part!r}")
    return profile, formula


def run_ballot(cfg: RunConfig, out: Output):
    step = _step(cfg, need_span=True)
    n = cfg.n
    if n < 0:
        raise UsageError("--n must be non-negative")
    terminal = _parse_terminal(cfg.terminal, n)
    k = terminal.values[0] if terminal.kind in ("eq", "ge") else None  # ballot formulas index by the end point
    profile, formula = _parse_profile(cfg.profile, n, k)
    q = PathQuery(step, profile, terminal)
    res = path_result(q, state_cap=cfg.state_cap)
    result = {"n": n, "probability": res.probability, "log_probability": res.log_probability,
              "underflow_count": res.underflow_count, "profile": profile.label}
    asym = None
    if formula is not None:
        try:
            asym = ballot_asymptotic(formula[0], **formula[1])
            result["asymptotic_kind"] = formula[0]
        except KrillwalkError:
            asym = None
    result["asymptotic"] = asym
    result["ratio"] = res.probability / asym if asym else None
    if cfg.exact:
        exact = path_probability_exact(q)
        if isinstance(exact, Fraction):
            result["exact"] = f"{exact.numerator}/{exact.denominator}"
            result["exact_float"] = float(exact)
        else:
            result["exact_float"] = float(exact)
    out.emit(_json_text(cfg, result), cfg.out)


TRIAL_COLUMNS = ["trial", "z", "m_living", "m_all", "depth", "truncated", "bias_bound"]
SPINE_COLUMNS = ["trial", "spine_alive", "final_position", "min_position", "offspring_total"]


def _mean_se(x) -> tuple[float | None, float | None]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return None, None
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else None
    return float(x.mean()), se


def run_simulate(cfg: RunConfig, out: Output):
    step = _step(cfg, need_span=False)
    offspring = _offspring(cfg)
    t, seed = cfg.trials, cfg.seed
    if cfg.max_nodes <= 0 or cfg.max_depth <= 0:
        raise UsageError("--max-nodes and --max-depth must be positive")
    result = {"mode": cfg.mode, "trials": t}
    if cfg.mode == "spine":
        sp = spine_batch(step, offspring, t, seed, cfg.spine_n, cfg.threads)
        freq, se = _mean_se(sp["alive"])
        result.update(n=cfg.spine_n, alive_frequency=freq, alive_se=se,
                      mean_offspring_off_spine=_mean_se(sp["extra"] / (cfg.spine_n + 1))[0])
        rows = [{"trial": i, "spine_alive": int(a), "final_position": int(f), "min_position": int(m),
                 "offspring_total": int(e)}
                for i, (a, f, m, e) in enumerate(zip(sp["alive"], sp["final"], sp["min"], sp["extra"]))]
        columns = SPINE_COLUMNS
    elif cfg.mode in ("direct", "maxbar"):
        b = simulate_batch(step, offspring, t, seed, max_nodes=cfg.max_nodes, max_depth=cfg.max_depth,
                           threads=cfg.threads)
        m_all = bias = None
        if cfg.mode == "maxbar":
            m_all, bias = explore_batch(step, offspring, t, seed, prune_eps=cfg.prune_eps,
                                        frontier_budget=cfg.frontier_budget, frontier_cap=cfg.frontier_cap,
                                        threads=cfg.threads)
            mm, ms = _mean_se(m_all)
            result.update(mean_m_all=mm, se_m_all=ms, total_bias_bound=float(bias.sum()),
                          max_bias_bound=float(bias.max()) if t else None,
                          m_living_exceeds_m_all=int((b.m_living > m_all).sum()))
        zm, zs = _mean_se(b.z)
        mm, ms = _mean_se(b.m_living)
        result.update(
            mean_z=zm, se_z=zs, mean_m_living=mm, se_m_living=ms,
            mean_depth=_mean_se(b.depth)[0],
            max_z=int(b.z.max()) if t else None,
            z_equals_one=float((b.z == 1).mean()) if t else None,
            censored=int(b.truncated.sum()),
            censored_fraction=float(b.truncated.mean()) if t else None,
        )
        rows = []
        for i in range(t):
            rows.append({"trial": i, "z": int(b.z[i]), "m_living": int(b.m_living[i]),
                         "m_all": None if m_all is None else int(m_all[i]), "depth": int(b.depth[i]),
                         "truncated": int(b.truncated[i]),
                         "bias_bound": None if bias is None else float(bias[i])})
        columns = TRIAL_COLUMNS
    else:
        raise UsageError(f"unknown mode {cfg.mode!r}; expected direct, spine or maxbar")
    if cfg.emit:
        out.emit(_csv_text(cfg, rows, columns), cfg.emit)
    out.emit(_json_text(cfg, result), cfg.out)


def run_series(cfg: RunConfig, out: Output):
    step = _step(cfg, need_span=True)
    report = ez_series(step, _offspring(cfg), cfg.N)
    out.emit(_json_text(cfg, report.to_dict()), cfg.out)


def run_tails(cfg: RunConfig, out: Output):
    step = _step(cfg, need_span=False)
    offspring = _offspring(cfg)
    th = _ints(cfg.thresholds)
    kw = dict(seed=cfg.seed, max_nodes=cfg.max_nodes, threads=cfg.threads)
    if cfg.target == "z":
        table = z_tail(step, offspring, cfg.trials, th, **kw)
        rows, data = table.rows, table.to_dict()
    elif cfg.target == "m":
        if not th:
            raise UsageError("--thresholds must list at least one k")
        table = m_tail(step, offspring, cfg.trials, max(th), **kw)
        keep = set(th)
        rows = [r for r in table.rows if r["threshold"] in keep]
        data = {"kind": "m", "trials": table.trials, "rows": rows}
    elif cfg.target == "zlogz":
        if not th:
            raise UsageError("--thresholds must list the sample sizes")
        trend = zlogz_trend(step, offspring, th, replicates=cfg.replicates, **kw)
        rows = [{"threshold": s, "mean_zlogz": v, "replicates": cfg.replicates} for s, v in trend]
        data = {"kind": "zlogz", "rows": rows}
    elif cfg.target == "profile":
        prof = max_profile(step, offspring, cfg.trials, **kw)
        rows = [{"threshold": k, "count": d["count"], "probability": d["probability"],
                 "unique": d["unique"], "window": d["window"]} for k, d in prof["by_k"].items()]
        data = prof
    else:
        raise UsageError(f"unknown target {cfg.target!r}; expected z, m, zlogz or profile")
    path = cfg.out
    if path is not None and path.endswith(".json"):
        out.emit(_json_text(cfg, data), path)
    else:
        columns = list(rows[0]) if rows else ["threshold"]
        out.emit(_csv_text(cfg, rows, columns), path)


RUNNERS = {"analyze": run_analyze, "ballot": run_ballot, "simulate": run_simulate,
           "series": run_series, "tails": run_tails}


def _partial_marker(cfg: RunConfig | None, exc: Exception):
    if cfg is None:
        return
    for key in ("out", "emit"):
        path = cfg.params.get(key)
        if path:
            Path(path + ".partial").write_text(json.dumps(
                {"error": type(exc).__name__, "message": str(exc), "run_config": json.loads(cfg.to_json())},
                sort_keys=True) + "\n")


def main(argv=None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    cfg = None
    try:
        cfg = parse_config(argv)
        print(f"krillwalk: config {cfg.to_json()}", file=sys.stderr)
        out = Output(cfg, stdout)
        RUNNERS[cfg.command](cfg, out)
        out.finish()
        return 0
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except KrillwalkError as exc:
        print(f"krillwalk: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if exc.exit_code == 1:
            _partial_marker(cfg, exc)
        return exc.exit_code
    except ValueError as exc:
        print(f"krillwalk: error: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, MemoryError) as exc:
        print(f"krillwalk: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _partial_marker(cfg, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
