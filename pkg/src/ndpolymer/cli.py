"""Command-line experiment runner.

``ndpolymer GROUP ACTION [--config file.yaml] [--key value ...]`` runs one
experiment, writes its table as CSV and appends a JSON run record next to
it. Config files are flat YAML mappings whose keys are the flag names;
command-line flags override them and unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pydantic
import yaml

from . import __version__, acceptance, elpp, entropy, limits, polymer, varprob, walk
from .env import LatticeEnvironment
from .errors import NumericalDiagnostic, ValidationError
from .model import ModelParams, Region, classify_regime, region_boundaries, wandering_exponent
from .stats import ks_distance


class ExperimentConfig(pydantic.BaseModel):
    """Flat experiment description; every key doubles as a command-line flag."""

    model_config = pydantic.ConfigDict(extra="forbid")

    experiment: str = ""
    seed: int = pydantic.Field(0, ge=0, lt=2 ** 64)
    out: Optional[str] = None
    # model
    d: int = pydantic.Field(2, ge=1)
    alpha: float = 1.5
    gamma: float = 0.5
    beta_hat: float = 1.0
    h: Optional[float] = None
    beta: float = 1.0
    # sizes
    N: int = pydantic.Field(8, ge=0)
    N_grid: list[int] = [1024, 2048, 4096, 8192]
    replicas: int = pydantic.Field(1000, ge=1)
    samples: int = pydantic.Field(100, ge=1)
    environments: int = pydantic.Field(20, ge=1)
    # solver caps and cutoffs
    ell: int = pydantic.Field(8, ge=0)
    m: int = pydantic.Field(8, ge=0)
    q: float = pydantic.Field(8.0, gt=0)
    K: float = pydantic.Field(6.0, gt=0)
    eps: Optional[float] = pydantic.Field(None, ge=0)
    r: float = pydantic.Field(5.0, gt=0)
    B: float = pydantic.Field(1.0, ge=0)
    R_cut: float = 10.0
    levels: int = pydantic.Field(1, ge=1)
    k: int = pydantic.Field(1, ge=1)
    kmax: int = pydantic.Field(6, ge=1)
    c: Optional[float] = None
    # shapes and modes
    x: list[float] = [1.0, 0.0]
    points: list[list[float]] = [[1.0, 0.0]]
    t_grid: list[float] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    beta_grid: list[float] = [2.0 ** j for j in range(-10, 3)]
    kind: str = "continuum"
    mode: str = "mc"
    variant: str = "gaussian"
    proposal: str = "plain"
    restriction: Optional[str] = None  # "le:m" or "between:a:b"

    def params(self) -> ModelParams:
        return ModelParams(self.d, self.alpha, self.gamma, self.beta_hat, self.h or 0.0)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.model_dump(), sort_keys=True).encode()).hexdigest()


class RunRecord(pydantic.BaseModel):
    """One append-only line of the run log."""

    config_hash: str
    config: dict
    version: str
    started: str
    finished: str
    outputs: dict  # path -> sha256
    diagnostics: dict


# ------------------------------------------------------------ handlers

Result = tuple[list[dict], dict]
HANDLERS: dict[tuple[str, str], Callable[[ExperimentConfig], Result]] = {}


def handler(group: str, action: str):
    def register(fn):
        HANDLERS[(group, action)] = fn
        return fn
    return register


def _env(cfg: ExperimentConfig) -> LatticeEnvironment:
    return LatticeEnvironment(cfg.d, cfg.alpha, cfg.seed)


def _field(cfg: ExperimentConfig) -> float:
    if cfg.h is not None:
        return cfg.h
    return cfg.alpha / (cfg.alpha - 1) if cfg.alpha > 1 else 0.0


@handler("model", "classify")
def _model_classify(cfg):
    p = cfg.params()
    lo, hi = region_boundaries(p.alpha, p.d)
    return [dict(d=p.d, alpha=p.alpha, gamma=p.gamma, region=classify_regime(p).value,
                 xi=wandering_exponent(p), gamma_AB=lo, gamma_BC=hi)], {}


@handler("env", "sample")
def _env_sample(cfg):
    env = LatticeEnvironment(cfg.d, cfg.alpha, cfg.seed, radius=cfg.r)
    sites, vals = env.ball()
    rows = [dict({f"x{i}": int(c) for i, c in enumerate(s)}, value=float(v)) for s, v in zip(sites, vals)]
    return rows, dict(sites=len(rows))


@handler("walk", "f")
def _walk_f(cfg):
    x = np.asarray(cfg.x, dtype=np.float64)
    return [dict(x=json.dumps(cfg.x), d=len(x), f=walk.f_profile(x))], {}


@handler("walk", "green")
def _walk_green(cfg):
    x = np.asarray(cfg.x, dtype=np.int64)
    return [dict(x=json.dumps([int(c) for c in x]), d=len(x), G=walk.green_function(x, len(x)),
                 hit_probability=walk.hitting_probability_inf(x, len(x)))], {}


@handler("walk", "jn")
def _walk_jn(cfg):
    rows = []
    for n in cfg.N_grid:
        if cfg.mode == "exact":
            rows.append(dict(N=n, d=cfg.d, J=walk.overlap_sum(n, cfg.d, "exact"), stderr=0.0))
        else:
            est = walk.overlap_sum(n, cfg.d, "mc", cfg.replicas, cfg.seed)
            rows.append(dict(N=n, d=cfg.d, J=est.mean, stderr=est.stderr, replicas=cfg.replicas))
    return rows, {}


@handler("walk", "visit")
def _walk_visit(cfg):
    ests = walk.visit_probability_mc(cfg.points, cfg.N_grid, cfg.replicas, cfg.seed)
    rows = [dict(N=n, p=e.mean, stderr=e.stderr, zero_hit=e.zero_hit) for n, e in zip(cfg.N_grid, ests)]
    return rows, dict(zero_hit=any(r["zero_hit"] for r in rows))


@handler("entropy", "eval")
def _entropy_eval(cfg):
    delta = np.asarray(cfg.points, dtype=np.float64)
    d = delta.shape[1]
    return [dict(points=json.dumps(cfg.points), d=d, N=cfg.N, length=entropy.path_length(delta),
                 ent=entropy.ent(delta, d), ent_N=entropy.ent_N(delta, d, cfg.N).value,
                 hat_ent_N=entropy.hat_ent_N(delta, d, cfg.N).value)], {}


@handler("elpp", "solve")
def _elpp_solve(cfg):
    cloud = elpp.sample_cloud(cfg.m, cfg.r, cfg.d, cfg.kind, cfg.seed)
    res = elpp.elpp_exact(cloud, cfg.B, cfg.d)
    return [dict(m=cfg.m, r=cfg.r, B=cfg.B, d=cfg.d, kind=cfg.kind, k_max=res.k_max,
                 entropy_used=res.entropy_used, witness=json.dumps(res.witness.tolist()))], {}


@handler("elpp", "tail")
def _elpp_tail(cfg):
    rows = elpp.elpp_tail_experiment(cfg.m, cfg.r, cfg.B, cfg.d, range(1, cfg.kmax + 1), cfg.replicas,
                                     cfg.seed, cfg.kind, cfg.c)
    return rows, dict(zero_hit_rows=sum(r["zero_hit"] for r in rows))


@handler("elpp", "volume")
def _elpp_volume(cfg):
    v = elpp.entropy_ball_volume(cfg.k, cfg.B, cfg.d, cfg.replicas, cfg.seed)
    return [dict(k=cfg.k, B=cfg.B, d=cfg.d, mc=v.mc.mean, stderr=v.mc.stderr, geometric=v.geometric,
                 printed_formula=v.printed_formula, ratio=v.ratio_printed_to_geometric)], dict(flags=v.mc.flags)


@handler("varprob", "solve")
def _varprob_solve(cfg):
    sol = varprob.continuum_T_trunc(cfg.q, cfg.beta, cfg.ell, cfg.alpha, cfg.d, cfg.seed,
                                    "rate" if cfg.kind == "rate" else "quadratic")
    return [dict(q=cfg.q, beta=cfg.beta, ell=cfg.ell, alpha=cfg.alpha, d=cfg.d, value=sol.value,
                 energy=sol.energy, entropy=sol.entropy, method=sol.method,
                 witness=json.dumps(sol.witness.tolist()))], {}


@handler("varprob", "tail")
def _varprob_tail(cfg):
    res = varprob.tail_experiment_T(cfg.alpha, cfg.d, cfg.N, cfg.r, cfg.beta, cfg.ell, cfg.t_grid,
                                    cfg.replicas, cfg.seed, cfg.c)
    return res["rows"], dict(slope=res["slope"], exponent=res["exponent"])


@handler("varprob", "betac")
def _varprob_betac(cfg):
    rows = varprob.beta_c_estimate(cfg.alpha, cfg.d, cfg.q, cfg.ell, cfg.beta_grid, cfg.samples,
                                   cfg.seed, cfg.levels)
    return rows, dict(censored=sum(r["censored"] for r in rows),
                      below_grid=float(np.mean([r["below_grid"] for r in rows])))


@handler("varprob", "scaling")
def _varprob_scaling(cfg):
    lhs, rhs = varprob.scaling_samples(cfg.beta, cfg.alpha, cfg.d, cfg.ell, cfg.q, cfg.samples, cfg.seed)
    rows = [dict(sample=i, direct=float(a), rescaled=float(b)) for i, (a, b) in enumerate(zip(lhs, rhs))]
    return rows, dict(ks=ks_distance(lhs, rhs))


def _restriction(text):
    if text in (None, "", "none"):
        return None
    kind, *vals = text.split(":")
    if kind == "le" and len(vals) == 1:
        return ("le", int(vals[0]))
    if kind == "between" and len(vals) == 2:
        return ("between", int(vals[0]), int(vals[1]))
    raise ValidationError(f"bad restriction {text!r}", condition="restriction is le:m or between:a:b")


def _estimate_row(est: polymer.PartitionEstimate) -> dict:
    return dict(N=est.N, method=est.method, logZ=est.logZ, replicas=est.replicas, stderr=est.stderr,
                rel_stderr=est.rel_stderr, ess=est.ess, flags=";".join(est.flags))


@handler("polymer", "exact")
def _polymer_exact(cfg):
    est = polymer.partition_exact(_env(cfg), cfg.N, cfg.beta, _field(cfg))
    return [dict(_estimate_row(est), beta=cfg.beta, h=_field(cfg))], {}


@handler("polymer", "mc")
def _polymer_mc(cfg):
    est = polymer.partition_mc(_env(cfg), cfg.N, cfg.beta, _field(cfg), cfg.replicas, cfg.seed,
                               _restriction(cfg.restriction))
    return [dict(_estimate_row(est), beta=cfg.beta, h=_field(cfg))], dict(ess=est.ess, flags=est.flags)


@handler("polymer", "region-stat")
def _polymer_region(cfg):
    p = cfg.params()
    region = classify_regime(p)
    rows, diag = [], {}
    for n in cfg.N_grid:
        if region in (Region.A, Region.BOUNDARY_AB):
            stat = polymer.region_A_statistic(p, n, cfg.seed, cfg.replicas, cfg.seed)
        elif region == Region.B:
            stat = polymer.region_B_statistic(p, n, cfg.seed, cfg.replicas, cfg.seed)
        else:
            stat = polymer.region_C_statistic(p, n, cfg.seed, cfg.replicas, cfg.variant, cfg.seed)
        rows.append(dict(N=n, region=region.value, value=stat.value, normalisation=stat.normalisation,
                         logZ=stat.logZ.logZ, ess=stat.logZ.ess, flags=";".join(stat.logZ.flags),
                         **{k: v for k, v in stat.extra.items() if np.isscalar(v)}))
    diag["ess_min"] = min(r["ess"] for r in rows)
    return rows, diag


@handler("polymer", "fluct")
def _polymer_fluct(cfg):
    fit = polymer.fluctuation_exponent(cfg.params(), cfg.N_grid, cfg.environments, cfg.replicas,
                                       cfg.seed, proposal=cfg.proposal, zero_coupling=cfg.beta == 0)
    rows = [dict(N=int(n), median=float(m), ess_min=float(e))
            for n, m, e in zip(fit.N_grid, fit.medians, fit.ess_min)]
    return rows, dict(slope=fit.slope, ci=list(fit.ci), flags=fit.flags)


@handler("limits", "chi")
def _limits_chi(cfg):
    res = limits.chi_estimate(cfg.alpha, cfg.d, None, cfg.R_cut, cfg.samples, cfg.seed)
    rows = [dict(sample=i, value=float(v), tail_scale=res.tail_scale) for i, v in enumerate(res.values)]
    return rows, dict(sites=res.sites, tail_scale=res.tail_scale)


@handler("limits", "w")
def _limits_w(cfg):
    spec = limits.CompensatedIntegralSpec(cfg.alpha, cfg.d, cfg.K, cfg.eps, cfg.beta)
    rows = []
    for i in range(cfg.samples):
        s = limits.w_sample(spec, cfg.seed, i)
        rows.append(dict(sample=i, value=s.value, count=s.count, flags=";".join(s.flags), **s.channels))
    return rows, dict(eps=spec.weight_cutoff, K=spec.K)


# ----------------------------------------------------------- plumbing


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v)
    return v


def write_csv(rows: list[dict], path: Path | None, stream=None) -> str | None:
    columns: list[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is None:
        (stream or sys.stdout).write(text)
        return None
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else str(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run(config: ExperimentConfig) -> RunRecord:
    group, _, action = config.experiment.partition(" ")
    fn = HANDLERS.get((group, action))
    if fn is None:
        raise ValidationError(f"unknown experiment {config.experiment!r}",
                              condition="experiment is one of the subcommands")
    started = _now()
    rows, diagnostics = fn(config)
    out = Path(config.out) if config.out else None
    digest = write_csv(rows, out)
    record = RunRecord(config_hash=config.digest(), config=_jsonable(config.model_dump()),
                       version=__version__, started=started, finished=_now(),
                       outputs={str(out): digest} if out else {}, diagnostics=_jsonable(diagnostics))
    if out is not None:
        with open(str(out) + ".runs.jsonl", "a") as fh:
            fh.write(record.model_dump_json() + "\n")
    return record


def verify(suite: str, out: str | None = None) -> int:
    results = acceptance.run_suite(suite)
    digests = {}
    for res in results:
        print(res.line(), flush=True)
        if out:
            for name, rows in res.tables.items():
                digests[name] = write_csv(rows, Path(out) / f"{name}.csv")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else NumericalDiagnostic.exit_code


# ---------------------------------------------------------------- argv

SUBCOMMANDS = {
    "model": ["classify"], "env": ["sample"], "walk": ["f", "green", "jn", "visit"],
    "entropy": ["eval"], "elpp": ["solve", "tail", "volume"],
    "varprob": ["solve", "tail", "betac", "scaling"],
    "polymer": ["exact", "mc", "region-stat", "fluct"], "limits": ["chi", "w"],
    "verify": ["fast", "full"],
}
_LIST_KEYS = {"N_grid", "x", "points", "t_grid", "beta_grid"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ndpolymer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    groups = ap.add_subparsers(dest="group", required=True)
    for group, actions in SUBCOMMANDS.items():
        gp = groups.add_parser(group)
        acts = gp.add_subparsers(dest="action", required=True)
        for action in actions:
            sp = acts.add_parser(action)
            sp.add_argument("--config", type=Path, help="flat YAML file of config keys")
            for name in ExperimentConfig.model_fields:
                if name == "experiment":
                    continue
                helptext = "JSON list" if name in _LIST_KEYS else None
                sp.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, help=helptext)
    return ap


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config is not None:
        loaded = yaml.safe_load(args.config.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ValidationError("config must be a flat mapping", condition="flat key/value document")
        values.update(loaded)
    for name in ExperimentConfig.model_fields:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = json.loads(v) if name in _LIST_KEYS else v
    values["experiment"] = f"{args.group} {args.action}"
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.group == "verify":
            return verify(args.action, args.out)
        record = run(load_config(args))
        if record.diagnostics:
            print(json.dumps(record.diagnostics), file=sys.stderr)
        return 0
    except pydantic.ValidationError as err:
        print(f"error: invalid configuration\n{err}", file=sys.stderr)
        return ValidationError.exit_code
    except json.JSONDecodeError as err:
        print(f"error: list flags take JSON ({err})", file=sys.stderr)
        return ValidationError.exit_code
    except ValidationError as err:
        print(f"error: {err} [violated: {err.condition}]", file=sys.stderr)
        return ValidationError.exit_code
    except NumericalDiagnostic as err:
        print(f"numerical diagnostic: {err}", file=sys.stderr)
        return NumericalDiagnostic.exit_code


if __name__ == "__main__":
    sys.exit(main())
