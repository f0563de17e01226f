"""Config-driven experiments with provenance-stamped CSV output.

Every experiment splits its repetitions into fixed chunks, each with a seed
derived from the master seed and the chunk index.  Results are gathered in
chunk order, so the thread count never changes the output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import __version__
from .couplings import CouplingKind, one_step_contraction, run_coupled
from .diagnostics import (
    SampleCloud, TailConstants, binomial_stderr, linear_fit, loglog_slope, tail_bound,
    tail_radius, tail_stepsize_ok, wasserstein1,
)
from .lemma_lab import SUITES, LemmaReport, run_suite
from .lyapunov import LyapunovFunction, LyapunovParams, check_f_properties, sample_admissible
from .manifolds import Euclidean, InvalidInputError, Sphere, make_manifold
from .noise import chunk_seed, keyed_rng
from .potentials import (
    ConfigError, GaussianPotential, VonMisesFisher, estimate_dissipativity, gaussian_finite_sum,
    make_potential,
)
from .samplers import (
    EMConfig, _chunks, _map, _mean_se, adjacent_level_error_table, one_step_error_table,
    run_langevin, run_langevin_ladder, run_sgld,
)

KINDS = (
    "sample", "sgld", "one-step-error", "adjacent-level", "coupling",
    "w1-scaling", "sgld-bias", "lemma-check", "tail-check",
)
OUT_ENV = "GEOLANGEVIN_OUT"

# stream tags for per-chunk draws
INIT_TAG = 0x1417
REF_TAG = 0x2EF

_SPHERE = {"kind": "sphere", "ambient_dim": 3}
_FINITE_SUM = {"kind": "gaussian-finite-sum", "n_components": 10, "c": 1.0, "spread": 2.0, "offset_seed": 0}

DEFAULTS = {
    "sample": dict(manifold=_SPHERE, potential={"kind": "vmf", "kappa": 4.0},
                   stepsizes=[0.01], steps=1000, reps=256),
    "sgld": dict(manifold={"kind": "euclidean", "ambient_dim": 4}, potential=_FINITE_SUM,
                 stepsizes=[0.01], steps=1000, reps=256),
    "one-step-error": dict(manifold=_SPHERE, potential={"kind": "vmf", "kappa": 1.0},
                           stepsizes=[2.0**-j for j in (6, 5, 4, 3, 2)], levels=[9], reps=2000,
                           params={"x0": [0.0, 0.0, 1.0], "chunk": 250}),
    "adjacent-level": dict(manifold=_SPHERE, potential={"kind": "vmf", "kappa": 1.0},
                           horizon=1.0, levels=[2, 3, 4, 5, 6, 7, 8], reps=1000,
                           params={"x0": [0.0, 0.0, 1.0], "chunk": 250}),
    "coupling": dict(manifold={"kind": "euclidean", "ambient_dim": 2}, potential={"kind": "gaussian", "c": 1.0},
                     stepsizes=[0.05], steps=100, reps=16,
                     params={"variant": "synchronous", "epsilon": 1e-6, "init": "probe",
                             "lyapunov": {"L": 1.0, "R": 1.0, "epsilon": 0.0}, "dissipativity_pairs": 1000}),
    "w1-scaling": dict(manifold=_SPHERE, potential={"kind": "vmf", "kappa": 4.0},
                       stepsizes=[2.0**-j for j in (8, 7, 6, 5, 4)], horizon=8.0, reps=512,
                       params={"plateau": 2.0**-10, "samples": 512, "chunk": 8}),
    "sgld-bias": dict(manifold={"kind": "euclidean", "ambient_dim": 4}, potential=_FINITE_SUM,
                      stepsizes=[2.0**-j for j in (7, 6, 5, 4, 3)], horizon=16.0, reps=2000,
                      params={"chunk": 500}),
    "lemma-check": dict(manifold=_SPHERE, potential={"kind": "zero"}, reps=1000,
                        params={"suite": "triangle"}),
    "tail-check": dict(manifold={"kind": "euclidean", "ambient_dim": 2}, potential={"kind": "gaussian", "c": 1.0},
                       stepsizes=[0.01], steps=10000, reps=500, params={"level": 0.01, "chunk": 100}),
}


@dataclass
class ExperimentConfig:
    kind: str
    manifold: dict = field(default_factory=dict)
    potential: dict = field(default_factory=dict)
    stepsizes: list = field(default_factory=list)
    steps: int | None = None
    horizon: float | None = None
    levels: list = field(default_factory=list)
    reps: int = 1
    seed: int = 0
    out: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not isinstance(self.manifold, dict) or "kind" not in self.manifold:
            raise ConfigError("manifold must be a mapping with a 'kind'")
        if not isinstance(self.potential, dict):
            raise ConfigError("potential must be a mapping")
        if any(not _positive(d) for d in self.stepsizes):
            raise ConfigError("stepsizes must be positive")
        if self.steps is not None and (not isinstance(self.steps, int) or self.steps < 1):
            raise ConfigError("steps must be a positive integer")
        if self.horizon is not None and not _positive(self.horizon):
            raise ConfigError("horizon must be positive")
        if not isinstance(self.reps, int) or self.reps < 1:
            raise ConfigError("reps must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if any(not isinstance(i, int) or i < 0 for i in self.levels):
            raise ConfigError("levels must be non-negative integers")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "kind" not in d:
            raise ConfigError("config needs an experiment 'kind'")
        return cls(**d)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


def resolve(kind, overrides=None) -> ExperimentConfig:
    """Defaults for ``kind`` with ``overrides`` applied; mappings merge one
    level deep, everything else is replaced."""
    overrides = dict(overrides or {})
    kind = overrides.pop("kind", kind)
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    base = json.loads(json.dumps(DEFAULTS[kind]))
    for k, v in overrides.items():
        if k in ("params", "potential", "manifold") and isinstance(v, dict) and isinstance(base.get(k), dict):
            if k != "params" and v.get("kind", base[k].get("kind")) != base[k].get("kind"):
                base[k] = dict(v)
            else:
                base[k] = {**base[k], **v}
        else:
            base[k] = v
    return ExperimentConfig.from_dict({"kind": kind, **base})


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


# -- building blocks ------------------------------------------------------------

def _manifold(cfg):
    spec = cfg.manifold
    try:
        return make_manifold(spec["kind"], int(spec.get("ambient_dim", 3)))
    except InvalidInputError as e:
        raise ConfigError(str(e)) from None


def _potential(cfg, m):
    spec = cfg.potential
    if spec.get("kind") == "gaussian-finite-sum":
        if not isinstance(m, Euclidean):
            raise ConfigError("gaussian-finite-sum needs a euclidean manifold")
        c = float(spec.get("c", 1.0))
        if not c > 0:
            raise ConfigError("c must be > 0")
        return gaussian_finite_sum(m, int(spec.get("n_components", 10)), c=c,
                                   spread=float(spec.get("spread", 1.0)),
                                   rng=np.random.default_rng(int(spec.get("offset_seed", 0))))
    return make_potential(m, spec)


def _target_sampler(p):
    """Exact sampler for the target, or None."""
    if isinstance(p, VonMisesFisher):
        return p.sample
    if isinstance(p, GaussianPotential) and p.c > 0:
        return lambda rng, n: p.center + rng.standard_normal((n, p.manifold.ambient_dim)) / math.sqrt(p.c)
    return None


def _one(cfg, name):
    v = getattr(cfg, name)
    if name == "stepsizes":
        if len(v) != 1:
            raise ConfigError(f"{cfg.kind} needs exactly one stepsize")
        return float(v[0])
    if v is None:
        raise ConfigError(f"{cfg.kind} needs '{name}'")
    return v


def _point(m, v):
    try:
        return m.check_point(np.asarray(v, dtype=float))
    except (InvalidInputError, ValueError) as e:
        raise ConfigError(f"invalid point {v}: {e}") from None


@dataclass
class Result:
    columns: list
    rows: list
    derived: dict = field(default_factory=dict)


# -- runners --------------------------------------------------------------------

def _initial_points(cfg, m, p, n, seed):
    x0 = cfg.params.get("x0")
    if x0 is not None:
        return np.broadcast_to(_point(m, x0), (n, m.ambient_dim)).copy()
    rng = keyed_rng(seed, INIT_TAG)
    return m.random_point(rng, n) if isinstance(m, Sphere) else np.broadcast_to(m.origin(), (n, m.ambient_dim)).copy()


def _coord_columns(m):
    return ["chain"] + [f"x{i}" for i in range(m.ambient_dim)]


def run_sample(cfg, threads=1):
    m = _manifold(cfg)
    p = _potential(cfg, m)
    p = getattr(p, "mean_potential", p)
    delta, K = _one(cfg, "stepsizes"), _one(cfg, "steps")
    x0 = _initial_points(cfg, m, p, cfg.reps, cfg.seed)
    em = EMConfig(delta, K, cfg.seed, x0, record_every=K,
                  allow_large_step=bool(cfg.params.get("allow_large_step", False)))
    fin = run_langevin(em, p).final
    return Result(_coord_columns(m), [[i, *row] for i, row in enumerate(fin)])


def run_sgld_experiment(cfg, threads=1):
    m = _manifold(cfg)
    oracle = _potential(cfg, m)
    if not hasattr(oracle, "components"):
        raise ConfigError("sgld needs a finite-sum potential (gaussian-finite-sum)")
    delta, K = _one(cfg, "stepsizes"), _one(cfg, "steps")
    x0 = _initial_points(cfg, m, oracle, cfg.reps, cfg.seed)
    em = EMConfig(delta, K, cfg.seed, x0, record_every=K,
                  allow_large_step=bool(cfg.params.get("allow_large_step", False)))
    fin = run_sgld(em, oracle).final
    return Result(_coord_columns(m), [[i, *row] for i, row in enumerate(fin)], {"sigma": oracle.sigma})


def run_one_step(cfg, threads=1):
    m = _manifold(cfg)
    p = _potential(cfg, m)
    x0 = _point(m, cfg.params.get("x0", m.origin()))
    i_max = cfg.levels[0] if cfg.levels else 9
    rows = one_step_error_table(p, x0, [float(t) for t in cfg.stepsizes], i_max=i_max, reps=cfg.reps,
                                seed=cfg.seed, chunk=int(cfg.params.get("chunk", 250)), threads=threads)
    cols = ["T", "mean_sq_error", "stderr", "reps"]
    return Result(cols, [[r[c] for c in cols] for r in rows], {"i_max": i_max})


def run_adjacent(cfg, threads=1):
    m = _manifold(cfg)
    p = _potential(cfg, m)
    x0 = _point(m, cfg.params.get("x0", m.origin()))
    if not cfg.levels:
        raise ConfigError("adjacent-level needs 'levels'")
    rows = adjacent_level_error_table(p, x0, _one(cfg, "horizon"), cfg.levels, reps=cfg.reps, seed=cfg.seed,
                                      chunk=int(cfg.params.get("chunk", 250)), threads=threads)
    cols = ["level", "mean_sup_sq", "stderr", "reps"]
    return Result(cols, [[r[c] for c in cols] for r in rows])


def _lyapunov_map(spec):
    if not spec:
        return None, None
    try:
        lp = LyapunovParams(float(spec["L"]), float(spec["R"]), float(spec.get("epsilon", 0.0)))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid lyapunov parameters: {e}") from None
    lf = LyapunovFunction(lp)
    return lp, lf.f


def run_coupling(cfg, threads=1):
    """Coupled pairs; the derived record holds the constants the summary
    compares against (the exact Euclidean ratio, or the curvature bound on
    the one-step contraction of E d^2)."""
    m = _manifold(cfg)
    p = _potential(cfg, m)
    delta, K = _one(cfg, "stepsizes"), _one(cfg, "steps")
    pr = cfg.params
    try:
        kind = CouplingKind(pr.get("variant", "synchronous"), float(pr.get("epsilon", 1e-6)))
    except InvalidInputError as e:
        raise ConfigError(str(e)) from None
    init = pr.get("init", "probe")
    rng = keyed_rng(cfg.seed, INIT_TAG)
    if init == "target":
        draw = _target_sampler(p)
        if draw is None:
            raise ConfigError("init 'target' needs a potential with an exact sampler")
    elif init == "probe":
        draw = p.probe_points
    else:
        raise ConfigError(f"unknown coupling init {init!r}")
    x0, y0 = draw(rng, cfg.reps), draw(rng, cfg.reps)
    _, f = _lyapunov_map(pr.get("lyapunov"))
    em = EMConfig(delta, K, cfg.seed, x0)
    series = run_coupled(kind, em, p, x0, y0, lyapunov=f)
    derived = {"nonunique": series.nonunique, "L_Ric": m.curvature.L_Ric, "delta": delta}
    if isinstance(p, GaussianPotential):
        derived["expected_ratio"] = 1.0 - delta * p.c / 2.0
    if isinstance(m, Sphere) and isinstance(p, VonMisesFisher):
        draw = _target_sampler(p)
        est = estimate_dissipativity(p, int(pr.get("dissipativity_pairs", 1000)), keyed_rng(cfg.seed, REF_TAG),
                                     sampler=draw)
        if est.m is not None:
            derived["m_hat"] = est.m
            derived["bound"] = 1.0 - 0.5 * delta * (est.m - m.curvature.L_Ric / 2.0)
    lyap = series.lyapunov
    rows = []
    for i in range(cfg.reps):
        for k in range(K + 1):
            rows.append([i, k, float(series.times[k]), float(series.distance[k, i]),
                         float(lyap[k, i]) if lyap is not None else float("nan")])
    return Result(["pair_id", "k", "t", "distance", "lyapunov_value"], rows, derived)


def w1_ladder_chunk(p, deltas, horizon, n, size, seed):
    """W1 to an exact reference cloud for ``size`` repetitions; rows are
    repetitions, columns follow ``deltas``."""
    m = p.manifold
    x0 = p.sample(keyed_rng(seed, INIT_TAG), size * n).reshape(size, n, m.ambient_dim)
    ref = p.sample(keyed_rng(seed, REF_TAG), size * n).reshape(size, n, m.ambient_dim)
    fin = run_langevin_ladder(p, x0, deltas, horizon, seed)
    out = np.empty((size, len(deltas)))
    for b in range(size):
        R = SampleCloud(m, ref[b])
        for j, d in enumerate(deltas):
            out[b, j] = wasserstein1(SampleCloud(m, fin[d][b]), R).value
    return out


def run_w1_scaling(cfg, threads=1):
    m = _manifold(cfg)
    p = _potential(cfg, m)
    if _target_sampler(p) is None or not hasattr(p, "sample"):
        raise ConfigError("w1-scaling needs a target with an exact sampler (vmf)")
    plateau = float(cfg.params.get("plateau", 2.0**-10))
    deltas = sorted({float(d) for d in cfg.stepsizes} | {plateau})
    if deltas[0] != plateau:
        raise ConfigError("the plateau stepsize must be the smallest")
    horizon = float(_one(cfg, "horizon"))
    n = int(cfg.params.get("samples", 512))
    jobs = _chunks(cfg.reps, int(cfg.params.get("chunk", 8)))

    def work(job):
        c = jobs.index(job)
        return w1_ladder_chunk(p, deltas, horizon, n, job[1], chunk_seed(cfg.seed, c))

    W = np.concatenate(_map(work, jobs, threads))
    ex = W - W[:, :1]
    rows = []
    for j, d in enumerate(deltas):
        w, wse = _mean_se(W[:, j])
        e, ese = _mean_se(ex[:, j]) if j else (0.0, 0.0)
        # paired difference to the next smaller stepsize (monotonicity)
        s, sse = _mean_se(W[:, j] - W[:, j - 1]) if j else (0.0, 0.0)
        rows.append([d, int(math.ceil(horizon / d - 1e-9)), w, wse, e, ese, s, sse, cfg.reps])
    cols = ["delta", "K", "w1_mean", "w1_stderr", "excess_mean", "excess_stderr",
            "step_diff_mean", "step_diff_stderr", "reps"]
    return Result(cols, rows, {"plateau": plateau, "samples": n})


def sgld_gap_chunk(oracle, delta, K, size, seed):
    """|x_sgld - x_exact|^2 at step K; both chains read the same Gaussian
    stream, so only the gradient noise separates them."""
    m = oracle.manifold
    x0 = np.broadcast_to(m.origin(), (size, m.ambient_dim)).copy()
    exact = run_langevin(EMConfig(delta, K, seed, x0, record_every=K), oracle.mean_potential).final
    sg = run_sgld(EMConfig(delta, K, seed, x0, record_every=K), oracle).final
    return m.distance(sg, exact) ** 2


def run_sgld_bias(cfg, threads=1):
    m = _manifold(cfg)
    oracle = _potential(cfg, m)
    if not hasattr(oracle, "mean_potential"):
        raise ConfigError("sgld-bias needs a gaussian-finite-sum potential")
    horizon = float(_one(cfg, "horizon"))
    deltas = sorted(float(d) for d in cfg.stepsizes)
    jobs = [(j, c, size) for j in range(len(deltas))
            for c, (_, size) in enumerate(_chunks(cfg.reps, int(cfg.params.get("chunk", 500))))]

    def work(job):
        j, c, size = job
        K = int(math.ceil(horizon / deltas[j] - 1e-9))
        return sgld_gap_chunk(oracle, deltas[j], K, size, chunk_seed(cfg.seed, j, c))

    res = _map(work, jobs, threads)
    rows = []
    for j, d in enumerate(deltas):
        v = np.concatenate([r for r, job in zip(res, jobs) if job[0] == j])
        mean, se = _mean_se(v)
        rows.append([d, int(math.ceil(horizon / d - 1e-9)), mean, se, cfg.reps])
    return Result(["delta", "K", "gap_mean", "gap_stderr", "reps"], rows, {"sigma": oracle.sigma})


def lyapunov_report(n_trials, seed):
    rep = LemmaReport("lyapunov", n_trials)
    rng = np.random.default_rng(seed)
    for _ in range(n_trials):
        r = check_f_properties(sample_admissible(rng))
        for k, s in r.slack.items():
            rep.add(k, s, 0.0)
    return rep


def run_lemma_check(cfg, threads=1):
    suite = cfg.params.get("suite", "triangle")
    names = list(SUITES) + ["lyapunov"] if suite == "all" else [suite]
    for s in names:
        if s not in SUITES and s != "lyapunov":
            raise ConfigError(f"unknown lemma suite {s!r}")
    m = _manifold(cfg)

    def work(i):
        s = names[i]
        if s == "lyapunov":
            return lyapunov_report(cfg.reps, chunk_seed(cfg.seed, i))
        return run_suite(s, m, cfg.reps, chunk_seed(cfg.seed, i))

    rows = []
    for rep in _map(work, range(len(names)), threads):
        for r in rep.rows():
            rows.append([r["suite"], repr(m), r["bound"], r["trials"], r["worst_slack"], r["violations"]])
    return Result(["suite", "manifold", "bound", "trials", "worst_slack", "violations"], rows)


def tail_constants(p, oracle=None):
    """(m, L', L_R, d, sigma, R) for the Euclidean Gaussian targets: the drift
    -c x/2 points to x* with <beta, x* - x> = (c/2) |x - x*|^2 everywhere."""
    if not isinstance(p, GaussianPotential):
        raise ConfigError("tail-check needs a gaussian (or gaussian-finite-sum) potential")
    sigma = oracle.sigma if oracle is not None else 0.0
    return TailConstants(m=p.c / 2.0, lip=p.c / 2.0, L_R=0.0, dim=p.manifold.dim, sigma=sigma, R=0.0)


def _running_max_chunk(p, oracle, delta, K, size, seed, x_star):
    m = p.manifold
    x0 = np.broadcast_to(x_star, (size, m.ambient_dim)).copy()
    em = EMConfig(delta, K, seed, x0)
    traj = run_sgld(em, oracle) if oracle is not None else run_langevin(em, p)
    return np.max(m.distance(traj.points, x_star), axis=0)


def run_tail_check(cfg, threads=1):
    m = _manifold(cfg)
    obj = _potential(cfg, m)
    oracle = obj if hasattr(obj, "components") else None
    p = obj.mean_potential if oracle is not None else obj
    c = tail_constants(p, oracle)
    delta, K = _one(cfg, "stepsizes"), _one(cfg, "steps")
    level = float(cfg.params.get("level", 0.01))
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    r = float(cfg.params["radius"]) if "radius" in cfg.params else tail_radius(c, K, delta, level)
    x_star = p.stationary_point
    jobs = _chunks(cfg.reps, int(cfg.params.get("chunk", 100)))

    def work(job):
        return _running_max_chunk(p, oracle, delta, K, job[1], chunk_seed(cfg.seed, jobs.index(job)), x_star)

    mx = np.concatenate(_map(work, jobs, threads))
    frac = float(np.mean(mx >= r))
    bound = float(tail_bound(c, K, delta, r))
    row = [cfg.reps, K, delta, level, r, bound, frac, binomial_stderr(frac, cfg.reps),
           int(bool(tail_stepsize_ok(c, delta, r))), float(np.max(mx))]
    return Result(["seeds", "K", "delta", "level", "radius", "bound", "observed", "stderr",
                   "stepsize_ok", "max_distance"], [row])


RUNNERS = {
    "sample": run_sample,
    "sgld": run_sgld_experiment,
    "one-step-error": run_one_step,
    "adjacent-level": run_adjacent,
    "coupling": run_coupling,
    "w1-scaling": run_w1_scaling,
    "sgld-bias": run_sgld_bias,
    "lemma-check": run_lemma_check,
    "tail-check": run_tail_check,
}


# -- CSV ------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(d):
    return json.loads(json.dumps(d, default=float), parse_constant=lambda s: None)


def render_csv(cfg: ExperimentConfig, res: Result) -> str:
    buf = io.StringIO()
    buf.write(f"# geolangevin {__version__}\n")
    buf.write(f"# kind: {cfg.kind}\n")
    buf.write(f"# config_hash: {cfg.config_hash()}\n")
    buf.write(f"# seed: {cfg.seed}\n")
    buf.write(f"# config: {cfg.canonical_json()}\n")
    if res.derived:
        buf.write(f"# derived: {json.dumps(_json_safe(res.derived), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(res.columns)
    for row in res.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_path(cfg: ExperimentConfig, out_dir=None):
    """``out_dir`` (the --out flag) wins over the environment variable, which
    wins over the directory part of ``cfg.out``."""
    name = os.path.basename(cfg.out) if cfg.out else f"{cfg.kind}.csv"
    base = out_dir or os.environ.get(OUT_ENV)
    if base:
        return os.path.join(base, name)
    return cfg.out or name


def run(cfg: ExperimentConfig, threads=1, out_dir=None):
    """Run, write the CSV, return (path, Result)."""
    res = RUNNERS[cfg.kind](cfg, threads=threads)
    for row in res.rows:
        for v in row:
            if isinstance(v, (float, np.floating)) and not math.isfinite(v) and not (
                    cfg.kind == "coupling" and math.isnan(v)):
                raise FloatingPointError(f"non-finite value in {cfg.kind} results")
    path = output_path(cfg, out_dir)
    write_atomic(path, render_csv(cfg, res))
    return path, res


# -- reading and summarizing ----------------------------------------------------

@dataclass
class CsvData:
    meta: dict
    columns: list
    rows: list

    def column(self, name):
        i = self.columns.index(name)
        return np.array([float(r[i]) for r in self.rows])


def read_csv(path) -> CsvData:
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                if key in ("config", "derived"):
                    meta[key] = json.loads(val)
                elif val:
                    meta[key] = val
            else:
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        return CsvData(meta, [], [])
    return CsvData(meta, rows[0], rows[1:])


@dataclass
class Verdict:
    name: str
    status: str  # PASS, FAIL, NO DATA or INFO
    detail: str

    def line(self):
        return f"{self.status:<8} {self.name:<16} {self.detail}"


def _check_one_step(d):
    T, y = d.column("T"), d.column("mean_sq_error")
    s, _, r2 = loglog_slope(T, y)
    ok = s >= 2.6 and r2 >= 0.98
    return ok, f"slope={s:.3f} (>= 2.6) r2={r2:.4f} (>= 0.98)"


def _check_adjacent(d):
    lv, y = d.column("level"), d.column("mean_sup_sq")
    if np.any(y <= 0):
        return False, "non-positive mean"
    s = linear_fit(lv, np.log2(y)).slope
    return -1.4 <= s <= -0.6, f"slope={s:.3f} (in [-1.4, -0.6])"


def _check_w1(d):
    dl, ex = d.column("delta"), d.column("excess_mean")
    sd, sse = d.column("step_diff_mean"), d.column("step_diff_stderr")
    fit = dl[1:], ex[1:]
    mono = bool(np.all(sd[1:] >= -2.0 * sse[1:]))
    if np.any(fit[1] <= 0):
        return False, f"non-positive excess {fit[1].tolist()} monotone={mono}"
    s, _, r2 = loglog_slope(*fit)
    return s >= 0.35 and mono, f"slope={s:.3f} (>= 0.35) r2={r2:.3f} monotone={mono}"


def _check_sgld(d):
    dl, g = d.column("delta"), d.column("gap_mean")
    s, _, r2 = loglog_slope(dl, g)
    return s >= 0.7, f"slope={s:.3f} (>= 0.7) r2={r2:.3f}"


def _check_coupling(d):
    der = d.meta.get("derived", {})
    pid, k, dist = d.column("pair_id"), d.column("k"), d.column("distance")
    n = int(pid.max()) + 1
    D = dist.reshape(n, -1)
    notes = []
    ok = True
    if "expected_ratio" in der:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = D[:, 1:] / D[:, :-1]
        dev = float(np.nanmax(np.abs(r - der["expected_ratio"]) / der["expected_ratio"]))
        ok &= dev <= 1e-12
        notes.append(f"ratio dev={dev:.2e} (expected {der['expected_ratio']:.6g})")
    if D.shape[1] > 1:
        factor = float(np.sum(D[:, 1] ** 2) / np.sum(D[:, 0] ** 2))
        notes.append(f"E d^2 factor={factor:.5f}")
        if "bound" in der:
            ok &= factor <= der["bound"]
            notes.append(f"bound={der['bound']:.5f}")
    return ok, " ".join(notes)


def _check_lemma(d):
    v = d.column("violations")
    suites = sorted({r[0] for r in d.rows})
    return bool(np.all(v == 0)), f"suites={','.join(suites)} violations={int(v.sum())}"


def _check_tail(d):
    obs, b, se = d.column("observed")[0], d.column("bound")[0], d.column("stderr")[0]
    return obs <= b + 3 * se, f"observed={obs:.4f} bound={b:.4f} stderr={se:.4f}"


CHECKS = {
    "one-step-error": _check_one_step,
    "adjacent-level": _check_adjacent,
    "w1-scaling": _check_w1,
    "sgld-bias": _check_sgld,
    "coupling": _check_coupling,
    "lemma-check": _check_lemma,
    "tail-check": _check_tail,
}


def summarize(paths):
    out = []
    for path in paths:
        name = os.path.basename(path)
        try:
            d = read_csv(path)
        except OSError as e:
            out.append(Verdict(name, "NO DATA", f"unreadable: {e.strerror}"))
            continue
        kind = d.meta.get("kind")
        if not d.rows:
            out.append(Verdict(name, "NO DATA", "no data rows"))
            continue
        check = CHECKS.get(kind)
        if check is None:
            out.append(Verdict(name, "INFO", f"{kind or 'unknown kind'}: {len(d.rows)} rows, no criterion"))
            continue
        try:
            ok, detail = check(d)
        except (ValueError, KeyError, InvalidInputError) as e:
            out.append(Verdict(name, "NO DATA", f"cannot evaluate: {e}"))
            continue
        out.append(Verdict(f"{name}", "PASS" if ok else "FAIL", f"[{kind}] {detail}"))
    return out
