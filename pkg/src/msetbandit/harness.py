"""Repeated policy-versus-environment simulations with checkpointed pseudo-regret.

Each (policy, repetition) pair is an independent task with its own
counter-based random streams derived from the master seed, so the traces
do not depend on how many workers run them or in which order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np

from . import baselines, core, environments
from .exceptions import ConfigError

FTPL, COMBUCB, THOMPSON, FTRL, UNIFORM, ORACLE = range(6)
POLICIES = {
    "ftpl": (FTPL, None),
    "combucb": (COMBUCB, None),
    "thompson": (THOMPSON, None),
    "exp2": (FTRL, "shannon"),
    "logbarrier": (FTRL, "log_barrier"),
    "hybrid": (FTRL, "hybrid"),
    "uniform": (UNIFORM, None),
    "oracle": (ORACLE, None),
}
PAPER_POLICIES = ("ftpl", "combucb", "thompson", "exp2", "logbarrier", "hybrid")

_POLICY_TAG = 1
_LOSS_TAG = 2
_ENV_TAG = 3

# stats slots filled by the kernel
_RESAMPLES, _TRUNCATIONS, _FLOOR_HITS, _STATUS = range(4)
_STATUS_OK, _STATUS_SAFETY, _STATUS_SOLVER = 0, 1, 2


def stream(*key):
    """Philox generator keyed by a tuple of nonnegative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def _label_key(label):
    return zlib.crc32(label.encode("utf-8"))


def policy_stream(master_seed, policy_id, rep):
    return stream(master_seed, _POLICY_TAG, _label_key(policy_id), rep)


def loss_stream(master_seed, rep):
    return stream(master_seed, _LOSS_TAG, rep)


def env_stream(env_seed):
    return stream(env_seed, _ENV_TAG)


def log_checkpoints(horizon, count=200, extra=()):
    """``count`` strictly increasing, roughly log-spaced rounds ending at ``horizon``.

    Rounds listed in ``extra`` are merged in.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if count < 1:
        raise ConfigError("checkpoint count must be >= 1")
    if count >= horizon:
        grid = list(range(1, horizon + 1))
    else:
        grid = []
        prev = 0
        for k in range(count):
            target = math.exp(math.log(horizon) * k / (count - 1)) if count > 1 else horizon
            c = max(prev + 1, int(round(target)))
            c = min(c, horizon - (count - 1 - k))
            grid.append(c)
            prev = c
    for e in extra:
        e = int(e)
        if not 1 <= e <= horizon:
            raise ConfigError(f"extra checkpoint {e} outside [1, {horizon}]")
    return np.array(sorted(set(grid) | {int(e) for e in extra}), dtype=np.int64)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    name: str
    id: str
    rate_scale: float = 1.0
    cap: int | None = None

    @property
    def code(self):
        return POLICIES[self.name][0]

    @property
    def regularizer(self):
        return POLICIES[self.name][1]


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str
    d: int
    m: int
    delta: float = 0.1
    growth: float = 1.6
    losses: str = "fresh"
    seed: int = 0
    means_file: str | None = None
    loss_file: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSpec
    policies: tuple
    horizon: int
    repetitions: int = 20
    master_seed: int = 0
    checkpoints: int = 200
    extra_checkpoints: tuple = ()

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        try:
            return _parse_config(doc, base_dir)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def checkpoint_grid(self):
        return log_checkpoints(self.horizon, self.checkpoints, self.extra_checkpoints)

    def to_dict(self):
        env = self.environment
        return {
            "environment": {k: getattr(env, k) for k in env.__dataclass_fields__},
            "policies": [
                {"name": p.name, "id": p.id, "rate_scale": p.rate_scale, "cap": p.cap}
                for p in self.policies
            ],
            "run": {
                "horizon": self.horizon,
                "repetitions": self.repetitions,
                "master_seed": self.master_seed,
                "checkpoints": self.checkpoints,
                "extra_checkpoints": list(self.extra_checkpoints),
            },
        }


def _parse_config(doc, base_dir):
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for section in ("environment", "policies", "run"):
        if section not in doc:
            raise ConfigError(f"missing section {section!r}")
    run = doc["run"]
    horizon = int(run["horizon"])
    if horizon < 1:
        raise ConfigError("run.horizon must be >= 1")
    reps = int(run.get("repetitions", 20))
    if reps < 1:
        raise ConfigError("run.repetitions must be >= 1")
    seed = int(run.get("master_seed", 0))
    if seed < 0:
        raise ConfigError("run.master_seed must be nonnegative")

    e = doc["environment"]
    kind = e.get("kind")
    if kind not in (environments.STOCHASTIC, environments.PHASED, environments.REPLAY):
        raise ConfigError(f"unknown environment kind {kind!r}")
    default_losses = "fixed" if kind == environments.PHASED else "fresh"

    def resolve(p):
        if p is None or base_dir is None or os.path.isabs(p):
            return p
        return str(Path(base_dir) / p)

    env = EnvironmentSpec(
        kind=kind,
        d=int(e["d"]),
        m=int(e["m"]),
        delta=float(e.get("delta", 0.1)),
        growth=float(e.get("growth", 1.6)),
        losses=e.get("losses", default_losses),
        seed=int(e.get("seed", seed)),
        means_file=resolve(e.get("means_file")),
        loss_file=resolve(e.get("loss_file")),
    )
    if env.losses not in ("fresh", "fixed"):
        raise ConfigError("environment.losses must be 'fresh' or 'fixed'")
    if kind == environments.REPLAY and env.means_file is None:
        raise ConfigError("replay environments need means_file")

    policies = []
    seen = set()
    if not isinstance(doc["policies"], list) or not doc["policies"]:
        raise ConfigError("policies must be a nonempty list")
    for p in doc["policies"]:
        if isinstance(p, str):
            p = {"name": p}
        name = p.get("name")
        if name not in POLICIES:
            raise ConfigError(f"unknown policy {name!r}")
        pid = str(p.get("id", name))
        if pid in seen:
            raise ConfigError(f"duplicate policy id {pid!r}")
        seen.add(pid)
        rate = float(p.get("rate_scale", 1.0))
        if not rate > 0:
            raise ConfigError("rate_scale must be positive")
        cap = p.get("cap")
        if cap is not None and int(cap) < 1:
            raise ConfigError("cap must be a positive integer or null")
        policies.append(PolicySpec(name, pid, rate, None if cap is None else int(cap)))

    cfg = ExperimentConfig(
        environment=env,
        policies=tuple(policies),
        horizon=horizon,
        repetitions=reps,
        master_seed=seed,
        checkpoints=int(run.get("checkpoints", 200)),
        extra_checkpoints=tuple(int(x) for x in run.get("extra_checkpoints", ())),
    )
    cfg.checkpoint_grid()
    build_environment(env, horizon)  # surfaces parameter errors early
    return cfg


def build_environment(spec, horizon):
    try:
        if spec.kind == environments.STOCHASTIC:
            return environments.make_stochastic(spec.d, spec.m, spec.delta, horizon=horizon)
        if spec.kind == environments.PHASED:
            return environments.make_phased_adversarial(spec.d, spec.m, spec.delta,
                                                        spec.growth, horizon)
        means = np.load(spec.means_file)
        env = environments.make_replay(means, spec.m)
        if env.horizon < horizon:
            raise ConfigError("replay means are shorter than the horizon")
        return env
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid environment: {exc}") from exc


@lru_cache(maxsize=4)
def _environment_arrays(spec, horizon):
    """Mean table, row index, fixed losses and optimal action for a run."""
    env = build_environment(spec, horizon)
    if spec.losses == "fixed":
        if spec.loss_file is not None:
            fixed = environments.load_loss_matrix(spec.loss_file)
            if fixed.shape[1] != env.d or fixed.shape[0] < horizon:
                raise ConfigError("loss file does not match d/horizon")
            fixed = fixed[:horizon]
        else:
            fixed = environments.realize_losses(env, horizon, env_stream(spec.seed))
    else:
        fixed = np.zeros((0, env.d), dtype=np.uint8)
    a_star = environments.best_fixed_action(env, horizon)
    return env, fixed, a_star


# ---------------------------------------------------------------------------
# simulation kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _simulate(code, rng, loss_rng, table, rows, fixed, a_star, checkpoints,
              m, rate_scale, cap, reg, wmin, regret_out, actions_out, stats):
    d = table.shape[1]
    n = checkpoints[checkpoints.size - 1]
    n_rows = table.shape[0]
    opt = np.zeros(n_rows)
    for r in range(n_rows):
        for s in range(m):
            opt[r] += table[r, a_star[s]]
    use_fixed = fixed.shape[0] > 0
    record = actions_out.shape[0]

    losses = np.empty(d)
    keys = np.empty(d)
    idx = np.empty(d, dtype=np.int64)
    action = np.empty(m, dtype=np.int64)
    counts = np.empty(m, dtype=np.int64)
    lhat = np.zeros(d)
    pulls = np.zeros(d, dtype=np.int64)
    means = np.zeros(d)
    ones = np.zeros(d)
    zeros = np.zeros(d)
    w = np.empty(d)
    mu = 0.0

    acc = 0.0
    comp = 0.0
    ci = 0
    for t in range(1, n + 1):
        row = rows[t - 1]
        if use_fixed:
            for j in range(d):
                losses[j] = fixed[t - 1, j]
        else:
            for j in range(d):
                losses[j] = 1.0 if loss_rng.random() < table[row, j] else 0.0

        if code == 0:
            eta = rate_scale / math.sqrt(t)
            tr = core._ftpl_step(rng, lhat, eta, m, losses, cap, keys, idx, action, counts)
            if tr < 0:
                stats[3] = 1
                return
            stats[1] += tr
            for s in range(m):
                stats[0] += counts[s]
        elif code == 1:
            baselines._combucb_step(t, m, pulls, means, losses, keys, idx, action)
        elif code == 2:
            baselines._thompson_step(rng, m, ones, zeros, losses, keys, idx, action)
        elif code == 3:
            eta = rate_scale / math.sqrt(t)
            mu, hits = baselines._ftrl_step(rng, reg, lhat, eta, m, wmin, losses, w, mu, action)
            if hits < 0:
                stats[3] = 2
                return
            stats[2] += hits
        elif code == 4:
            for j in range(d):
                idx[j] = j
            for j in range(m):
                k = j + int(rng.random() * (d - j))
                tmp = idx[j]
                idx[j] = idx[k]
                idx[k] = tmp
            for j in range(m):
                action[j] = idx[j]
            action.sort()
        else:
            for j in range(m):
                action[j] = a_star[j]

        played = 0.0
        for s in range(m):
            played += table[row, action[s]]
        inc = played - opt[row]
        # compensated summation
        y = inc - comp
        tot = acc + y
        comp = (tot - acc) - y
        acc = tot
        if t <= record:
            for s in range(m):
                actions_out[t - 1, s] = action[s]
        if t == checkpoints[ci]:
            regret_out[ci] = acc
            ci += 1


# ---------------------------------------------------------------------------
# running experiments
# ---------------------------------------------------------------------------

@dataclass
class RegretTrace:
    policy: str
    rep: int
    t: np.ndarray
    regret: np.ndarray
    stats: dict = field(default_factory=dict)
    error: str | None = None
    actions: np.ndarray | None = None


def simulate_policy(spec, env_spec, horizon, rep, master_seed, checkpoints=None,
                    record_actions=0):
    """Run one (policy, repetition) task and return its trace."""
    env, fixed, a_star = _environment_arrays(env_spec, horizon)
    if checkpoints is None:
        checkpoints = log_checkpoints(horizon)
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    regret = np.full(checkpoints.size, np.nan)
    actions = np.zeros((min(record_actions, horizon), env.m), dtype=np.int64)
    stats = np.zeros(4, dtype=np.int64)
    reg_code = baselines.REGULARIZERS.get(spec.regularizer, 0)
    _simulate(
        spec.code, policy_stream(master_seed, spec.id, rep), loss_stream(master_seed, rep),
        env.mean_table, env.row_index(horizon), fixed,
        np.array(a_star.arms, dtype=np.int64), checkpoints, env.m, spec.rate_scale,
        core._cap_code(spec.cap), reg_code, baselines.W_MIN.get(reg_code, 1e-12),
        regret, actions, stats,
    )
    error = None
    if stats[_STATUS] == _STATUS_SAFETY:
        error = "geometric resampling hit the safety limit"
    elif stats[_STATUS] == _STATUS_SOLVER:
        error = "capped-simplex multiplier could not be bracketed"
    return RegretTrace(
        policy=spec.id,
        rep=rep,
        t=checkpoints,
        regret=regret,
        stats={
            "resamples": int(stats[_RESAMPLES]),
            "truncations": int(stats[_TRUNCATIONS]),
            "floor_hits": int(stats[_FLOOR_HITS]),
        },
        error=error,
        actions=actions if record_actions else None,
    )


def _run_task(args):
    config, p_index, rep, record = args
    spec = config.policies[p_index]
    try:
        return simulate_policy(spec, config.environment, config.horizon, rep,
                               config.master_seed, config.checkpoint_grid(), record)
    except Exception as exc:  # one broken trace must not sink the others
        grid = config.checkpoint_grid()
        return RegretTrace(spec.id, rep, grid, np.full(grid.size, np.nan),
                           error=f"{type(exc).__name__}: {exc}")


def worker_count(requested=None):
    n = requested if requested is not None else os.cpu_count() or 1
    cap = os.environ.get("MSET_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_experiment(config, workers=None, record_actions=0):
    """All (policy, repetition) traces, ordered by policy then repetition."""
    tasks = [
        (config, p, rep, record_actions)
        for p in range(len(config.policies))
        for rep in range(config.repetitions)
    ]
    n = worker_count(workers)
    if n == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_task, tasks))


@dataclass
class Summary:
    t: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    se: np.ndarray
    reps: int


def aggregate(traces):
    """Pointwise mean, SD and SE across repetitions for each policy.

    SD uses ``ddof=1`` when there are at least two repetitions.
    """
    groups = {}
    for tr in traces:
        if tr.error is not None:
            continue
        groups.setdefault(tr.policy, []).append(tr)
    out = {}
    for policy, group in groups.items():
        grid = group[0].t
        for tr in group[1:]:
            if tr.t.shape != grid.shape or (tr.t != grid).any():
                raise ValueError(f"traces of {policy!r} use different checkpoint grids")
        vals = np.vstack([tr.regret for tr in group])
        r = vals.shape[0]
        mean = vals.mean(axis=0)
        sd = vals.std(axis=0, ddof=1) if r > 1 else np.zeros_like(mean)
        out[policy] = Summary(grid.copy(), mean, sd, sd / math.sqrt(r), r)
    return out


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    intercept: float
    r_squared: float
    points: int


def growth_fit(t, regret, model, decades=2.0, min_points=5):
    """Least-squares fit of regret against ``log t`` or ``sqrt t``.

    Only checkpoints in the last ``decades`` decades are used.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(regret, dtype=float)
    if model == "log":
        f = np.log
    elif model == "sqrt":
        f = np.sqrt
    else:
        raise ValueError(f"unknown growth model {model!r}")
    window = t >= t.max() / 10.0**decades
    if window.sum() < min_points:
        raise ValueError(f"need at least {min_points} checkpoints in the fit window")
    x = f(t[window])
    y = y[window]
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return GrowthFit(float(slope), float(intercept), float(r2), int(window.sum()))


def value_at(summary_t, values, t):
    """Value of a trace at checkpoint ``t`` (which must be on the grid)."""
    hit = np.nonzero(np.asarray(summary_t) == t)[0]
    if hit.size == 0:
        raise KeyError(f"round {t} is not a checkpoint")
    return float(np.asarray(values)[hit[0]])


# ---------------------------------------------------------------------------
# CSV files
# ---------------------------------------------------------------------------

def _fmt(x):
    # shortest round-trip repr, never locale dependent
    return repr(float(x))


def write_traces_csv(path, traces):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "rep", "t", "cum_pseudo_regret"])
        for tr in traces:
            if tr.error is not None:
                continue
            for t, r in zip(tr.t, tr.regret):
                w.writerow([tr.policy, tr.rep, int(t), _fmt(r)])


def read_traces_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["policy", "rep", "t", "cum_pseudo_regret"]:
            raise ValueError("unexpected traces.csv header")
        for row in reader:
            key = (row["policy"], int(row["rep"]))
            rows.setdefault(key, []).append((int(row["t"]), float(row["cum_pseudo_regret"])))
    out = []
    for (policy, rep), pts in rows.items():
        t, r = zip(*pts)
        out.append(RegretTrace(policy, rep, np.array(t, dtype=np.int64), np.array(r)))
    return out


def write_summary_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "t", "mean", "sd", "se"])
        for policy, s in summaries.items():
            for i in range(s.t.size):
                w.writerow([policy, int(s.t[i]), _fmt(s.mean[i]), _fmt(s.sd[i]), _fmt(s.se[i])])


def read_summary_csv(path):
    cols = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["policy", "t", "mean", "sd", "se"]:
            raise ValueError("unexpected summary.csv header")
        for row in reader:
            cols.setdefault(row["policy"], []).append(
                (int(row["t"]), float(row["mean"]), float(row["sd"]), float(row["se"]))
            )
    out = {}
    for policy, pts in cols.items():
        t, mean, sd, se = (np.array(c) for c in zip(*pts))
        out[policy] = Summary(t.astype(np.int64), mean, sd, se, 0)
    return out
