"""Monte-Carlo harness: repeated active-learning trials with per-step metrics.

A trial starts from the prior over a (per-trial shuffled) hypothesis space,
then for ``num_steps`` steps selects a query, samples the simulated expert and
updates the posterior. One :class:`TrialRecord` is produced for the prior
(step 0) and one after every query.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .environments import DomainSpec, get_domain
from .hypotheses import (CapacityError, HypothesisSpace, NeighborGraph, build_space, load_space,
                         neighbor_graph, save_space, space_cache_key)
from .mdp import DEFAULT_TIE_TOL, Mdp, Policy, RewardFunction, solve_q, value_loss
from .oracle import ExpertOracle
from .posterior import (NoiseMode, NoiseModel, Posterior, incorrect_mass_ratio,
                        initial_posterior, map_hypothesis, update_action, update_reward)
from .strategies import (BoundParams, Stop, StrategyConfig, StrategyKind, compute_bound,
                         select_query, select_reward_query)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

CSV_HEADER = ("trial", "step", "queried_cell", "obs_kind", "obs_value", "policy_accuracy",
              "value_loss", "posterior_mass_true", "c_t_ratio", "map_correct", "wall_clock_ns")
FEEDBACK_KINDS = ("action", "reward", "mixed")
ACCURACY_TARGET = 0.9


class ConfigError(ValueError):
    """Raised for experiment configurations that fail validation."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    Noise values follow ``noise_mode``: in aggregated mode ``beta_star`` and
    ``beta_hat`` are probabilities of the wrong-action *set*; in per-action
    mode they are per wrong action. ``gamma_star``/``gamma_hat`` follow from
    the normalisation of the chosen mode.
    """

    domain: str = "random-10x5"
    strategy: str = "gbs_v2"
    c_hat: float | None = None
    iqbc_weighted: bool = True
    feedback: str = "action"
    action_fraction: float = 0.5
    num_trials: int = 200
    num_steps: int = 100
    pool_size: int = 500
    pool_seed: int | None = None
    noise_mode: str = "aggregated"
    beta_star: float = 0.1
    beta_hat: float = 0.1
    sigma: float = 0.0
    sigma_hat: float = 0.1
    master_seed: int = 0
    delta: float = 0.05
    output_path: str | None = None
    summary_path: str | None = None
    timing: bool = False
    workers: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            StrategyConfig(StrategyKind(self.strategy), self.c_hat, self.master_seed,
                           self.iqbc_weighted)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.feedback not in FEEDBACK_KINDS:
            raise ConfigError(f"feedback must be one of {FEEDBACK_KINDS}")
        if not 0.0 <= self.action_fraction <= 1.0:
            raise ConfigError("action_fraction must lie in [0, 1]")
        for name in ("num_trials", "pool_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be non-negative")
        try:
            NoiseMode(self.noise_mode)
        except ValueError:
            raise ConfigError(f"unknown noise_mode {self.noise_mode!r}") from None
        if not 0.0 <= self.beta_star < 1.0:
            raise ConfigError("beta_star must lie in [0, 1)")
        if not 0.0 < self.beta_hat < 1.0:
            raise ConfigError("beta_hat must lie in (0, 1)")
        if self.sigma < 0 or self.sigma_hat <= 0:
            raise ConfigError("need sigma >= 0 and sigma_hat > 0")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be positive")

    @property
    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(StrategyKind(self.strategy), self.c_hat, self.master_seed,
                              self.iqbc_weighted)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """Read a flat ``key = value`` file (TOML syntax)."""
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    step: int
    queried_cell: int  # -1 for the prior row and after a stop
    obs_kind: str  # "none", "action", "reward" or "stop"
    obs_value: float | None
    policy_accuracy: float
    value_loss: float
    posterior_mass_true: float
    c_t_ratio: float
    map_correct: bool
    wall_clock_ns: int = 0


@dataclass
class TrialContext:
    """Read-only inputs shared by every trial of an experiment."""

    space: HypothesisSpace
    true_index: int
    optimal_sets: np.ndarray
    noise: NoiseModel
    strategy: StrategyConfig
    beta_star: float
    noise_mode: NoiseMode = NoiseMode.AGGREGATED
    feedback: str = "action"
    action_fraction: float = 0.5
    num_steps: int = 100
    sigma: float = 0.0
    true_reward: RewardFunction | None = None
    mdp: Mdp | None = None
    timing: bool = False
    shuffle: bool = True
    graph: NeighborGraph | None = None
    _loss_cache: dict = field(default_factory=dict, repr=False)
    _optimal_values: np.ndarray | None = field(default=None, repr=False)

    def make_oracle(self, rng: np.random.Generator) -> ExpertOracle:
        build = (ExpertOracle.per_action if self.noise_mode is NoiseMode.PER_ACTION
                 else ExpertOracle.aggregated)
        return build(self.optimal_sets, self.beta_star, true_reward=self.true_reward,
                     sigma=self.sigma, rng=rng)

    def loss_of(self, space: HypothesisSpace, k: int) -> float:
        """Value loss of hypothesis ``k``'s greedy policy, memoised by source reward."""
        if self.mdp is None or self.true_reward is None:
            return math.nan
        key = int(space.source_indices[k])
        if key not in self._loss_cache:
            if self._optimal_values is None:
                self._optimal_values = solve_q(self.mdp, self.true_reward).values()
            policy = Policy.from_mask(space.labels[k])
            self._loss_cache[key] = value_loss(self.mdp, self.true_reward, policy,
                                               optimal_values=self._optimal_values)
        return self._loss_cache[key]


def policy_accuracy(post: Posterior, space: HypothesisSpace, oracle_or_sets) -> float:
    """Fraction of states where the MAP hypothesis's greedy set meets the expert's."""
    optimal = getattr(oracle_or_sets, "optimal_sets", oracle_or_sets)
    k = map_hypothesis(post)
    return float(np.mean(np.any(space.labels[k] & optimal, axis=1)))


def _record(ctx: TrialContext, space: HypothesisSpace, true_index: int, post: Posterior,
            trial: int, step: int, cell: int, kind: str, value, elapsed: int) -> TrialRecord:
    k = map_hypothesis(post)
    return TrialRecord(
        trial=trial, step=step, queried_cell=cell, obs_kind=kind, obs_value=value,
        policy_accuracy=policy_accuracy(post, space, ctx.optimal_sets),
        value_loss=ctx.loss_of(space, k),
        posterior_mass_true=float(np.exp(post.log_probs[true_index])),
        c_t_ratio=incorrect_mass_ratio(post, true_index),
        map_correct=bool(k == true_index),
        wall_clock_ns=elapsed,
    )


def run_trial(ctx: TrialContext, trial: int, seed: int) -> list[TrialRecord]:
    """One learning run; all randomness comes from ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    space, true_index, graph = ctx.space, ctx.true_index, ctx.graph
    if ctx.shuffle:
        order = rng.permutation(space.num_hypotheses)
        space = space.permuted(order)
        true_index = int(np.flatnonzero(order == ctx.true_index)[0])
    if ctx.strategy.kind is StrategyKind.GBS_V1 and graph is None:
        graph = neighbor_graph(space, 1)  # cell-level, unaffected by the shuffle
    oracle = ctx.make_oracle(rng)
    post = initial_posterior(space)
    rows = [_record(ctx, space, true_index, post, trial, 0, -1, "none", None, 0)]
    stopped = False
    for step in range(1, ctx.num_steps + 1):
        t0 = time.perf_counter_ns() if ctx.timing else 0
        if stopped:
            cell, kind, value = -1, "stop", None
        else:
            use_action = (ctx.feedback == "action"
                          or (ctx.feedback == "mixed" and rng.random() < ctx.action_fraction))
            if use_action:
                choice = select_query(ctx.strategy, post, space, rng, graph)
                if isinstance(choice, Stop):
                    stopped = True
                    cell, kind, value = -1, "stop", None
                else:
                    cell = int(choice)
                    x = int(space.partition.representatives[cell])
                    value = oracle.sample_action(x)
                    kind = "action"
                    post = update_action(post, space, x, value, ctx.noise)
            else:
                if ctx.strategy.kind is StrategyKind.RANDOM:
                    x = int(rng.integers(space.num_states))
                else:
                    x = select_reward_query(post, space)
                cell = int(space.partition.cell_of_state[x])
                value = oracle.sample_reward(x)
                kind = "reward"
                post = update_reward(post, space, x, value, ctx.noise)
        elapsed = time.perf_counter_ns() - t0 if ctx.timing else 0
        rows.append(_record(ctx, space, true_index, post, trial, step, cell, kind, value, elapsed))
    return rows


# --------------------------------------------------------------------------
# experiment setup


def cache_dir() -> Path:
    return Path(os.environ.get("GBSIRL_CACHE_DIR", Path.home() / ".cache" / "gbsirl"))


def load_or_build_space(mdp: Mdp, rewards: Sequence[RewardFunction],
                        tie_tol: float = DEFAULT_TIE_TOL, use_cache: bool = True,
                        ) -> HypothesisSpace:
    """Build the hypothesis space for ``rewards``, reusing a cached copy if present."""
    if not use_cache:
        return build_space(mdp, rewards, tie_tol=tie_tol)
    path = cache_dir() / f"space-{space_cache_key(mdp, rewards, tie_tol)}.npz"
    if path.exists():
        return load_space(path)
    space = build_space(mdp, rewards, tie_tol=tie_tol)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".{os.getpid()}.tmp")
    save_space(space, tmp)
    os.replace(tmp, path)
    return space


def noise_model_for(config: ExperimentConfig, space: HypothesisSpace) -> NoiseModel:
    if NoiseMode(config.noise_mode) is NoiseMode.PER_ACTION:
        return NoiseModel.per_action(config.beta_hat, space.num_actions,
                                     sigma_hat=config.sigma_hat)
    return NoiseModel.aggregated(config.beta_hat, sigma_hat=config.sigma_hat)


def prepare(config: ExperimentConfig, domain: DomainSpec | None = None,
            use_cache: bool = True) -> TrialContext:
    domain = get_domain(config.domain) if domain is None else domain
    rewards = domain.reward_pool(config.pool_size, config.pool_seed)
    space = load_or_build_space(domain.mdp, rewards, use_cache=use_cache)
    optimal = solve_q(domain.mdp, domain.true_reward).greedy_mask(DEFAULT_TIE_TOL)
    try:
        noise = noise_model_for(config, space)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return TrialContext(
        space=space, true_index=space.index_of_source(0), optimal_sets=optimal, noise=noise,
        strategy=config.strategy_config, beta_star=config.beta_star,
        noise_mode=NoiseMode(config.noise_mode), feedback=config.feedback,
        action_fraction=config.action_fraction, num_steps=config.num_steps,
        sigma=config.sigma, true_reward=domain.true_reward, mdp=domain.mdp,
        timing=config.timing)


def _run_chunk(args) -> list[TrialRecord]:
    ctx, trials, master_seed = args
    rows: list[TrialRecord] = []
    for trial in trials:
        rows.extend(run_trial(ctx, trial, master_seed + trial))
    return rows


def worker_count(config: ExperimentConfig) -> int:
    if config.workers is not None:
        return config.workers
    return max(1, int(os.environ.get("GBSIRL_WORKERS", "1")))


def run_trials(ctx: TrialContext, num_trials: int, master_seed: int,
               workers: int = 1) -> list[TrialRecord]:
    """Run trials ``0..num_trials-1``; rows come back in (trial, step) order."""
    trials = list(range(num_trials))
    if workers <= 1 or num_trials < 2:
        return _run_chunk((ctx, trials, master_seed))
    chunks = [trials[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(ctx, c, master_seed) for c in chunks]))
    rows = [r for part in parts for r in part]
    rows.sort(key=lambda r: (r.trial, r.step))
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    summary: dict


def run_experiment(config: ExperimentConfig, domain: DomainSpec | None = None,
                   use_cache: bool = True) -> ExperimentResult:
    """Run all trials, write the CSV/summary files if configured, return everything."""
    config.validate()
    try:
        ctx = prepare(config, domain, use_cache)
        if ctx.strategy.kind is StrategyKind.GBS_V1:
            ctx.graph = neighbor_graph(ctx.space, 1)
    except CapacityError as exc:
        raise CapacityError(f"{exc}; reduce pool_size or choose a smaller domain") from None
    records = run_trials(ctx, config.num_trials, config.master_seed, worker_count(config))
    summary = summarize(records, config.num_steps)
    summary["config"] = config.to_dict()
    summary["num_hypotheses"] = ctx.space.num_hypotheses
    summary["num_cells"] = ctx.space.num_cells
    if config.output_path:
        write_csv(records, config.output_path)
        summary_path = config.summary_path or str(Path(config.output_path).with_suffix(".json"))
        Path(summary_path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(config, records, summary)


def experiment_bound(config: ExperimentConfig, domain: DomainSpec | None = None,
                     use_cache: bool = True, c_star: float | None = None) -> BoundParams:
    """Convergence-rate parameters for the configured space and noise."""
    ctx = prepare(config, domain, use_cache)
    oracle = ctx.make_oracle(np.random.default_rng(0))
    beta, gamma = oracle.noise_levels(ctx.noise_mode)
    return compute_bound(ctx.space, ctx.noise, beta, gamma, config.delta, c_star)


# --------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def records_to_csv(records: Iterable[TrialRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([_fmt(getattr(r, name)) if name != "obs_kind" else r.obs_kind
                         for name in CSV_HEADER])
    return buf.getvalue()


def write_csv(records: Iterable[TrialRecord], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


def read_csv(path: str | Path) -> list[TrialRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialRecord(
                trial=int(row["trial"]), step=int(row["step"]),
                queried_cell=int(row["queried_cell"]), obs_kind=row["obs_kind"],
                obs_value=float(row["obs_value"]) if row["obs_value"] else None,
                policy_accuracy=float(row["policy_accuracy"]),
                value_loss=float(row["value_loss"]),
                posterior_mass_true=float(row["posterior_mass_true"]),
                c_t_ratio=float(row["c_t_ratio"]), map_correct=row["map_correct"] == "1",
                wall_clock_ns=int(row["wall_clock_ns"])))
    return out


def metric_matrix(records: Sequence[TrialRecord], name: str) -> np.ndarray:
    """``(trials, steps + 1)`` array of one metric, trials in ascending order."""
    trials = sorted({r.trial for r in records})
    steps = max(r.step for r in records) + 1
    index = {t: i for i, t in enumerate(trials)}
    out = np.full((len(trials), steps), np.nan)
    for r in records:
        out[index[r.trial], r.step] = float(getattr(r, name))
    return out


def queries_to_accuracy(records: Sequence[TrialRecord], target: float = ACCURACY_TARGET,
                        ) -> np.ndarray:
    """First step per trial with policy accuracy >= ``target``.

    Trials that never get there are censored at ``num_steps + 1``.
    """
    acc = metric_matrix(records, "policy_accuracy")
    hit = acc >= target - 1e-12
    return np.where(hit.any(axis=1), hit.argmax(axis=1), acc.shape[1]).astype(float)


def mean_ci(values: np.ndarray, level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a normal-approximation confidence interval."""
    values = np.asarray(values, dtype=float)
    m = float(values.mean())
    if values.size < 2:
        return m, m, m
    half = stats.norm.ppf(0.5 + level / 2) * values.std(ddof=1) / math.sqrt(values.size)
    return m, float(m - half), float(m + half)


def summarize(records: Sequence[TrialRecord], num_steps: int | None = None) -> dict:
    """Per-step means and standard errors of the numeric metrics."""
    per_step = {}
    for name in ("policy_accuracy", "value_loss", "posterior_mass_true", "map_correct"):
        mat = metric_matrix(records, name)
        n = mat.shape[0]
        mean = mat.mean(axis=0)
        se = mat.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(mat.shape[1])
        per_step[name] = {"mean": _json_list(mean), "stderr": _json_list(se)}
    q = queries_to_accuracy(records)
    m, lo, hi = mean_ci(q)
    return {
        "num_trials": int(metric_matrix(records, "step").shape[0]),
        "num_steps": int(num_steps if num_steps is not None else max(r.step for r in records)),
        "per_step": per_step,
        "queries_to_90": {"mean": m, "ci95": [lo, hi]},
    }


def _json_list(arr: np.ndarray) -> list:
    return [None if not np.isfinite(v) else float(v) for v in arr]


# --------------------------------------------------------------------------
# theory checks


@dataclass
class BoundReport:
    steps: np.ndarray
    error_rate: np.ndarray
    bound: np.ndarray
    num_trials: int
    violations: list[int]
    vacuous: bool = False

    @property
    def passed(self) -> bool:
        return not self.vacuous and not self.violations


def error_rates(records: Sequence[TrialRecord]) -> tuple[np.ndarray, int]:
    correct = metric_matrix(records, "map_correct")
    return 1.0 - correct.mean(axis=0), correct.shape[0]


def check_bound(records: Sequence[TrialRecord], bound: BoundParams,
                confidence: float = 0.99) -> BoundReport:
    """Compare the per-step MAP error rate with ``min(1, |H| (1 - lambda)^t)``.

    A step is a violation when observing at least that many errors would have
    probability below ``1 - confidence`` if the true error rate equalled the
    bound (one-sided binomial test).
    """
    rate, n = error_rates(records)
    steps = np.arange(rate.size)
    if bound.lambda_ <= 0:
        return BoundReport(steps, rate, np.ones_like(rate), n, [], vacuous=True)
    limit = np.array([bound.error_bound(int(t)) for t in steps])
    errors = np.rint(rate * n).astype(int)
    violations = []
    for t in steps:
        if errors[t] == 0 or rate[t] <= limit[t]:
            continue
        if stats.binom.sf(errors[t] - 1, n, limit[t]) < 1.0 - confidence:
            violations.append(int(t))
    return BoundReport(steps, rate, limit, n, violations)


@dataclass
class SupermartingaleReport:
    mean_ratio: float
    stderr: float
    num_pairs: int

    @property
    def passed(self) -> bool:
        return self.num_pairs > 0 and self.mean_ratio <= 1.0 + 3.0 * self.stderr


def ratio_pairs(records: Sequence[TrialRecord]) -> np.ndarray:
    """All ``C_{t+1} / C_t`` with both terms finite and ``C_t > 0``."""
    c = metric_matrix(records, "c_t_ratio")
    prev, nxt = c[:, :-1], c[:, 1:]
    ok = np.isfinite(prev) & np.isfinite(nxt) & (prev > 0)
    return nxt[ok] / prev[ok]


def supermartingale_report(records_or_ratios) -> SupermartingaleReport:
    """Pooled mean of successive ``C_t`` ratios; passes if ``mean <= 1 + 3 stderr``."""
    if isinstance(records_or_ratios, np.ndarray):
        ratios = records_or_ratios[np.isfinite(records_or_ratios)]
    else:
        ratios = ratio_pairs(records_or_ratios)
    n = int(ratios.size)
    if n == 0:
        return SupermartingaleReport(math.nan, math.nan, 0)
    se = float(ratios.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SupermartingaleReport(float(ratios.mean()), se, n)
