"""Bi-objective black-box search over architecture configurations.

Trials record (performance to maximize, complexity in GFLOPS to minimize).
The sampler models good and bad historical trials with smoothed categorical
kernels and proposes whole configurations drawn around good ones, scored by
the density ratio; before enough history exists it falls back to uniform
sampling. Infeasible trials (complexity above the active budget) are
recorded but never enter the good set or the Pareto front.

The propose/evaluate/record loop is strictly sequential: the proposal for
trial t depends only on trials 0..t-1 and the seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .encoder import ArchitectureConfig, ConfigSpace, config_from_json


@dataclass(frozen=True)
class Trial:
    config: ArchitectureConfig
    performance: float
    complexity: float
    feasible: bool
    trial_index: int
    seed: int
    status: str = "ok"
    wall_ms: float = 0.0


@dataclass(frozen=True)
class ParetoFront:
    """Nondominated trials sorted by complexity ascending."""

    trials: tuple[Trial, ...]

    def __len__(self) -> int:
        return len(self.trials)

    def objectives(self) -> list[tuple[float, float]]:
        return [(t.performance, t.complexity) for t in self.trials]


@dataclass(frozen=True)
class Study:
    trials: tuple[Trial, ...]
    budget: int
    constraint: float | None
    rng_seed: int
    front: ParetoFront = field(default_factory=lambda: ParetoFront(trials=()))


def _usable(trials: Iterable[Trial]) -> list[Trial]:
    return [t for t in trials if t.status == "ok"]


def pareto_front(trials: Iterable[Trial]) -> ParetoFront:
    """Feasible trials not dominated by any other feasible trial.

    Domination: at least as good in both objectives and strictly better in
    one. Exact duplicates of an objective vector are all retained.
    """
    candidates = [t for t in _usable(trials) if t.feasible]
    if not candidates:
        raise ValueError("no feasible trials")
    by_cx: dict[float, list[Trial]] = {}
    for t in candidates:
        by_cx.setdefault(t.complexity, []).append(t)
    kept: list[Trial] = []
    best_perf = -math.inf
    for cx in sorted(by_cx):
        group = by_cx[cx]
        group_best = max(t.performance for t in group)
        if group_best > best_perf:
            kept.extend(t for t in group if t.performance == group_best)
            best_perf = group_best
    return ParetoFront(trials=tuple(kept))


def _as_points(front) -> list[tuple[float, float]]:
    if isinstance(front, ParetoFront):
        return front.objectives()
    points = []
    for item in front:
        if isinstance(item, Trial):
            points.append((item.performance, item.complexity))
        else:
            p, c = item
            points.append((float(p), float(c)))
    return points


def hypervolume_2d(front, ref_performance: float, ref_complexity: float) -> float:
    """Area dominated by the points relative to the reference corner.

    Every point must satisfy performance > ref_performance and
    complexity < ref_complexity. Computed as the union of rectangles via a
    single sweep over complexities; dominated and duplicate points are
    absorbed by the union.
    """
    points = _as_points(front)
    if not points:
        return 0.0
    for p, c in points:
        if not (p > ref_performance and c < ref_complexity):
            raise ValueError(f"point ({p}, {c}) outside the reference box")
    points.sort(key=lambda pc: pc[1])
    area = 0.0
    best = -math.inf
    xs = [c for _, c in points] + [ref_complexity]
    for i, (p, c) in enumerate(points):
        best = max(best, p)
        nxt = xs[i + 1]
        if nxt > c:
            area += (nxt - c) * (best - ref_performance)
    return area


def _nondominated_ranks(perf: np.ndarray, cx: np.ndarray) -> list[list[int]]:
    n = len(perf)
    better_eq = (perf[None, :] >= perf[:, None]) & (cx[None, :] <= cx[:, None])
    strict = (perf[None, :] > perf[:, None]) | (cx[None, :] < cx[:, None])
    dominates = better_eq & strict  # [i, j] = j dominates i
    remaining = np.ones(n, dtype=bool)
    ranks = []
    while remaining.any():
        counts = (dominates & remaining[None, :]).sum(axis=1)
        front = np.flatnonzero(remaining & (counts == 0))
        if front.size == 0:  # numeric safety; cannot happen with finite objectives
            front = np.flatnonzero(remaining)
        ranks.append(front.tolist())
        remaining[front] = False
    return ranks


def _hv_contributions(points: list[tuple[float, float]]) -> list[float]:
    perf = np.array([p for p, _ in points])
    cx = np.array([c for _, c in points])
    span_p = max(perf.max() - perf.min(), 1e-9)
    span_c = max(cx.max() - cx.min(), 1e-9)
    ref_p = perf.min() - 1e-3 * span_p
    ref_c = cx.max() + 1e-3 * span_c
    total = hypervolume_2d(points, ref_p, ref_c)
    out = []
    for i in range(len(points)):
        rest = points[:i] + points[i + 1 :]
        out.append(total - (hypervolume_2d(rest, ref_p, ref_c) if rest else 0.0))
    return out


class RandomSampler:
    """Uniform proposals; also the startup behavior of the TPE sampler."""

    def __init__(self, space: ConfigSpace):
        self.space = space

    def suggest(self, history: Sequence[Trial], rng: np.random.Generator) -> ArchitectureConfig:
        return self.space.random(rng)


class MotpeSampler:
    """Multivariate TPE over the categorical space for two objectives.

    History splits into a good set G (top ceil(gamma * n) by nondominated
    rank, ties broken by hypervolume contribution) and a bad set B. Each
    G/B member defines a product kernel that keeps its own value with
    probability (K+1)/(2K) per parameter and spreads the rest uniformly
    (add-one smoothing of a single observation). Candidates are whole
    configurations drawn around G members, and the one maximizing
    l(x)/g(x) wins. Patch parameters of non-extracted stages are masked
    out of both the kernels and the scores.
    """

    def __init__(self, space: ConfigSpace, gamma: float = 0.1, n_startup: int = 10,
                 n_candidates: int = 24):
        self.space = space
        self.gamma = gamma
        self.n_startup = n_startup
        self.n_candidates = n_candidates
        self._sizes = space.sizes.astype(np.float64)

    # -- kernel machinery ---------------------------------------------------

    def _observations(self, trials: list[Trial]):
        idx = np.stack([self.space.to_indices(t.config) for t in trials])
        mask = np.stack([self.space.active_mask(t.config) for t in trials])
        return idx, mask

    def _log_mixture(self, cand_idx, cand_mask, obs_idx, obs_mask) -> float:
        if obs_idx.shape[0] == 0:
            active = cand_mask
            return float(np.sum(np.where(active, -np.log(self._sizes), 0.0)))
        match = obs_idx == cand_idx[None, :]
        active = obs_mask & cand_mask[None, :]
        log_hit = np.log((self._sizes + 1.0) / (2.0 * self._sizes))
        log_miss = np.log(1.0 / (2.0 * self._sizes))
        member_logs = np.where(active, np.where(match, log_hit, log_miss), 0.0).sum(axis=1)
        peak = member_logs.max()
        return float(peak + np.log(np.exp(member_logs - peak).mean()))

    def _sample_around(self, obs_idx_row, obs_mask_row, rng) -> ArchitectureConfig:
        for _ in range(32):
            idx = np.empty(len(self.space), dtype=np.int64)
            for p, size in enumerate(self.space.sizes):
                if obs_mask_row[p] and rng.random() < 0.5:
                    idx[p] = obs_idx_row[p]
                else:
                    idx[p] = rng.integers(size)
            config = self.space.from_indices(idx)
            if self.space.is_valid(config):
                return config
        return self.space.random(rng)

    def _good_set(self, feasible: list[Trial], n_good: int) -> list[Trial]:
        perf = np.array([t.performance for t in feasible])
        cx = np.array([t.complexity for t in feasible])
        good: list[Trial] = []
        for rank in _nondominated_ranks(perf, cx):
            if len(good) + len(rank) <= n_good:
                good.extend(feasible[i] for i in rank)
            else:
                need = n_good - len(good)
                pts = [(perf[i], cx[i]) for i in rank]
                contrib = _hv_contributions(pts)
                order = sorted(range(len(rank)), key=lambda k: (-contrib[k], rank[k]))
                good.extend(feasible[rank[k]] for k in order[:need])
            if len(good) >= n_good:
                break
        return good

    def suggest(self, history: Sequence[Trial], rng: np.random.Generator) -> ArchitectureConfig:
        if len(history) < self.n_startup:
            return self.space.random(rng)
        usable = _usable(history)
        feasible = [t for t in usable if t.feasible]
        if len(usable) < 2 or not feasible:
            return self.space.random(rng)
        n_good = max(1, math.ceil(self.gamma * len(usable)))
        good = self._good_set(feasible, n_good)
        good_ids = {id(t) for t in good}
        bad = [t for t in usable if id(t) not in good_ids]
        g_idx, g_mask = self._observations(good)
        b_idx, b_mask = self._observations(bad) if bad else (np.empty((0, len(self.space)), dtype=np.int64), np.empty((0, len(self.space)), dtype=bool))

        best_config, best_score = None, -math.inf
        for _ in range(self.n_candidates):
            member = int(rng.integers(len(good)))
            config = self._sample_around(g_idx[member], g_mask[member], rng)
            cand_idx = self.space.to_indices(config)
            cand_mask = self.space.active_mask(config)
            score = self._log_mixture(cand_idx, cand_mask, g_idx, g_mask) - self._log_mixture(
                cand_idx, cand_mask, b_idx, b_mask
            )
            if score > best_score:
                best_config, best_score = config, score
        return best_config


def suggest_motpe(history: Sequence[Trial], space: ConfigSpace, rng: np.random.Generator,
                  **kwargs) -> ArchitectureConfig:
    """One-shot functional wrapper around MotpeSampler.suggest."""
    return MotpeSampler(space, **kwargs).suggest(history, rng)


def default_startup(budget: int) -> int:
    return max(10, math.ceil(0.05 * budget))


def run_search(evaluator: Callable[[ArchitectureConfig], tuple[float, float]],
               budget: int,
               constraint: float | None = None,
               seed: int = 0,
               space: ConfigSpace | None = None,
               sampler=None,
               on_trial: Callable[[Trial], None] | None = None,
               fatal: tuple = ()) -> Study:
    """Sequential propose/evaluate/record loop.

    The evaluator maps a config to (performance, complexity GFLOPS); if it
    raises, the trial is recorded as failed and excluded from modelling and
    from the front, except for exception types listed in `fatal`, which
    propagate (environment problems should not burn the budget).
    Reproducible from the seed alone (modulo wall_ms).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = space or ConfigSpace()
    if sampler is None:
        sampler = MotpeSampler(space, n_startup=default_startup(budget))
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    for index in range(budget):
        config = sampler.suggest(trials, rng)
        start = time.perf_counter()
        try:
            performance, complexity = evaluator(config)
            status = "ok"
            performance = float(performance)
            complexity = float(complexity)
            if not (math.isfinite(performance) and math.isfinite(complexity)):
                raise ValueError("evaluator returned non-finite objectives")
        except fatal:
            raise
        except Exception:
            status = "failed"
            performance = math.nan
            complexity = math.nan
        wall_ms = (time.perf_counter() - start) * 1000.0
        feasible = status == "ok" and (constraint is None or complexity <= constraint)
        trial = Trial(
            config=config,
            performance=performance,
            complexity=complexity,
            feasible=feasible,
            trial_index=index,
            seed=seed,
            status=status,
            wall_ms=wall_ms,
        )
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)
    if any(t.feasible for t in _usable(trials)):
        front = pareto_front(trials)
    else:
        front = ParetoFront(trials=())
    return Study(trials=tuple(trials), budget=budget, constraint=constraint,
                 rng_seed=seed, front=front)


# --------------------------------------------------------------------------
# trial log records


def trial_to_record(trial: Trial) -> dict:
    return {
        "index": trial.trial_index,
        "seed": trial.seed,
        "config": trial.config.to_json(),
        "performance": None if math.isnan(trial.performance) else trial.performance,
        "complexity_gflops": None if math.isnan(trial.complexity) else trial.complexity,
        "feasible": trial.feasible,
        "status": trial.status,
        "wall_ms": trial.wall_ms,
    }


def trial_from_record(record: dict) -> Trial:
    performance = record["performance"]
    complexity = record["complexity_gflops"]
    return Trial(
        config=config_from_json(record["config"]),
        performance=math.nan if performance is None else float(performance),
        complexity=math.nan if complexity is None else float(complexity),
        feasible=bool(record["feasible"]),
        trial_index=int(record["index"]),
        seed=int(record["seed"]),
        status=record.get("status", "ok"),
        wall_ms=float(record.get("wall_ms", 0.0)),
    )


def write_trial_log(path, trials: Iterable[Trial]) -> None:
    with open(path, "w") as fh:
        for t in trials:
            fh.write(json.dumps(trial_to_record(t)) + "\n")


def read_trial_log(path) -> list[Trial]:
    trials = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(trial_from_record(json.loads(line)))
    return trials


def front_to_json(front: ParetoFront) -> list[dict]:
    return [trial_to_record(t) for t in front.trials]
