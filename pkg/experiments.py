"""Seeded experiment runs: environments x algorithms x seeds, evaluated at expert-query checkpoints.

Each (env, algorithm, seed) task draws its random streams from
derive_seed(master, env, algorithm, seed), so tasks are independent and the merged
records do not depend on how tasks are scheduled across workers.
"""

import functools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from analysis import concentrability, coverage_certificate
from config_loader import ExperimentConfig, write_json
from csv_io import COVERAGE_COLUMNS, FORMULA_COLUMNS, write_records, write_rows
from envs import (GameInstance, GridworldSpec, gridworld_experts, make_gridworld, make_lower_bound_game,
                  make_lower_bound_simplified, make_random_game)
from formulas import formula_suite
from game_core import P1, P2, PolicyPair, occupancy
from imitation import bc_pair, collect_from_state_dist, collect_trajectories
from mail_algorithms import (PLAYER_LABELS, MailWarmConfig, MurmailConfig, QueryLedger, mail_warm_path,
                             murmail_path, warm_start)
from matrix_nash import nash_gap, zero_sum_value_iteration
from seeding import derive_seed

logger = logging.getLogger("mailbench.experiments")

ENV_PARAMS = {
    "lowerbound": {"delta", "rho_s3"},
    "lowerbound-simplified": {"rho_s3"},
    "gridworld": {"side", "goal", "start", "horizon", "mixed_expert"},
    "random": {"n_states", "n_actions_p1", "n_actions_p2", "horizon", "game_seed"},
}
COMMON_ENV_KEYS = {"name", "kind", "bc_data"}
BC_DATA = ("rho", "trajectories")

MAIL_WARM_PARAMS = {f.name for f in fields(MailWarmConfig)} - {"seed", "n"}
MURMAIL_PARAMS = {f.name for f in fields(MurmailConfig)} - {"seed", "n_iters"}
ALGORITHM_PARAMS = {"bc": {"data"}, "mail-warm": MAIL_WARM_PARAMS, "murmail": MURMAIL_PARAMS}

RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.json"
COVERAGE_FILE = "coverage.csv"
FORMULAS_FILE = "formulas.csv"


@dataclass(frozen=True)
class ExperimentRecord:
    env: str
    algorithm: str
    seed: int
    expert_queries: int
    nash_gap: float
    wall_ms: float = 0.0

    def sort_key(self) -> Tuple[str, str, int, int]:
        return self.env, self.algorithm, self.seed, self.expert_queries

    def to_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ExperimentOutcome:
    records: List[ExperimentRecord]
    summary: Dict[str, Any]
    paths: Dict[str, str]
    passed: bool = True


def _check_keys(entry: Mapping[str, Any], allowed: set, label: str) -> None:
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise ValueError(f"unknown {label} parameters for {entry.get('name')!r}: {unknown}")


def bc_data_source(env: Mapping[str, Any]) -> str:
    default = "rho" if env["kind"].startswith("lowerbound") else "trajectories"
    source = env.get("bc_data", default)
    if source not in BC_DATA:
        raise ValueError(f"bc_data must be one of {BC_DATA}, got {source!r}")
    return source


def _expert_occupancy(game, experts: PolicyPair) -> np.ndarray:
    return np.array(occupancy(game, experts).state)


@functools.lru_cache(maxsize=None)
def _instance_from_json(spec_json: str) -> GameInstance:
    spec = json.loads(spec_json)
    kind = spec["kind"]
    params = {k: v for k, v in spec.items() if k not in COMMON_ENV_KEYS}
    if kind == "lowerbound":
        return make_lower_bound_game(float(params.get("delta", 0.0)), float(params.get("rho_s3", 0.5)))
    if kind == "lowerbound-simplified":
        return make_lower_bound_simplified(float(params.get("rho_s3", 0.5)))
    if kind == "gridworld":
        grid_kwargs = {k: params[k] for k in ("side", "horizon") if k in params}
        if "goal" in params:
            grid_kwargs["goal"] = tuple(params["goal"])
        if "start" in params:
            grid_kwargs["start"] = tuple(tuple(c) for c in params["start"])
        game, _ = make_gridworld(GridworldSpec(**grid_kwargs))
        experts = gridworld_experts(game, mixed=bool(params.get("mixed_expert", False)))
        return GameInstance(game, experts, _expert_occupancy(game, experts))
    game = make_random_game(int(params.get("n_states", 4)), int(params.get("n_actions_p1", 2)),
                            int(params.get("n_actions_p2", 2)), int(params.get("horizon", 3)),
                            int(params.get("game_seed", 0)))
    experts = zero_sum_value_iteration(game).pair
    return GameInstance(game, experts, _expert_occupancy(game, experts))


def build_instance(env: Mapping[str, Any]) -> GameInstance:
    """Game, expert pair and state distribution for an env entry; cached per process."""
    _check_keys(env, ENV_PARAMS[env["kind"]] | COMMON_ENV_KEYS, "env")
    bc_data_source(env)
    logger.debug("building env %s", env["name"])
    return _instance_from_json(json.dumps(dict(env), sort_keys=True))


@dataclass(frozen=True)
class Task:
    env: Dict[str, Any]
    algorithm: Dict[str, Any]
    seed_index: int
    master_seed: int
    checkpoints: Tuple[int, ...]
    record_wall_time: bool = False
    count_warmup_queries: bool = False


@dataclass(frozen=True, eq=False)
class TaskResult:
    records: List[ExperimentRecord]
    ledgers: List[Dict[str, Any]] = field(default_factory=list)


def _sizes(checkpoints: Sequence[int], per_unit: int) -> List[int]:
    """Convert query budgets to unit counts (samples or iterations), at least one each."""
    return sorted({max(1, c // per_unit) for c in checkpoints})


def _bc_path(inst: GameInstance, source: str, checkpoints: Sequence[int],
             seed: int) -> Iterator[Tuple[PolicyPair, QueryLedger]]:
    """BC on nested prefixes of one maximal expert dataset; every record queries both experts."""
    game, H = inst.game, inst.game.horizon
    sizes = _sizes(checkpoints, 2 * H)
    rng = np.random.default_rng(seed)
    if source == "rho":
        full = collect_from_state_dist(game, inst.rho, inst.experts, sizes[-1], rng)
    else:
        full = collect_trajectories(game, inst.experts, sizes[-1], rng)
    for n in sizes:
        data = full.head(n)
        ledger = QueryLedger()
        for player in (P1, P2):
            ledger.add("collection", player, data.queries(player))
        yield bc_pair(data, data, game), ledger


def run_task(task: Task) -> TaskResult:
    """Train one algorithm on one env with one seed and evaluate every checkpoint exactly."""
    inst = build_instance(task.env)
    game, H = inst.game, inst.game.horizon
    env_name, alg = task.env["name"], task.algorithm["name"]
    _check_keys(task.algorithm, ALGORITHM_PARAMS[alg] | {"name"}, "algorithm")
    params = {k: v for k, v in task.algorithm.items() if k != "name"}
    seed = derive_seed(task.master_seed, env_name, alg, task.seed_index)
    logger.info("task env=%s algorithm=%s seed=%d checkpoints=%d", env_name, alg, task.seed_index,
                len(task.checkpoints))
    started = time.perf_counter()
    count_phases = ["collection"]

    if alg == "bc":
        source = params.get("data", bc_data_source(task.env))
        if source not in BC_DATA:
            raise ValueError(f"bc data must be one of {BC_DATA}, got {source!r}")
        path = _bc_path(inst, source, task.checkpoints, seed)
    elif alg == "mail-warm":
        sizes = _sizes(task.checkpoints, 2 * H)
        cfg = MailWarmConfig(**params, seed=seed, n=sizes[-1])
        path = ((pair, ledger) for _, pair, ledger in mail_warm_path(game, inst.experts, cfg, sizes))
        if task.count_warmup_queries:
            count_phases.append("warmup")
    else:
        probe = MurmailConfig(**params, seed=seed)
        iters = _sizes(task.checkpoints, probe.queries_per_iteration(H))
        cfg = MurmailConfig(**params, seed=seed, n_iters=iters[-1])
        path = ((pair, ledger) for _, pair, ledger in murmail_path(game, inst.experts, cfg, iters))
        count_phases = None

    records, ledgers = [], []
    for pair, ledger in path:
        queries = ledger.total(count_phases)
        wall_ms = round((time.perf_counter() - started) * 1000.0, 3) if task.record_wall_time else 0.0
        gap = nash_gap(game, pair)
        records.append(ExperimentRecord(env_name, alg, task.seed_index, queries, gap, wall_ms))
        ledgers.append({"env": env_name, "algorithm": alg, "seed": task.seed_index, "expert_queries": queries,
                        "ledger": ledger.to_dicts()})
        logger.debug("env=%s algorithm=%s seed=%d queries=%d nash_gap=%.6f", env_name, alg, task.seed_index,
                     queries, gap)
    return TaskResult(records, ledgers)


def make_tasks(cfg: ExperimentConfig) -> List[Task]:
    return [Task(dict(env), dict(alg), i, cfg.seed, cfg.checkpoints, cfg.record_wall_time, cfg.count_warmup_queries)
            for env in cfg.envs for alg in cfg.algorithms for i in range(cfg.n_seeds)]


def run_tasks(tasks: Sequence[Task], workers: int = 1) -> List[TaskResult]:
    """Run tasks serially or on a process pool; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [run_task(t) for t in tasks]
    results: List[Optional[TaskResult]] = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(run_task, t): i for i, t in enumerate(tasks)}
        done = 0
        for f in as_completed(futures):
            results[futures[f]] = f.result()
            done += 1
            logger.info("%d/%d tasks complete", done, len(tasks))
    return results


def summarize(records: Sequence[ExperimentRecord]) -> List[Dict[str, Any]]:
    """Mean and population std of nash_gap per (env, algorithm, expert_queries)."""
    groups: Dict[Tuple[str, str, int], List[float]] = {}
    for r in records:
        groups.setdefault((r.env, r.algorithm, r.expert_queries), []).append(r.nash_gap)
    return [{"env": env, "algorithm": alg, "expert_queries": q, "mean": float(np.mean(v)),
             "std": float(np.std(v)), "n": len(v)}
            for (env, alg, q), v in sorted(groups.items())]


def _run_curves(cfg: ExperimentConfig, workers: int) -> ExperimentOutcome:
    if not cfg.algorithms:
        raise ValueError(f"experiment {cfg.experiment} needs at least one algorithm")
    tasks = make_tasks(cfg)
    logger.info("experiment=%s tasks=%d workers=%d", cfg.experiment, len(tasks), workers)
    results = run_tasks(tasks, workers)
    records = sorted((r for res in results for r in res.records), key=ExperimentRecord.sort_key)
    ledgers = sorted((entry for res in results for entry in res.ledgers),
                     key=lambda e: (e["env"], e["algorithm"], e["seed"], e["expert_queries"]))
    summary = {"config": cfg.to_dict(), "curves": summarize(records), "runs": ledgers}
    records_path = os.path.join(cfg.output_dir, RECORDS_FILE)
    summary_path = os.path.join(cfg.output_dir, SUMMARY_FILE)
    write_records(records_path, (r.to_row() for r in records))
    write_json(summary_path, summary)
    logger.info("wrote %d records to %s", len(records), records_path)
    return ExperimentOutcome(records, summary, {"records": records_path, "summary": summary_path})


def _mail_warm_params(cfg: ExperimentConfig) -> Dict[str, Any]:
    for alg in cfg.algorithms:
        if alg["name"] == "mail-warm":
            _check_keys(alg, MAIL_WARM_PARAMS | {"name"}, "algorithm")
            return {k: v for k, v in alg.items() if k != "name"}
    return {}


def _coverage_audit(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Warm-up once per env with the master seed, then certify coverage and concentrability."""
    params = _mail_warm_params(cfg)
    rows, per_env, reports, paths = [], {}, {}, {}
    for env in cfg.envs:
        inst = build_instance(env)
        name = env["name"]
        warm_cfg = MailWarmConfig(**params, seed=derive_seed(cfg.seed, name, "coverage-audit"))
        start = warm_start(inst.game, inst.experts, warm_cfg)
        env_ok = True
        for fixed in (P2, P1):
            free = P1 if fixed == P2 else P2
            for row in coverage_certificate(inst.game, inst.experts.policy(fixed), fixed, start.by_fixed(fixed),
                                            cfg.delta):
                env_ok &= row.ok
                rows.append({"env": name, "player": PLAYER_LABELS[free], "stage": row.stage, "state": row.state,
                             "max_visitation": row.max_visitation, "ratio": row.ratio, "bound": row.bound,
                             "ok": row.ok})
        report = concentrability(inst.game, inst.experts, inst.rho)
        reports[name] = report.to_dict()
        per_env[name] = env_ok
        report_path = os.path.join(cfg.output_dir, f"concentrability_{name}.json")
        write_json(report_path, reports[name])
        paths[f"concentrability_{name}"] = report_path
        logger.info("coverage env=%s ok=%s c_expert=%s c_deviation=%s", name, env_ok,
                    reports[name]["c_expert"], reports[name]["c_deviation"])
        if not env_ok:
            logger.warning("coverage certificate violated on env %s", name)
    coverage_path = os.path.join(cfg.output_dir, COVERAGE_FILE)
    summary_path = os.path.join(cfg.output_dir, SUMMARY_FILE)
    write_rows(coverage_path, COVERAGE_COLUMNS, rows)
    summary = {"config": cfg.to_dict(), "coverage_ok": per_env, "concentrability": reports}
    write_json(summary_path, summary)
    paths.update({"coverage": coverage_path, "summary": summary_path})
    return ExperimentOutcome([], summary, paths, passed=all(per_env.values()))


def _formula_suite(cfg: ExperimentConfig) -> ExperimentOutcome:
    checks = formula_suite()
    path = os.path.join(cfg.output_dir, FORMULAS_FILE)
    write_rows(path, FORMULA_COLUMNS, (c.to_row() for c in checks))
    passed = all(c.passed for c in checks)
    summary = {"config": cfg.to_dict(), "checks": len(checks), "passed": sum(c.passed for c in checks)}
    return ExperimentOutcome([], summary, {"formulas": path}, passed=passed)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentOutcome:
    """Run an experiment and write its artifacts under cfg.output_dir.

    Args:
        cfg: validated experiment config.
        workers: process count; cfg.workers takes precedence when set.

    Returns:
        ExperimentOutcome with records (curve experiments only), the summary and output paths.

    Raises:
        ValueError: on unknown env/algorithm parameters.
        OSError: if the output directory cannot be written.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    workers = cfg.workers or workers
    if cfg.experiment in ("lowerbound-bc", "gridworld-compare"):
        return _run_curves(cfg, workers)
    if cfg.experiment == "coverage-audit":
        return _coverage_audit(cfg)
    return _formula_suite(cfg)
