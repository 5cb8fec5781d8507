"""Seeded experiment runner, reward metric and CSV emission."""
from __future__ import annotations

import csv
import json
import platform
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agents import TBoredAgent, VPIAgent, make_estimator, make_vpi_agent
from .belief import Experience, PriorConfig
from .estimators import DEFAULT_K, ESTIMATORS
from .gridworld import SHIPPED_MAPS, EnvConfig, Maze, load_map
from .mdp import DEFAULT_PRIORITY_THRESHOLD, DEFAULT_SWEEP_BUDGET
from .vpi import SMOOTHERS

AGENT_KINDS = ("vpi", "tbored")


class ConfigError(ValueError):
    pass


@dataclass
class AgentSpec:
    name: str
    kind: str = "vpi"
    estimator: str = "repair"
    smoother: str = "kernel"
    k: int = DEFAULT_K
    k_min: float | None = None
    sweep_budget: int | None = DEFAULT_SWEEP_BUDGET
    priority_threshold: float = DEFAULT_PRIORITY_THRESHOLD
    carry_priority: bool = True
    resample_every: int = 1
    local_resample: str = "points"
    prior: PriorConfig = field(default_factory=PriorConfig)
    t_bored: int | None = None
    t_bored_candidates: list[int] = field(default_factory=lambda: [1, 2, 3, 5, 8, 13])

    def validate(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ConfigError(f"agent {self.name!r}: kind must be one of {AGENT_KINDS}")
        if self.kind == "vpi":
            if self.estimator not in ESTIMATORS:
                raise ConfigError(f"agent {self.name!r}: unknown estimator {self.estimator!r}")
            if self.smoother not in SMOOTHERS:
                raise ConfigError(f"agent {self.name!r}: unknown smoother {self.smoother!r}")
            if self.k < 1:
                raise ConfigError(f"agent {self.name!r}: k must be positive")
            if self.resample_every < 1:
                raise ConfigError(f"agent {self.name!r}: resample_every must be positive")
        elif self.t_bored is None and not self.t_bored_candidates:
            raise ConfigError(f"agent {self.name!r}: needs t_bored or t_bored_candidates")

    @classmethod
    def from_dict(cls, data: dict) -> "AgentSpec":
        data = dict(data)
        if "prior" in data:
            data["prior"] = PriorConfig.from_dict(data["prior"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown agent fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["prior"] = self.prior.to_dict()
        return out


@dataclass
class ExperimentConfig:
    environment: str = "trap"
    agents: list[AgentSpec] = field(default_factory=list)
    env: EnvConfig = field(default_factory=EnvConfig)
    num_runs: int = 10
    num_steps: int = 1000
    seed: int = 0
    horizon: int = 200
    probe_states: list[int] = field(default_factory=list)
    snapshot_every: int = 0
    out_dir: str = "results"

    @property
    def discount(self) -> float:
        return self.env.discount

    def validate(self) -> None:
        if self.num_runs < 1:
            raise ConfigError("num_runs must be at least 1")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be nonnegative")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.environment not in SHIPPED_MAPS and not Path(self.environment).is_file():
            raise ConfigError(f"environment {self.environment!r} is neither a shipped map nor a file")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError("agent names must be unique")
        for agent in self.agents:
            agent.validate()

    def maze(self) -> Maze:
        return Maze(load_map(self.environment), self.env)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data["agents"] = [AgentSpec.from_dict(a) for a in data.get("agents", [])]
        if "env" in data:
            data["env"] = EnvConfig(**data["env"])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["agents"] = [a.to_dict() for a in self.agents]
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
        env = data.get("environment")
        # relative map paths resolve against the config file's directory
        if env and env not in SHIPPED_MAPS and not Path(env).is_absolute():
            data["environment"] = str((path.parent / env).resolve())
        return cls.from_dict(data)


@dataclass
class RunTrace:
    agent: str
    run_index: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    solves: np.ndarray  # cumulative, after each step
    backups: np.ndarray
    snapshots: list[tuple] = field(default_factory=list)  # (step, state, action, sample, value, weight)
    t_bored: int | None = None
    final_q: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    def experiences(self):
        for s, a, r, t in zip(self.states, self.actions, self.rewards, self.next_states):
            yield Experience(int(s), int(a), float(r), int(t))


def run_seeds(seed: int, run_index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """(environment, agent) streams for one run.

    Every agent sees the same environment stream for a given run index.
    """
    root = np.random.SeedSequence([seed, run_index])
    env_seq, agent_seq = root.spawn(2)
    return env_seq, agent_seq


def _agent_stream(seq: np.random.SeedSequence, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seq.entropy,
                                                        spawn_key=seq.spawn_key + (zlib.crc32(name.encode()),)))


def build_agent(spec: AgentSpec, maze: Maze, rng: np.random.Generator, t_bored: int | None = None):
    S, A = maze.num_states, maze.num_actions
    support, discount = maze.reward_support, maze.cfg.discount
    if spec.kind == "tbored":
        t = spec.t_bored if t_bored is None else t_bored
        if t is None:
            raise ConfigError(f"agent {spec.name!r}: t_bored not set (run tune_tbored first)")
        return TBoredAgent(S, A, support, discount, t, spec.sweep_budget, spec.priority_threshold,
                           spec.carry_priority)
    options: dict = {}
    if spec.estimator == "naive":
        options["resample_every"] = spec.resample_every
    elif spec.estimator == "importance":
        options["k_min"] = spec.k_min
    elif spec.estimator == "repair":
        options["sweep_budget"] = spec.sweep_budget
        options["priority_threshold"] = spec.priority_threshold
        options["carry_priority"] = spec.carry_priority
    elif spec.estimator == "local":
        options["sweep_budget"] = spec.sweep_budget
        options["resample"] = spec.local_resample
    estimator = make_estimator(spec.estimator, spec.k, **options)
    return make_vpi_agent(S, A, support, discount, spec.prior, estimator, spec.smoother, rng)


def _snapshot(agent, step: int, states: Sequence[int], out: list) -> None:
    if not isinstance(agent, VPIAgent):
        return
    for s in states:
        values, weights = agent.action_samples(s)
        weights = np.broadcast_to(weights, values.shape)
        for a in range(values.shape[0]):
            for i in range(values.shape[1]):
                out.append((step, s, a, i, float(values[a, i]), float(weights[a, i])))


def run_agent(config: ExperimentConfig, run_index: int, agent: AgentSpec | str | None = None,
              t_bored: int | None = None, maze: Maze | None = None) -> RunTrace:
    """One seeded run of one agent; deterministic in (config, run_index)."""
    config.validate()
    spec = _pick_agent(config, agent)
    maze = maze or config.maze()
    env_seq, agent_seq = run_seeds(config.seed, run_index)
    env_rng = np.random.default_rng(env_seq)
    learner = build_agent(spec, maze, _agent_stream(agent_seq, spec.name), t_bored)
    n = config.num_steps
    states, actions = np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    next_states, rewards = np.zeros(n, dtype=np.int64), np.zeros(n)
    solves, backups = np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    snapshots: list[tuple] = []
    probes = list(config.probe_states)
    if config.snapshot_every and probes:
        _snapshot(learner, 0, probes, snapshots)
    s = maze.start_state
    for i in range(n):
        a = learner.act(s)
        t, r = maze.step(s, a, env_rng)
        learner.observe(Experience(s, a, r, t))
        states[i], actions[i], rewards[i], next_states[i] = s, a, r, t
        solves[i], backups[i] = learner.cost.solves, learner.cost.backups
        if config.snapshot_every and probes and (i + 1) % config.snapshot_every == 0:
            _snapshot(learner, i + 1, probes, snapshots)
        s = t
    used_t = getattr(learner, "t_bored", None)
    return RunTrace(spec.name, run_index, states, actions, rewards, next_states, solves, backups,
                    snapshots, used_t, np.array(learner.greedy_q()))


def _pick_agent(config: ExperimentConfig, agent) -> AgentSpec:
    if isinstance(agent, AgentSpec):
        return agent
    if not config.agents:
        raise ConfigError("config lists no agents")
    if agent is None:
        return config.agents[0]
    for spec in config.agents:
        if spec.name == agent:
            return spec
    raise ConfigError(f"no agent named {agent!r}")


def discounted_future_reward(trace: RunTrace | np.ndarray, t: int, discount: float, horizon: int) -> float:
    """sum_{i<H} gamma^i r_{t+i}; needs the whole horizon inside the trace."""
    rewards = trace.rewards if isinstance(trace, RunTrace) else np.asarray(trace, dtype=float)
    if t < 0 or t + horizon > len(rewards):
        raise ValueError(f"horizon {horizon} from step {t} exceeds trace length {len(rewards)}")
    return float(np.asarray(rewards[t:t + horizon]) @ discount ** np.arange(horizon))


def reward_curve(rewards, discount: float, horizon: int) -> np.ndarray:
    """The metric at every t with a full horizon; length len(rewards) - H + 1."""
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) < horizon:
        return np.zeros(0)
    kernel = discount ** np.arange(horizon)
    return np.convolve(rewards, kernel[::-1], mode="valid")


def score_trace(trace: RunTrace, config: ExperimentConfig) -> float:
    """Mean of the reward curve; the raw discounted total when the trace is shorter than H."""
    curve = reward_curve(trace.rewards, config.discount, config.horizon)
    if curve.size:
        return float(curve.mean())
    return float(trace.rewards @ config.discount ** np.arange(len(trace)))


def tune_tbored(config: ExperimentConfig, candidates: Sequence[int] | None = None,
                agent: AgentSpec | str | None = None, num_runs: int | None = None) -> int:
    """Candidate with the best average reward curve over runs (ties: earliest candidate).

    Scoring the curve rather than sum_t gamma^t r_t keeps late steps in play;
    the plain discounted total is dominated by the first few dozen steps.
    """
    spec = _pick_agent(config, agent) if agent is not None else next(
        (a for a in config.agents if a.kind == "tbored"), AgentSpec("tbored", kind="tbored"))
    cands = list(candidates if candidates is not None else spec.t_bored_candidates)
    if not cands:
        raise ConfigError("no t_bored candidates")
    if len(cands) == 1:
        return int(cands[0])
    maze = config.maze()
    runs = config.num_runs if num_runs is None else num_runs
    best, best_score = cands[0], -np.inf
    for cand in cands:
        score = np.mean([score_trace(run_agent(config, i, spec, t_bored=cand, maze=maze), config)
                         for i in range(runs)])
        if score > best_score:
            best, best_score = cand, score
    return int(best)


def run_experiment(config: ExperimentConfig, progress=None) -> dict[str, list[RunTrace]]:
    """All agents, all runs.  Untuned baselines are tuned first."""
    config.validate()
    maze = config.maze()
    traces: dict[str, list[RunTrace]] = {}
    for spec in config.agents:
        t_bored = None
        if spec.kind == "tbored" and spec.t_bored is None:
            t_bored = tune_tbored(config, agent=spec)
        runs = []
        for i in range(config.num_runs):
            runs.append(run_agent(config, i, spec, t_bored=t_bored, maze=maze))
            if progress:
                progress(spec.name, i)
        traces[spec.name] = runs
    return traces


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def aggregate_and_emit(traces: dict[str, list[RunTrace]] | Sequence[RunTrace],
                       config: ExperimentConfig, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write reward_curve.csv, qdist_snapshots.csv, costs.csv and manifest.json."""
    if not isinstance(traces, dict):
        grouped: dict[str, list[RunTrace]] = {}
        for tr in traces:
            grouped.setdefault(tr.agent, []).append(tr)
        traces = grouped
    if not any(traces.values()):
        raise ValueError("no traces to aggregate")
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("reward_curve.csv", "qdist_snapshots.csv", "costs.csv", "manifest.json")}

    curve_rows, cost_rows, snap_rows = [], [], []
    for agent, runs in traces.items():
        curves = np.array([reward_curve(tr.rewards, config.discount, config.horizon) for tr in runs])
        mean = curves.mean(axis=0)
        stderr = (curves.std(axis=0, ddof=1) / np.sqrt(len(runs)) if len(runs) > 1
                  else np.zeros_like(mean))
        curve_rows += [(agent, t, repr(float(m)), repr(float(e)))
                       for t, (m, e) in enumerate(zip(mean, stderr))]
        for tr in runs:
            cost_rows += [(agent, tr.run_index, i + 1, int(sv), int(bk))
                          for i, (sv, bk) in enumerate(zip(tr.solves, tr.backups))]
            snap_rows += [(agent, tr.run_index, *row) for row in tr.snapshots]

    _write_csv(paths["reward_curve.csv"], ("agent", "step", "mean", "stderr"), curve_rows)
    _write_csv(paths["costs.csv"], ("agent", "run", "step", "solves", "backups"), cost_rows)
    _write_csv(paths["qdist_snapshots.csv"],
               ("agent", "run", "step", "state", "action", "sample", "value", "weight"), snap_rows)

    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config.to_dict(),
        "seeds": {"base": config.seed,
                  "runs": {agent: [[config.seed, tr.run_index] for tr in runs]
                           for agent, runs in traces.items()}},
        "t_bored": {agent: runs[0].t_bored for agent, runs in traces.items()
                    if runs and runs[0].t_bored is not None},
    }
    try:
        paths["manifest.json"].write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {paths['manifest.json']}: {exc}") from exc
    return paths


def with_agents(config: ExperimentConfig, agents: Sequence[AgentSpec]) -> ExperimentConfig:
    return replace(config, agents=list(agents))
