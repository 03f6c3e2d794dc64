"""Run configuration, episode orchestration, metrics and artifact export."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ActorController, PdController, PdGains, RewardParams, bc_train, make_actor
from .ddpg import DdpgConfig, TrainResult, ddpg_train
from .env import LOG_COLUMNS, FollowEnv, SimConfig
from .neural import Mlp, load_weights
from .world import DEFAULT_MAP, TerminationStatus, WorldMap

log = logging.getLogger(__name__)

QUANTITIES = ("v_r", "omega_r", "x_box", "d_ped")
STATUS_VALUES = {s.value for s in TerminationStatus}


class ConfigError(ValueError):
    pass


@dataclass
class BcConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    expert_episodes: int = 5
    expert_noise: list = field(default_factory=lambda: [0.05, 0.1])


@dataclass
class RunConfig:
    seed: int = 0
    scenario: str | None = None
    controller: str = "pd"
    weights: str | None = None
    episodes: int = 5
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    pd: PdGains = field(default_factory=PdGains)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    train_detector: str = "oracle"

    def world(self) -> WorldMap:
        return WorldMap.load(self.scenario or DEFAULT_MAP)

    def sim_config(self, detector: str | None = None) -> SimConfig:
        return dataclasses.replace(self.sim, reward=self.reward,
                                   detector=detector or self.sim.detector)

    def make_env(self, detector: str | None = None) -> FollowEnv:
        return FollowEnv(self.world(), self.sim_config(detector))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sim"].pop("reward")
        for k in ("limits", "lidar"):
            d["sim"].pop(k)
        return d


_SECTIONS = {"sim": SimConfig, "reward": RewardParams, "pd": PdGains, "ddpg": DdpgConfig, "bc": BcConfig}
_SIM_SKIP = {"reward", "limits", "lidar"}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig`; unknown keys and out-of-range values raise ``ConfigError``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _field_names(RunConfig))
    for key, cls in _SECTIONS.items():
        if isinstance(raw.get(key), dict):
            allowed = _field_names(cls) - (_SIM_SKIP if cls is SimConfig else set())
            unknown += sorted(f"{key}.{k}" for k in set(raw[key]) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, val in raw.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be an object")
            vals = dict(val)
            for k, v in vals.items():
                default = getattr(cls(), k)
                if isinstance(default, tuple) and isinstance(v, list):
                    vals[k] = tuple(v)
            try:
                kwargs[key] = cls(**vals)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            kwargs[key] = val
    cfg = RunConfig(**kwargs)
    if cfg.scenario is not None and base_dir is not None and not Path(cfg.scenario).is_absolute():
        cand = base_dir / cfg.scenario
        if cand.exists():
            cfg.scenario = str(cand)
    validate(cfg)
    return cfg


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> None:
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a non-negative integer")
    _check(isinstance(cfg.episodes, int) and cfg.episodes >= 0, "episodes must be a non-negative integer")
    _check(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers must be >= 1")
    if cfg.scenario is not None:
        _check(Path(cfg.scenario).is_file(), f"scenario file not found: {cfg.scenario}")
    if cfg.controller not in ("pd", "bc", "ddpg"):
        _check(Path(cfg.controller).is_file(), f"controller must be pd, bc, ddpg or a weight file: {cfg.controller}")
    if cfg.weights is not None:
        _check(Path(cfg.weights).is_file(), f"weights file not found: {cfg.weights}")
    s = cfg.sim
    _check(s.detector in ("sae", "oracle"), "sim.detector must be 'sae' or 'oracle'")
    _check(cfg.train_detector in ("sae", "oracle"), "train_detector must be 'sae' or 'oracle'")
    _check(s.dt > 0, "sim.dt must be > 0")
    _check(s.duration > 0, "sim.duration must be > 0")
    _check(s.ped_speed >= 0, "sim.ped_speed must be >= 0")
    _check(s.noise_rate >= 0, "sim.noise_rate must be >= 0")
    _check(s.depth_sigma >= 0, "sim.depth_sigma must be >= 0")
    _check(s.sae_window_us > 0, "sim.sae_window_us must be > 0")
    _check(0 <= s.sae_threshold <= 255, "sim.sae_threshold must be in [0,255]")
    _check(s.min_area >= 1, "sim.min_area must be >= 1")
    r = cfg.reward
    _check(min(r.k_dist, r.k_x, r.alpha) >= 0, "reward.k_dist, reward.k_x, reward.alpha must be >= 0")
    _check(r.d_col_min > 0, "reward.d_col_min must be > 0")
    d = cfg.ddpg
    _check(0 < d.tau <= 1, "tau must be in (0,1]")
    _check(0 <= d.gamma < 1, "gamma must be in [0,1)")
    _check(d.actor_lr > 0 and d.critic_lr > 0, "ddpg learning rates must be > 0")
    _check(d.batch_size >= 1, "ddpg.batch_size must be >= 1")
    _check(d.buffer_size >= d.batch_size, "ddpg.buffer_size must be >= batch_size")
    _check(d.warmup >= 1, "ddpg.warmup must be >= 1")
    _check(d.episodes >= 0, "ddpg.episodes must be >= 0")
    _check(d.noise_scale >= 0, "ddpg.noise_scale must be >= 0")
    b = cfg.bc
    _check(b.epochs >= 0 and b.batch_size >= 1 and b.lr > 0, "bc.epochs >= 0, bc.batch_size >= 1, bc.lr > 0")
    _check(len(b.expert_noise) == 2 and min(b.expert_noise) >= 0, "bc.expert_noise must be two non-negative values")


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return config_from_dict(raw, p.parent)


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.echo.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def episode_seeds(master_seed: int, n: int) -> list[int]:
    """Independent per-episode seeds: one spawned ``SeedSequence`` child per episode."""
    return [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(master_seed).spawn(n)]


# -- episodes ------------------------------------------------------------------

@dataclass
class EpisodeLog:
    rows: list[list]
    seed: int | None = None

    @property
    def status(self) -> str:
        return self.rows[-1][-1]

    @property
    def steps(self) -> int:
        return len(self.rows) - 1

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def run_episode(env: FollowEnv, controller, seed=None, max_steps: int | None = None,
                partial_path: str | Path | None = None) -> EpisodeLog:
    """Roll one episode at the control period, logging every tick including t=0.

    If a module error aborts the episode, the rows so far are written to
    ``partial_path`` (when given) before the error propagates.
    """
    rows: list[list] = []
    try:
        s = env.reset(seed)
        controller.reset()
        rows.append(env.log_row())
        detected = True
        limit = max_steps if max_steps is not None else env.n_steps + 1
        for _ in range(limit):
            s, _, done, info = env.step(controller.act(s, detected))
            detected = info["detected"]
            rows.append(env.log_row())
            if done:
                break
    except Exception:
        if partial_path is not None and rows:
            Path(partial_path).parent.mkdir(parents=True, exist_ok=True)
            write_episode_csv(partial_path, EpisodeLog(rows))
            log.error("episode aborted; partial log in %s", partial_path)
        raise
    return EpisodeLog(rows, seed if isinstance(seed, int) else None)


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_episode_csv(path: str | Path, ep: EpisodeLog) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(LOG_COLUMNS) + "\n")
        for r in ep.rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def read_episode_csv(path: str | Path) -> EpisodeLog:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(x) for x in r[:-1]] + [r[-1]] for r in reader]
    return EpisodeLog(rows)


# -- metrics -------------------------------------------------------------------

@dataclass
class MetricsTable:
    stats: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {q: dict(v) for q, v in self.stats.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        return cls({q: {k: float(x) for k, x in v.items()} for q, v in d.items()})

    def format(self) -> str:
        lines = [f"{'':10s}" + "".join(f"{q:>12s}" for q in self.stats)]
        for k in ("mean", "median", "std", "min", "max"):
            lines.append(f"{k:10s}" + "".join(f"{self.stats[q][k]:12.4f}" for q in self.stats))
        return "\n".join(lines)


def compute_metrics(logs: list[EpisodeLog]) -> MetricsTable:
    """Mean / median / population std / min / max per quantity, pooled over all rows."""
    if not logs or sum(len(ep.rows) for ep in logs) == 0:
        raise ValueError("no log rows to summarize")
    stats = {}
    for q in QUANTITIES:
        x = np.concatenate([ep.column(q) for ep in logs])
        stats[q] = {"mean": float(np.mean(x)), "median": float(np.median(x)), "std": float(np.std(x)),
                    "min": float(np.min(x)), "max": float(np.max(x))}
    return MetricsTable(stats)


# -- controllers & pipeline ------------------------------------------------------

def make_controller(cfg: RunConfig, weights: str | None = None):
    kind = cfg.controller
    if kind == "pd":
        return PdController(cfg.pd, cfg.sim.dt)
    path = weights or cfg.weights or (kind if kind not in ("bc", "ddpg") else None)
    if path is None:
        raise ConfigError(f"controller {kind!r} needs a weights file")
    return ActorController(load_weights(path))


def evaluate(cfg: RunConfig, controller, out_dir: str | Path | None = None, world: WorldMap | None = None):
    """Run ``cfg.episodes`` seeded episodes; with ``out_dir`` write the run directory."""
    seeds = episode_seeds(cfg.seed, cfg.episodes)
    if cfg.workers > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(cfg.workers) as pool:
            logs = list(pool.map(_episode_worker, [(cfg, controller, s) for s in seeds]))
    else:
        env = cfg.make_env()
        partial = (lambda i: Path(out_dir) / "episodes" / f"ep{i:03d}.partial.csv") if out_dir else (lambda i: None)
        logs = [run_episode(env, controller, s, partial_path=partial(i)) for i, s in enumerate(seeds)]
    metrics = compute_metrics(logs) if logs else None
    if out_dir is not None:
        write_run(out_dir, cfg, logs, metrics, world or cfg.world())
    return logs, metrics


def _episode_worker(args):
    cfg, controller, seed = args
    return run_episode(cfg.make_env(), controller, seed)


def write_run(out_dir, cfg: RunConfig, logs: list[EpisodeLog], metrics: MetricsTable | None,
              world: WorldMap | None = None) -> None:
    out = Path(out_dir)
    echo_config(cfg, out)
    render_outputs(logs, out, world, metrics)


def collect_expert(cfg: RunConfig, out_csv: str | Path | None = None):
    """PD rollouts with small executed-action perturbations, labelled with the clean PD action.

    Only episodes that end in GoalReached are kept. Returns ``(states, actions, kept, total)``
    with states in network (normalized) scale.
    """
    env = cfg.make_env(cfg.train_detector)
    pd = PdController(cfg.pd, cfg.sim.dt)
    noise = np.asarray(cfg.bc.expert_noise, dtype=float)
    S, A, kept = [], [], 0
    seeds = episode_seeds(cfg.seed + 1_000_003, cfg.bc.expert_episodes)
    for seed in seeds:
        rng = np.random.default_rng(seed + 1)
        s = env.reset(seed)
        pd.reset()
        detected, done = True, False
        ep_s, ep_a = [], []
        while not done:
            a = pd.act(s, detected)
            ep_s.append(env.normalize(s))
            ep_a.append(a)
            s, _, done, info = env.step(a + noise * rng.standard_normal(2))
            detected = info["detected"]
        if info["status"] is TerminationStatus.GOAL_REACHED:
            S.extend(ep_s)
            A.extend(ep_a)
            kept += 1
    states = np.array(S).reshape(-1, 6)
    actions = np.array(A).reshape(-1, 2)
    if out_csv is not None:
        write_dataset(out_csv, states, actions)
    return states, actions, kept, len(seeds)


def write_dataset(path: str | Path, states: np.ndarray, actions: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("s1,s2,s3,s4,s5,s6,a1,a2\n")
        for s, a in zip(states, actions):
            f.write(",".join(fmt(v) for v in (*s, *a)) + "\n")


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns s1..s6,a1,a2")
    return data[:, :6], data[:, 6:]


def train_bc(cfg: RunConfig, states, actions):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    actor = make_actor(rng)
    return bc_train(states, actions, actor, cfg.bc.epochs, cfg.bc.batch_size, cfg.bc.lr, rng)


def train_ddpg(cfg: RunConfig, init_actor: Mlp | None = None, out_dir=None, progress=None) -> TrainResult:
    dcfg = dataclasses.replace(cfg.ddpg, seed=cfg.seed)
    return ddpg_train(lambda: cfg.make_env(cfg.train_detector), dcfg, init_actor, out_dir, progress)


# -- SVG -----------------------------------------------------------------------

CANVAS_W, CANVAS_H = 900, 540
PX_PER_M = 40.0
MARGIN = 30.0
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def world_to_svg(x: float, y: float, height: float) -> tuple[float, float]:
    return MARGIN + PX_PER_M * x, MARGIN + PX_PER_M * (height - y)


def _pts(points) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def trajectory_svg(logs: list[EpisodeLog], world: WorldMap | None = None, ped_path=None) -> str:
    world = world or WorldMap()
    h = world.height
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" height="{CANVAS_H}" '
             f'viewBox="0 0 {CANVAS_W} {CANVAS_H}">',
             f'<rect class="boundary" x="{MARGIN:.2f}" y="{MARGIN:.2f}" width="{PX_PER_M * world.width:.2f}" '
             f'height="{PX_PER_M * h:.2f}" fill="none" stroke="black" stroke-width="2"/>']
    for r in world.obstacles:
        x0, y0 = world_to_svg(r.x, r.y + r.h, h)
        parts.append(f'<rect class="obstacle" x="{x0:.2f}" y="{y0:.2f}" width="{PX_PER_M * r.w:.2f}" '
                     f'height="{PX_PER_M * r.h:.2f}" fill="#888"/>')
    if ped_path is not None:
        pts = [world_to_svg(x, y, h) for x, y in ped_path]
        parts.append(f'<polyline class="pedestrian" points="{_pts(pts)}" fill="none" stroke="#999" '
                     f'stroke-dasharray="6,4" stroke-width="1.5"/>')
    for i, ep in enumerate(logs):
        xs, ys = ep.column("x_r"), ep.column("y_r")
        pts = [world_to_svg(x, y, h) for x, y in zip(xs, ys)]
        parts.append(f'<polyline class="robot" points="{_pts(pts)}" fill="none" '
                     f'stroke="{COLORS[i % len(COLORS)]}" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def timeseries_svg(logs: list[EpisodeLog], quantity: str) -> str:
    left, right, top, bottom = 70.0, 20.0, 30.0, 50.0
    pw, ph = CANVAS_W - left - right, CANVAS_H - top - bottom
    ts = [ep.column("t") for ep in logs]
    ys = [ep.column(quantity) for ep in logs]
    t_max = max((t.max() for t in ts if t.size), default=1.0) or 1.0
    lo = min((y.min() for y in ys if y.size), default=0.0)
    hi = max((y.max() for y in ys if y.size), default=1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5

    def sx(t):
        return left + pw * t / t_max

    def sy(v):
        return top + ph * (hi - v) / (hi - lo)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" height="{CANVAS_H}" '
             f'viewBox="0 0 {CANVAS_W} {CANVAS_H}">',
             f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
             f'<text x="{CANVAS_W / 2}" y="{CANVAS_H - 10}" text-anchor="middle" font-size="14">t [s]</text>',
             f'<text x="15" y="{top + ph / 2}" font-size="14" transform="rotate(-90 15 {top + ph / 2})" '
             f'text-anchor="middle">{quantity}</text>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        parts.append(f'<text x="{left - 5}" y="{sy(v) + 4:.2f}" text-anchor="end" font-size="11">{v:.3g}</text>')
        t = t_max * k / 4
        parts.append(f'<text x="{sx(t):.2f}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{t:.3g}</text>')
    for i, (t, y) in enumerate(zip(ts, ys)):
        pts = [(sx(a), sy(b)) for a, b in zip(t, y)]
        parts.append(f'<polyline points="{_pts(pts)}" fill="none" stroke="{COLORS[i % len(COLORS)]}" '
                     f'stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_outputs(logs: list[EpisodeLog], out_dir: str | Path, world: WorldMap | None = None,
                   metrics: MetricsTable | None = None) -> list[Path]:
    """Write episode CSVs, metrics.json and SVG plots under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "episodes").mkdir(parents=True, exist_ok=True)
        (out / "plots").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    written = []
    for i, ep in enumerate(logs):
        p = out / "episodes" / f"ep{i:03d}.csv"
        write_episode_csv(p, ep)
        written.append(p)
    if logs:
        metrics = metrics or compute_metrics(logs)
        doc = {
            "metrics": metrics.to_dict(),
            "episodes": [{"index": i, "seed": ep.seed, "steps": ep.steps, "status": ep.status}
                         for i, ep in enumerate(logs)],
        }
        p = out / "metrics.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(p)
    ped = None
    if world is not None:
        ped = world.pedestrian_path().sample(400)
    p = out / "plots" / "trajectory.svg"
    p.write_text(trajectory_svg(logs, world, ped))
    written.append(p)
    for q in QUANTITIES:
        if logs:
            p = out / "plots" / f"{q}.svg"
            p.write_text(timeseries_svg(logs, q))
            written.append(p)
    return written


def load_run(run_dir: str | Path) -> list[EpisodeLog]:
    files = sorted((Path(run_dir) / "episodes").glob("ep*.csv"))
    return [read_episode_csv(p) for p in files]


def metrics_from_json(path: str | Path) -> MetricsTable:
    return MetricsTable.from_dict(json.loads(Path(path).read_text())["metrics"])


def nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def reproduce(cfg: RunConfig, out_dir: str | Path, progress=None) -> dict:
    """Expert collection, behavior cloning, DDPG fine-tuning and evaluation of PD vs the trained actor.

    Writes ``expert.csv``, ``bc.wts``, ``ddpg/`` checkpoints and ``eval_pd``/``eval_rl`` run
    directories under ``out_dir``; returns their metrics and termination statuses.
    """
    out = Path(out_dir)
    echo_config(cfg, out)
    states, actions, kept, total = collect_expert(cfg, out / "expert.csv")
    log.info("expert: kept %d/%d episodes, %d transitions", kept, total, len(states))
    if len(states) == 0:
        raise RuntimeError("no successful expert episodes to clone")
    bc = train_bc(cfg, states, actions)
    from .neural import save_weights
    save_weights(bc.actor, out / "bc.wts")
    res = train_ddpg(cfg, bc.actor, out / "ddpg", progress)
    pd_logs, pd_metrics = evaluate(cfg, PdController(cfg.pd, cfg.sim.dt), out / "eval_pd")
    rl_logs, rl_metrics = evaluate(cfg, ActorController(res.best_actor), out / "eval_rl")
    return {
        "expert_transitions": len(states),
        "ddpg_episodes": len(res.log),
        "pd": pd_metrics, "rl": rl_metrics,
        "pd_status": [ep.status for ep in pd_logs],
        "rl_status": [ep.status for ep in rl_logs],
    }
