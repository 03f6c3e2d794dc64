"""DDPG training loop with replay, OU exploration, target networks and checkpoints."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .control import ACTION_BOUNDS, DdpgAgent, OuNoise, ReplayBuffer, make_actor, make_critic
from .neural import Adam, Mlp, TrainingFault, save_weights

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ["episode", "steps", "return", "termination", "mean_q", "actor_loss", "critic_loss"]


@dataclass
class DdpgConfig:
    episodes: int = 3000
    gamma: float = 0.99
    tau: float = 0.001
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    batch_size: int = 64
    buffer_size: int = 1_000_000
    warmup: int = 1000
    actor_delay: int = 100_000  # critic-only updates after warmup before the actor starts learning
    ou_mu: list = field(default_factory=lambda: [0.0, 0.0])
    ou_theta: list = field(default_factory=lambda: [0.0, 0.2])
    ou_sigma: list = field(default_factory=lambda: [0.2, 0.3])
    actor_sizes: list = field(default_factory=lambda: [6, 30, 30, 2])
    critic_sizes: list = field(default_factory=lambda: [8, 30, 30, 1])
    action_bounds: list = field(default_factory=lambda: ACTION_BOUNDS.tolist())
    noise_scale: float = 0.03  # multiplies ou_sigma
    reward_scale: float = 0.01
    max_steps: int = 100_000
    early_stop_goals: int = 50
    eval_every: int = 10  # greedy evaluation period for best-actor selection; 0 = use training returns
    eval_episodes: int = 3
    eval_seed: int = 12345
    seed: int = 0


@dataclass
class TrainResult:
    actor: Mlp
    critic: Mlp
    best_actor: Mlp
    agent: DdpgAgent | None
    log: list[dict]
    best_score: float


def evaluate_actor(env, actor: Mlp, c: "DdpgConfig") -> tuple[int, float]:
    """Greedy score ``(goals, mean return)`` over ``c.eval_episodes`` fixed seeds; compared lexicographically."""
    results = [run_greedy(env, actor, c.eval_seed + i, c.max_steps) for i in range(c.eval_episodes)]
    goals = sum(status == "GoalReached" for _, status in results)
    return goals, float(np.mean([r for r, _ in results]))


def run_greedy(env, actor: Mlp, seed, max_steps: int, gamma: float = 1.0) -> tuple[float, str]:
    """Noise-free rollout; returns the (discounted) return and the final status."""
    s = env.reset(seed)
    total, disc = 0.0, 1.0
    status = "Running"
    for _ in range(max_steps):
        s, r, done, info = env.step(actor(env.normalize(s)))
        total += disc * r
        disc *= gamma
        status = info["status"].value
        if done:
            break
    return total, status


def ddpg_train(env_factory: Callable[[], object], config: DdpgConfig = DdpgConfig(), init_actor: Mlp | None = None,
               out_dir: str | Path | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train an actor-critic pair on episodes drawn from ``env_factory()``.

    One critic step, one actor step and one soft target update per environment
    step once the replay buffer passes ``warmup`` (the actor waits a further
    ``actor_delay`` updates). The best actor is chosen by greedy
    evaluation every ``eval_every`` episodes (the starting actor included;
    most GoalReached episodes first, then mean return), or by training return
    when ``eval_every`` is 0. With ``out_dir``
    the training log and checkpoints are written there, also on failure.
    """
    c = config
    ss = np.random.SeedSequence(c.seed)
    init_rng, noise_rng, buf_rng, env_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    actor = init_actor.copy() if init_actor is not None else make_actor(init_rng, c.actor_sizes, c.action_bounds)
    if init_actor is not None:
        make_actor(init_rng, c.actor_sizes, c.action_bounds)  # keep the critic draw independent of init source
    critic = make_critic(init_rng, c.critic_sizes)
    agent = DdpgAgent(actor, critic, gamma=c.gamma, tau=c.tau,
                      actor_opt=Adam(lr=c.actor_lr), critic_opt=Adam(lr=c.critic_lr))
    noise = OuNoise(c.ou_mu, c.ou_theta, np.asarray(c.ou_sigma) * c.noise_scale, noise_rng)
    buffer = ReplayBuffer(c.buffer_size, c.actor_sizes[0], c.actor_sizes[-1], c.warmup, buf_rng)
    env = env_factory()
    eval_env = env_factory() if c.eval_every else None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    best_actor = actor.copy()
    best_score = (-1, -np.inf) if eval_env is not None else -np.inf
    if eval_env is not None and c.episodes > 0:
        best_score = evaluate_actor(eval_env, actor, c)
    goal_streak = 0
    updates = 0
    t_start = time.perf_counter()
    try:
        for ep in range(1, c.episodes + 1):
            s = env.reset(env_rng)
            s_n = env.normalize(s)
            noise.reset()
            ret, steps = 0.0, 0
            qs, a_losses, c_losses = [], [], []
            status = "Running"
            for _ in range(c.max_steps):
                a = actor(s_n) + noise.step()
                a = np.clip(a, -agent.actor.bounds, agent.actor.bounds)
                s2, r, done, info = env.step(a)
                s2_n = env.normalize(s2)
                buffer.push(s_n, a, r * c.reward_scale, s2_n, done)
                ret += r
                steps += 1
                status = info["status"].value
                s_n = s2_n
                if done:
                    break
                if buffer.ready:
                    batch = buffer.sample(c.batch_size)
                    c_losses.append(agent.critic_update(batch))
                    updates += 1
                    if updates > c.actor_delay:
                        q = agent.actor_update(batch)
                        qs.append(q)
                        a_losses.append(-q)
                    agent.update_targets()
            row = {
                "episode": ep,
                "steps": steps,
                "return": ret,
                "termination": status,
                "mean_q": float(np.mean(qs)) if qs else float("nan"),
                "actor_loss": float(np.mean(a_losses)) if a_losses else float("nan"),
                "critic_loss": float(np.mean(c_losses)) if c_losses else float("nan"),
            }
            rows.append(row)
            if progress is not None:
                progress(row)
            if eval_env is not None:
                if ep % c.eval_every == 0:
                    score = evaluate_actor(eval_env, actor, c)
                    if score > best_score:
                        best_score, best_actor = score, actor.copy()
                        _checkpoint(out, agent, best_actor)
            elif ret > best_score:
                best_score, best_actor = ret, actor.copy()
                _checkpoint(out, agent, best_actor)
            if ep % 50 == 0:
                log.info("episode %d return %.1f (%s) best %s, %.0fs", ep, ret, status, best_score,
                         time.perf_counter() - t_start)
            goal_streak = goal_streak + 1 if status == "GoalReached" else 0
            if c.early_stop_goals and goal_streak >= c.early_stop_goals:
                log.info("early stop after %d consecutive goals", goal_streak)
                break
    except (TrainingFault, FloatingPointError, ValueError) as exc:
        log.error("training aborted at episode %d: %s", len(rows) + 1, exc)
        _write_log(out, rows)
        _checkpoint(out, agent, best_actor)
        raise
    _write_log(out, rows)
    _checkpoint(out, agent, best_actor)
    best = best_score[1] if isinstance(best_score, tuple) else best_score
    return TrainResult(agent.actor, agent.critic, best_actor, agent, rows, float(best))


def _checkpoint(out: Path | None, agent: DdpgAgent, best_actor: Mlp) -> None:
    if out is None:
        return
    save_weights(best_actor, out / "actor_best.wts")
    save_weights(agent.actor, out / "actor.wts")
    save_weights(agent.critic, out / "critic.wts")
    save_weights(agent.actor_target, out / "actor_target.wts")
    save_weights(agent.critic_target, out / "critic_target.wts")


def _write_log(out: Path | None, rows: list[dict]) -> None:
    if out is None:
        return
    with open(out / "train_log.csv", "w", newline="") as f:
        w = csv.DictWriter(f, TRAIN_LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def config_dict(c: DdpgConfig) -> dict:
    return asdict(c)
