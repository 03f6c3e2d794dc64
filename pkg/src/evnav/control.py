"""Controllers and learning machinery: PD expert, reward, OU noise, replay, DDPG updates, BC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .neural import TANH, Adam, ContractError, Mlp, TrainingFault, mse_loss, soft_update
from .perception import STATE_DIM, STATE_SCALE
from .world import DV_MAX, DW_MAX, Action, VelocityCommand, W_MAX, V_MAX, V_MIN, clamp_increments

log = logging.getLogger(__name__)

ACTION_DIM = 2
ACTION_BOUNDS = np.array([DV_MAX, DW_MAX])


@dataclass(frozen=True)
class RewardParams:
    # smaller than the nominal 10 / 0.01: with those, ending an episode early beats following
    k_dist: float = 1.0
    k_x: float = 0.001
    alpha: float = 1.0
    d_col_min: float = 0.5
    x_target: float = 173.0
    d_target: float = 2.0
    x_band: float = 1.0
    d_band: float = 0.1
    d_ped_min: float = 1.0
    d_ped_max: float = 3.0
    bonus: float = 500.0
    penalty: float = 500.0

    def __post_init__(self):
        if min(self.k_dist, self.k_x, self.alpha) < 0:
            raise ValueError("k_dist, k_x and alpha must be non-negative")
        if self.d_col_min <= 0:
            raise ValueError("d_col_min must be positive")


def shaped_reward(e_x: float, e_d: float, p: RewardParams = RewardParams()) -> float:
    """Quadratic tracking penalty; the centering weight shrinks as distance error grows."""
    e_d2 = e_d * e_d
    return -p.k_dist * e_d2 - (p.k_x / (1.0 + p.alpha * e_d2)) * e_x * e_x


def reward_branch(e_x: float, e_d: float, d_obs: float, d_ped: float, p: RewardParams = RewardParams()) -> str:
    if abs(e_x) < p.x_band and abs(e_d) < p.d_band:
        return "success"
    if d_obs <= p.d_col_min:
        return "collision"
    if d_ped > p.d_ped_max or d_ped < p.d_ped_min:
        return "distance"
    return "shaped"


def compute_reward(e_x: float, e_d: float, d_obs: float, d_ped: float,
                   p: RewardParams = RewardParams()) -> tuple[float, bool]:
    """Returns ``(reward, terminal)``; branches are tested in a fixed order."""
    branch = reward_branch(e_x, e_d, d_obs, d_ped, p)
    if branch == "success":
        return p.bonus, False
    if branch in ("collision", "distance"):
        return -p.penalty, True
    return shaped_reward(e_x, e_d, p), False


@dataclass(frozen=True)
class PdGains:
    kp_x: float = 0.005
    kd_x: float = 0.001
    kp_d: float = 1.0
    kd_d: float = 0.1

    def __post_init__(self):
        if min(self.kp_x, self.kd_x, self.kp_d, self.kd_d) < 0:
            raise ValueError("PD gains must be non-negative")


def pd_control(x_box: float | None, d_ped: float | None, gains: PdGains,
               prev_errors: tuple[float, float] | None, dt: float,
               prev_cmd: VelocityCommand = VelocityCommand(),
               x_target: float = 173.0, d_target: float = 2.0):
    """PD law on image centering (angular) and distance (linear).

    Returns ``(command, errors)``. Without a detection the previous command is
    held and the stored errors are kept.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if x_box is None or d_ped is None:
        return prev_cmd, prev_errors
    e_x = x_target - x_box
    e_d = d_ped - d_target
    if prev_errors is None:
        de_x = de_d = 0.0
    else:
        de_x = (e_x - prev_errors[0]) / dt
        de_d = (e_d - prev_errors[1]) / dt
    w = gains.kp_x * e_x + gains.kd_x * de_x
    v = gains.kp_d * e_d + gains.kd_d * de_d
    cmd = VelocityCommand(min(max(v, V_MIN), V_MAX), min(max(w, -W_MAX), W_MAX))
    return cmd, (e_x, e_d)


class PdController:
    """Expert policy: PD velocities expressed as clamped increments on the current command."""

    def __init__(self, gains: PdGains = PdGains(), dt: float = 0.1):
        self.gains = gains
        self.dt = dt
        self.reset()

    def reset(self) -> None:
        self._errors = None

    def act(self, state: np.ndarray, detected: bool = True) -> np.ndarray:
        prev = VelocityCommand(float(state[0]), float(state[1]))
        if detected:
            cmd, self._errors = pd_control(float(state[2]), float(state[3]), self.gains, self._errors,
                                           self.dt, prev)
        else:
            cmd = prev
        nxt = clamp_increments(prev, Action(cmd.v - prev.v, cmd.omega - prev.omega))
        return np.array([nxt.v - prev.v, nxt.omega - prev.omega])


class ActorController:
    """Deterministic policy from an actor network over normalized states."""

    def __init__(self, actor: Mlp):
        self.actor = actor

    def reset(self) -> None:
        pass

    def act(self, state: np.ndarray, detected: bool = True) -> np.ndarray:
        return self.actor(np.asarray(state) * STATE_SCALE)


class OuNoise:
    """Discrete OU process, one step per control tick: ``x += theta (mu - x) + sigma N(0, 1)``."""

    def __init__(self, mu, theta, sigma, rng: np.random.Generator):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        self.rng = rng
        self.reset()

    def reset(self) -> None:
        self.x = self.mu.copy()

    def step(self) -> np.ndarray:
        self.x = self.x + self.theta * (self.mu - self.x) + self.sigma * self.rng.standard_normal(self.x.shape)
        return self.x.copy()


def ou_step(state: OuNoise) -> np.ndarray:
    return state.step()


def table1_noise(rng: np.random.Generator) -> OuNoise:
    """Exploration noise for (delta_v, delta_w) with the published (mu, theta, sigma)."""
    return OuNoise([0.0, 0.0], [0.0, 0.2], [0.2, 0.3], rng)


class ReplayBuffer:
    """FIFO ring buffer sampled uniformly with replacement."""

    def __init__(self, capacity: int = 1_000_000, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM,
                 warmup: int = 1000, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.warmup = warmup
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.s = np.empty((capacity, state_dim))
        self.a = np.empty((capacity, action_dim))
        self.r = np.empty(capacity)
        self.s2 = np.empty((capacity, state_dim))
        self.done = np.empty(capacity)
        self.ids = np.empty(capacity, dtype=np.int64)
        self.size = 0
        self.pushed = 0

    def __len__(self) -> int:
        return self.size

    @property
    def ready(self) -> bool:
        return self.size >= self.warmup

    def push(self, s, a, r, s2, terminal) -> None:
        i = self.pushed % self.capacity
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, float(terminal)
        self.ids[i] = self.pushed
        self.pushed += 1
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int = 64):
        if not self.ready or self.size == 0:
            raise ContractError(f"replay holds {self.size} transitions, warmup is {self.warmup}")
        idx = self.rng.integers(0, self.size, n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.ids[idx])


def replay_push(buffer: ReplayBuffer, s, a, r, s2, terminal) -> None:
    buffer.push(s, a, r, s2, terminal)


def replay_sample(buffer: ReplayBuffer, n: int = 64):
    return buffer.sample(n)


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    ids: np.ndarray | None = None


def make_actor(rng: np.random.Generator, sizes=(STATE_DIM, 30, 30, ACTION_DIM), bounds=ACTION_BOUNDS) -> Mlp:
    return Mlp.init(sizes, rng, output=TANH, bounds=bounds, final_scale=0.1)


def make_critic(rng: np.random.Generator, sizes=(STATE_DIM + ACTION_DIM, 30, 30, 1)) -> Mlp:
    return Mlp.init(sizes, rng)


@dataclass
class DdpgAgent:
    actor: Mlp
    critic: Mlp
    actor_target: Mlp = None
    critic_target: Mlp = None
    gamma: float = 0.99
    tau: float = 0.001
    actor_opt: Adam = field(default_factory=lambda: Adam(lr=1e-4))
    critic_opt: Adam = field(default_factory=lambda: Adam(lr=1e-4))

    def __post_init__(self):
        if self.actor_target is None:
            self.actor_target = self.actor.copy()
        if self.critic_target is None:
            self.critic_target = self.critic.copy()

    def td_targets(self, batch: Batch) -> np.ndarray:
        """``r + gamma * Q'(s', mu'(s'))``, bootstrap dropped on terminal transitions."""
        a2 = self.actor_target(batch.s2)
        q2 = self.critic_target(np.hstack([batch.s2, a2]))[:, 0]
        return batch.r + self.gamma * (1.0 - batch.done) * q2

    def critic_update(self, batch: Batch) -> float:
        y = self.td_targets(batch)
        q, cache = self.critic.forward(np.hstack([batch.s, batch.a]))
        loss, g = mse_loss(q, y[:, None])
        if not np.isfinite(loss):
            raise TrainingFault(f"non-finite critic loss {loss}")
        grad, _ = self.critic.backward(cache, g)
        self.critic_opt.step(self.critic, grad)
        return loss

    def policy_gradient(self, s: np.ndarray):
        """Gradient of ``-mean Q(s, mu(s))`` w.r.t. actor parameters, and ``mean Q``."""
        a, a_cache = self.actor.forward(s)
        q, c_cache = self.critic.forward(np.hstack([s, a]))
        n = s.shape[0]
        _, g_in = self.critic.backward(c_cache, np.full_like(q, -1.0 / n))
        grad, _ = self.actor.backward(a_cache, g_in[:, s.shape[1]:])
        return grad, float(q.mean())

    def actor_update(self, batch: Batch) -> float:
        grad, mean_q = self.policy_gradient(batch.s)
        if not np.isfinite(mean_q):
            raise TrainingFault(f"non-finite policy objective {mean_q}")
        self.actor_opt.step(self.actor, grad)
        return mean_q

    def update_targets(self) -> None:
        soft_update(self.actor_target, self.actor, self.tau)
        soft_update(self.critic_target, self.critic, self.tau)


@dataclass
class BcResult:
    actor: Mlp
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int


def bc_train(states: np.ndarray, actions: np.ndarray, actor: Mlp, epochs: int = 500, batch_size: int = 64,
             lr: float = 1e-3, rng: np.random.Generator | None = None, val_frac: float = 0.1,
             divergence: float = 1e6) -> BcResult:
    """Mini-batch regression of the actor onto expert actions (mean squared error).

    Returns the parameters with the best held-out loss on a 90/10 split; tiny
    datasets (< 10 pairs) are scored on the training loss instead.
    ``train_loss[0]`` is the loss before any update.
    """
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if len(states) == 0 or len(states) != len(actions):
        raise ContractError("dataset must be non-empty with one action per state")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(states)
    order = rng.permutation(n)
    n_val = int(round(val_frac * n)) if n >= 10 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    s_tr, a_tr = states[tr_idx], actions[tr_idx]
    s_va, a_va = states[val_idx], actions[val_idx]
    opt = Adam(lr=lr)

    def losses():
        tr = mse_loss(actor(s_tr), a_tr)[0]
        va = mse_loss(actor(s_va), a_va)[0] if n_val else tr
        return tr, va

    tr, va = losses()
    train_hist, val_hist = [tr], [va]
    best, best_epoch, best_flat = va, 0, actor.flat.copy()
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(s_tr))
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            pred, cache = actor.forward(s_tr[idx])
            loss, g = mse_loss(pred, a_tr[idx])
            if not np.isfinite(loss) or loss > divergence:
                raise TrainingFault(f"behavior cloning diverged at epoch {epoch}: loss {loss}")
            grad, _ = actor.backward(cache, g)
            opt.step(actor, grad)
        tr, va = losses()
        train_hist.append(tr)
        val_hist.append(va)
        if va < best:
            best, best_epoch, best_flat = va, epoch, actor.flat.copy()
    actor.flat[...] = best_flat
    log.info("bc: best held-out loss %.3g at epoch %d", best, best_epoch)
    return BcResult(actor, train_hist, val_hist, best_epoch)
