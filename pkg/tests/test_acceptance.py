"""Acceptance criteria, one test per criterion; a PASS/FAIL line for each is printed in the summary."""

import math
import time

import numpy as np
import pytest

from conftest import chained_grad_error, mlp_grad_error, record
from evnav.control import (DdpgAgent, OuNoise, RewardParams, compute_reward, make_actor, make_critic,
                           reward_branch, table1_noise)
from evnav.ddpg import DdpgConfig, ddpg_train
from evnav.env import DistanceKeepingEnv
from evnav.events import Event, build_sae, events_from_records
from evnav.harness import RunConfig, collect_expert, reproduce, train_bc
from evnav.neural import soft_update
from evnav.world import RobotPose, TerminationStatus, VelocityCommand, step_kinematics, wrap_angle
from scenarios import distance_bound_scenario, feature_lost_scenario, goal_scenario, obstacle_scenario


def reward_table(rng, n_per_branch=50):
    p = RewardParams()
    cases = []
    for _ in range(n_per_branch):
        cases.append(((rng.uniform(-0.99, 0.99), rng.uniform(-0.099, 0.099), rng.uniform(0, 5),
                       rng.uniform(0, 6)), "success", (p.bonus, False)))
        e_x = rng.uniform(1, 300) * rng.choice([-1, 1])
        cases.append(((e_x, rng.uniform(-2, 2), rng.uniform(0, 0.5), rng.uniform(0, 6)), "collision",
                      (-p.penalty, True)))
        d_ped = rng.choice([rng.uniform(0, 0.999), rng.uniform(3.001, 8)])
        cases.append(((e_x, d_ped - p.d_target, rng.uniform(0.501, 5), d_ped), "distance", (-p.penalty, True)))
        d_ped = rng.uniform(1.0, 3.0)
        e_d = d_ped - p.d_target
        e_x = rng.uniform(1, 300) * rng.choice([-1, 1])
        r = -p.k_dist * e_d ** 2 - p.k_x / (1 + p.alpha * e_d ** 2) * e_x ** 2
        cases.append(((e_x, e_d, rng.uniform(0.501, 5), d_ped), "shaped", (r, False)))
    return cases, p


def test_exactness_suite():
    t0 = time.perf_counter()
    cases, p = reward_table(np.random.default_rng(0))
    reward_ok = all(reward_branch(*args, p) == br and compute_reward(*args, p)[1] == out[1]
                    and math.isclose(compute_reward(*args, p)[0], out[0], rel_tol=1e-12, abs_tol=1e-12)
                    for args, br, out in cases)
    t_init, dt = 0, 10_000
    ev = events_from_records([Event(0, 0, t_init, 1), Event(1, 0, t_init + dt, 1), Event(2, 0, t_init + 5000, 1)])
    f = build_sae(ev, t_init, dt)
    sae_ok = (int(f.pos[0, 0]), int(f.pos[0, 1]), int(f.pos[0, 2])) == (0, 255, 128)
    rng = np.random.default_rng(1)
    soft_err = 0.0
    for tau in (0.0, 0.001, 1.0):
        src, tgt = make_critic(rng), make_critic(rng)
        expect = tau * src.flat + (1 - tau) * tgt.flat
        soft_update(tgt, src, tau)
        soft_err = max(soft_err, float(np.max(np.abs(tgt.flat - expect))))
    elapsed = time.perf_counter() - t0
    ok = reward_ok and sae_ok and soft_err <= 1e-15 and elapsed < 1.0
    record("exactness", ok, f"{len(cases)} reward cases {'ok' if reward_ok else 'MISMATCH'}, "
           f"SAE {'0/255/128' if sae_ok else 'WRONG'}, soft-update err {soft_err:.1e}, {elapsed:.2f}s")
    assert ok


def test_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    n = 0
    for _ in range(50):
        for net in (make_actor(rng), make_critic(rng)):
            net.flat[:] = rng.uniform(-0.5, 0.5, net.flat.size)
            x = rng.normal(size=(2, net.sizes[0]))
            worst = max(worst, mlp_grad_error(net, x, rng.normal(size=(2, net.sizes[-1]))))
            n += 1
    chain = 0.0
    for _ in range(10):
        agent = DdpgAgent(make_actor(rng), make_critic(rng))
        agent.actor.flat[:] = rng.uniform(-0.5, 0.5, agent.actor.flat.size)
        agent.critic.flat[:] = rng.uniform(-0.5, 0.5, agent.critic.flat.size)
        chain = max(chain, chained_grad_error(agent, rng.normal(size=(3, 6))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and chain <= 1e-4 and elapsed < 30
    record("gradient fidelity", ok, f"{n} nets max rel err {worst:.2e}, chained {chain:.2e}, {elapsed:.1f}s")
    assert ok


def test_kinematics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    h = 1e-5
    worst_p = worst_h = 0.0
    for _ in range(50):
        v = rng.uniform(0, 1, 100)
        w = rng.uniform(-0.5, 0.5, 100)
        pose = RobotPose(0.0, 0.0, 0.0)
        for k in range(100):
            pose = step_kinematics(pose, VelocityCommand(v[k], w[k]), 0.1)
        # explicit Euler at 1e-5 s, vectorised across the 10 000 substeps of each control tick
        x = y = th = 0.0
        n = int(round(0.1 / h))
        for k in range(100):
            ths = th + w[k] * h * np.arange(n)
            x += v[k] * h * np.cos(ths).sum()
            y += v[k] * h * np.sin(ths).sum()
            th += w[k] * h * n
        worst_p = max(worst_p, math.hypot(pose.x - x, pose.y - y))
        worst_h = max(worst_h, abs(wrap_angle(pose.theta - th)))
    elapsed = time.perf_counter() - t0
    ok = worst_p <= 1e-3 and worst_h <= 1e-3 and elapsed < 60
    record("kinematics oracle", ok, f"50 rollouts, pos err {worst_p:.2e} m, heading err {worst_h:.2e} rad, "
           f"{elapsed:.1f}s")
    assert ok


def test_ou_statistics():
    t0 = time.perf_counter()
    ou = table1_noise(np.random.default_rng(11))
    n = 1_000_000
    # the Δω channel only; stepping the full process keeps the published parameters in play
    theta, sigma = ou.theta[1], ou.sigma[1]
    z = ou.rng.standard_normal(n)
    xs = np.empty(n)
    x = 0.0
    for i in range(n):
        x = x - theta * x + sigma * z[i]
        xs[i] = x
    burn = 1000
    var = xs[burn:].var()
    analytic = sigma ** 2 / (2 * theta - theta ** 2)
    var_ok = abs(var - analytic) / analytic <= 0.10
    walks = OuNoise(np.zeros(4000), 0.0, 0.2, np.random.default_rng(12))
    steps = np.arange(1, 201)
    v = np.array([walks.step().var() for _ in steps])
    slope, icpt = np.polyfit(steps, v, 1)
    r2 = 1 - np.sum((v - (slope * steps + icpt)) ** 2) / np.sum((v - v.mean()) ** 2)
    elapsed = time.perf_counter() - t0
    ok = var_ok and r2 >= 0.99 and elapsed < 30
    record("OU statistics", ok, f"Δω var {var:.4f} vs {analytic:.4f} ({100 * (var / analytic - 1):+.1f}%), "
           f"Δv random-walk R² {r2:.4f} (slope {slope:.4f}, σ²=0.04), {elapsed:.1f}s")
    assert ok


def test_bc_convergence():
    t0 = time.perf_counter()
    cfg = RunConfig(seed=0)
    cfg.bc.expert_episodes = 5
    states, actions, kept, total = collect_expert(cfg)
    res = train_bc(cfg, states, actions)
    final = min(res.train_loss)
    ratio = final / res.train_loss[0]
    elapsed = time.perf_counter() - t0
    ok = len(states) >= 2000 and ratio <= 0.10 and elapsed < 300
    record("BC convergence", ok, f"{len(states)} transitions from {kept}/{total} expert episodes, "
           f"MSE {res.train_loss[0]:.3g} -> {final:.3g} ({100 * ratio:.1f}%), {elapsed:.0f}s")
    assert ok


def test_ddpg_toy_learning():
    t0 = time.perf_counter()
    cfg = DdpgConfig(episodes=2000, actor_sizes=[1, 30, 30, 1], critic_sizes=[2, 30, 30, 1], action_bounds=[0.2],
                     ou_mu=[0.0], ou_theta=[0.15], ou_sigma=[0.1], noise_scale=1.0, reward_scale=1.0,
                     actor_delay=0, eval_every=0, early_stop_goals=0, seed=3)
    res = ddpg_train(DistanceKeepingEnv, cfg)
    R = np.array([r["return"] for r in res.log])
    first, last = R[:100].mean(), R[-100:].mean()
    gain = (last - first) / abs(first)
    elapsed = time.perf_counter() - t0
    ok = gain >= 0.5 and elapsed < 1800
    record("DDPG toy learning", ok, f"mean return first 100 {first:.2f}, last 100 {last:.2f} "
           f"({100 * gain:.0f}% better), {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_full_scenario_directional(tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig(seed=0)
    cfg.ddpg.episodes = 1500
    cfg.ddpg.early_stop_goals = 0
    res = reproduce(cfg, tmp_path / "full")
    pd, rl = res["pd"].stats, res["rl"].stats
    goals = sum(s == TerminationStatus.GOAL_REACHED.value for s in res["rl_status"])
    a = 1.8 <= rl["d_ped"]["mean"] <= 2.4
    b = abs(rl["x_box"]["mean"] - 173) <= 15
    c = rl["x_box"]["std"] < pd["x_box"]["std"]
    d = goals >= 3
    elapsed = time.perf_counter() - t0
    ok = a and b and c and d and res["ddpg_episodes"] >= 1500 and elapsed <= 4 * 3600
    record("full-scenario directional", ok,
           f"d_ped {rl['d_ped']['mean']:.3f} [{'ok' if a else 'x'}], x_box mean {rl['x_box']['mean']:.1f} "
           f"[{'ok' if b else 'x'}], std RL {rl['x_box']['std']:.1f} vs PD {pd['x_box']['std']:.1f} "
           f"[{'ok' if c else 'x'}], GoalReached {goals}/5 [{'ok' if d else 'x'}], "
           f"{res['ddpg_episodes']} DDPG episodes, {elapsed / 60:.0f} min")
    assert ok


def test_termination_coverage():
    t0 = time.perf_counter()
    from evnav.harness import run_episode
    expected = {goal_scenario: TerminationStatus.GOAL_REACHED, feature_lost_scenario: TerminationStatus.FEATURE_LOST,
                distance_bound_scenario: TerminationStatus.DISTANCE_BOUND,
                obstacle_scenario: TerminationStatus.OBSTACLE_TOO_CLOSE}
    got = {}
    for build, status in expected.items():
        env, controller = build()
        got[status.value] = run_episode(env, controller, 0).status
    elapsed = time.perf_counter() - t0
    ok = all(k == v for k, v in got.items()) and elapsed < 10
    record("termination coverage", ok, ", ".join(f"{k}->{v}" for k, v in got.items()) + f", {elapsed:.1f}s")
    assert ok


def test_determinism(tmp_path):
    from evnav.cli import main
    t0 = time.perf_counter()
    for name in ("a", "b"):
        assert main(["eval", "--seed", "21", "--episodes", "5", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    n_csv = sum(1 for f in files if f.suffix == ".csv")
    elapsed = time.perf_counter() - t0
    ok = all(same) and n_csv == 5 and any(f.name == "metrics.json" for f in files)
    record("determinism", ok, f"{sum(same)}/{len(files)} output files byte-identical across two eval runs, "
           f"{elapsed:.0f}s")
    assert ok
