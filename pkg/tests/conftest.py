import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat vector ``x`` (modified in place, restored)."""
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    """Norm-wise relative error, robust to tiny individual components."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def mlp_grad_error(net, x, w, h=1e-5):
    """Relative error of the analytic gradient of ``sum(w * net(x))`` w.r.t. parameters and input."""
    out, cache = net.forward(x)
    g_param, g_in = net.backward(cache, w)
    fd_param = central_diff(lambda: float(np.sum(w * net(x))), net.flat, h)
    xv = x.reshape(-1)
    fd_in = central_diff(lambda: float(np.sum(w * net(xv.reshape(x.shape)))), xv, h)
    return max(rel_err(g_param, fd_param), rel_err(np.reshape(g_in, -1), fd_in))


def chained_grad_error(agent, s, h=1e-5):
    """Relative error of the actor-through-critic policy gradient vs finite differences."""
    grad, _ = agent.policy_gradient(s)

    def objective():
        a = agent.actor(s)
        return -float(np.mean(agent.critic(np.hstack([s, a]))))

    return rel_err(grad, central_diff(objective, agent.actor.flat, h))


ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
