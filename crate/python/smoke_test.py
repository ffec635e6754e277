"""Exercise the compiled module end to end.

Build first with `maturin develop -m crates/py/Cargo.toml --release`.
"""

import json
import math
import tempfile
from pathlib import Path

import varband_py as vb


def check_regression():
    st = vb.RegressionState(2, 1.0)
    arms = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]
    for a, r in zip(arms, [0.5, -0.2, 0.1]):
        st.update(a, r)
    cov = st.cov()
    assert abs(cov[0][0] - 2.36) < 1e-12 and abs(cov[0][1] - 0.48) < 1e-12
    for a, r in zip(arms, [0.5, -0.2, 0.1]):
        st.downdate(a, r)
    assert all(abs(x) < 1e-12 for x in st.estimate)
    assert abs(st.bonus_norm([3.0, 4.0]) - 5.0) < 1e-12


def run(policy, env, sigma_known=False):
    regret = 0.0
    for k in range(1, env.horizon + 1):
        obs = env.step(k)
        arms = obs["arm_set"]
        i = policy.choose(arms)
        reward = sum(x * t for x, t in zip(arms[i], obs["theta"])) + obs["noise"]
        policy.observe(i, arms[i], reward, obs["sigma"] if sigma_known else None)
        regret += vb.instant_regret(arms, obs["theta"], i)
    return regret


def check_policies():
    k = 3000
    theta = [0.8, 0.2, 0.0]
    woful = run(vb.Policy.woful(3, k, 1.0, radius=1.0), vb.Environment.fixed(theta, k), True)
    uniform = run(vb.Policy.uniform(seed=1), vb.Environment.fixed(theta, k))
    save = run(vb.Policy.save(3, k, 1 / 64, fixed_radius=True), vb.Environment.fixed(theta, k))
    assert woful < 0.2 * uniform, (woful, uniform)
    assert save < 0.2 * uniform, (save, uniform)

    env = vb.Environment.sinusoidal(2000, 1.0, seed=3)
    bob = run(vb.Policy.save_bob(2, 2000, seed=3), env)
    acc = env.accounting()
    assert acc["rounds"] == 2000 and math.isfinite(bob)


def check_params():
    p = vb.woful_params(2, 30000, 1.0, 4.0)
    assert 1 <= p["window"] <= 30000 and p["branch"] in ("first", "second")
    pool = vb.candidate_pool(1, 1024)
    assert len(pool) == 25
    h = vb.block_length(1, 1024)
    assert 0 < vb.exp3_gamma(len(pool), 1024, h) <= 1


def check_run_config():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "exp.toml"
        cfg.write_text(
            "horizons = [200]\ntrials = 2\noutput = 'unused'\n"
            "[environment]\nkind = 'fixed_theta'\ntheta = [0.5, 0.1]\n"
            "[[policies]]\nkind = 'uniform'\n"
        )
        out = Path(tmp) / "out"
        summary = json.loads(vb.run_config(str(cfg), out=str(out), parallel=False))
        assert summary["trials"] == 2
        assert (out / "summary.json").exists() and (out / "fixed_theta.csv").exists()


if __name__ == "__main__":
    check_regression()
    check_policies()
    check_params()
    check_run_config()
    print("smoke test ok")
