import math

import numpy as np
import pytest

import ctpg


def unit_lqr(horizon=25.0):
    eye = np.eye(2)
    return ctpg.lqr_env(np.zeros((2, 2)), eye, eye, eye, horizon=horizon, x0=np.array([1.0, 1.0]))


def test_version():
    assert ctpg.__version__


def test_solve_ivp_decay():
    traj, nfe = ctpg.solve_ivp(lambda x, t: -x, np.array([1.0]), 0.0, 1.0,
                               ctpg.SolverConfig.adaptive(1e-8, 1e-8))
    assert traj.t_end == 1.0
    assert abs(traj(1.0)[0] - math.exp(-1.0)) < 1e-7
    assert traj.states.shape == (len(traj), 1)
    assert nfe.n_f > 0


def test_rk4_costs_four_calls_per_step():
    _, nfe = ctpg.solve_ivp(lambda x, t: -x, np.array([1.0]), 0.0, 1.0, ctpg.SolverConfig.rk4(0.1))
    assert nfe.n_f == 40


def test_solver_error_is_raised():
    cfg = ctpg.SolverConfig.adaptive(1e-6, 1e-6)
    cfg.max_steps = 3
    with pytest.raises(ctpg.SolverError):
        ctpg.solve_ivp(lambda x, t: np.cos(50 * t) * x, np.array([1.0]), 0.0, 10.0, cfg)


def test_mlp_vjp_matches_jacobian_contraction():
    arch = ctpg.MlpArch([3, 5, 2])
    p = ctpg.init_params(arch, 0)
    x = np.array([0.1, -0.2, 0.3])
    v = np.array([1.0, -2.0])
    eps = 1e-6
    g = ctpg.mlp_vjp_params(p, arch, x, v)
    for i in (0, 7, arch.num_params - 1):
        dp = np.zeros_like(p)
        dp[i] = eps
        fd = (ctpg.mlp_forward(p + dp, arch, x) - ctpg.mlp_forward(p - dp, arch, x)) @ v / (2 * eps)
        assert abs(g[i] - fd) < 1e-7


def test_scalar_gain_lqr_closed_form():
    env = unit_lqr()
    policy = ctpg.ScalarGainPolicy(2)
    tight = ctpg.SolverConfig.adaptive(1e-10, 1e-10)
    est = ctpg.ctpg_gradient(env, policy, np.array([2.0]), np.array([1.0, 1.0]), tight)
    assert abs(est.loss - 2.5) < 1e-4
    assert abs(est.grad[0] - 0.75) < 1e-3
    at_opt = ctpg.ctpg_gradient(env, policy, np.array([1.0]), np.array([1.0, 1.0]), tight)
    assert abs(at_opt.grad[0]) < 1e-4


def test_estimators_agree_on_diffdrive():
    env = ctpg.diffdrive_env(horizon=1.0)
    policy = ctpg.MlpPolicy(env, [8])
    p = ctpg.init_params(policy.arch, 3)
    x0 = env.sample_initial_state(0)
    tight = ctpg.SolverConfig.adaptive(1e-8, 1e-8)
    cont = ctpg.ctpg_gradient(env, policy, p, x0, tight)
    oracle = ctpg.fd_gradient_oracle(env, policy, p, x0, fine_h=1e-3)
    assert ctpg.relative_error(cont.grad, oracle) < 1e-3
    bptt = ctpg.bptt_gradient(env, policy, p, x0, h=1e-3)
    assert ctpg.relative_error(bptt.grad, cont.grad) < 1e-2
    assert bptt.nfe.n_f == 1000


def test_fd_adapter_keeps_gradient():
    base = unit_lqr(horizon=2.0)
    wrapped = ctpg.fd_adapter(base, 1e-6)
    del base  # the adapter keeps it alive
    policy = ctpg.LinearPolicy(2, 2)
    p = ctpg.LinearPolicy.flatten(0.5 * np.eye(2))
    est = ctpg.ctpg_gradient(wrapped, policy, p, np.array([1.0, 1.0]))
    assert wrapped.name == "fd-adapter"
    assert est.nfe.n_dfdx == 0 and est.nfe.n_f > 0


def test_reverse_spectrum_pairs():
    env = unit_lqr()
    policy = ctpg.ScalarGainPolicy(2)
    eigs = ctpg.reverse_jacobian_eigs(env, policy, np.array([1.0]), np.array([0.3, -0.2]),
                                      np.array([0.1, 0.4]))
    pairing = ctpg.check_pairing(eigs)
    assert pairing["residual"] < 1e-6
    assert pairing["near_zero"] == 1
    assert pairing["max_real"] > 0


def test_train_moves_gain_toward_optimum():
    env = unit_lqr(horizon=5.0)
    policy = ctpg.ScalarGainPolicy(2)
    params, history = ctpg.train_policy(env, policy, np.array([0.2]), iterations=100,
                                        batch_size=1, lr=0.05, tol=1e-8)
    assert len(history) == 100
    assert abs(params[0] - 1.0) < 0.1
    assert history[-1]["mean_loss"] < history[0]["mean_loss"]
    assert history[-1]["n_f"] > history[0]["n_f"]


def test_param_file_round_trip(tmp_path):
    arch = ctpg.MlpArch([2, 4, 1])
    p = ctpg.init_params(arch, 1)
    path = str(tmp_path / "p.params")
    ctpg.save_params(path, p, arch=arch, seed=1)
    q, meta = ctpg.load_params(path)
    np.testing.assert_array_equal(p, q)
    assert meta["layer_sizes"] == [2, 4, 1]


def test_run_command_exit_codes(tmp_path):
    out = str(tmp_path / "eigs.csv")
    assert ctpg.run_command("eigs", out=out) == 0
    with open(out) as f:
        assert f.readline().startswith("# config=")
    assert ctpg.run_command("nonsense", out=out) == 2
