import numpy as np
import pytest

from kdyn.baseline import mlp_dynamics_step, mlp_rollout, mlp_rollout_backward, parity_hidden_width
from kdyn.errors import RolloutBlowup, ShapeError
from kdyn.gradcheck import finite_difference, relative_error
from kdyn.model import ModelConfig, baseline_width, build_model, koopman_dynamics_param_count
from kdyn.nets import MlpParams, init_mlp


def test_zero_weights_give_zero_latent():
    p = MlpParams([(np.zeros((6, 5)), np.zeros(5)), (np.zeros((5, 4)), np.zeros(4))])
    assert np.all(mlp_dynamics_step(p, np.ones(4), np.ones(2)) == 0)


def test_step_matches_reimplementation_and_batch_of_one():
    rng = np.random.default_rng(0)
    p = init_mlp([6, 9, 4], rng)
    x, u = rng.standard_normal(4), rng.standard_normal(2)
    (w1, b1), (w2, b2) = p.layers
    ref = np.maximum(np.concatenate([x, u]) @ w1 + b1, 0) @ w2 + b2
    np.testing.assert_allclose(mlp_dynamics_step(p, x, u), ref, rtol=1e-13)
    np.testing.assert_array_equal(mlp_dynamics_step(p, x[None], u[None])[0], mlp_dynamics_step(p, x, u))
    with pytest.raises(ShapeError):
        mlp_dynamics_step(p, x, np.ones(3))


def test_identity_like_init_holds_constant():
    m, e = 3, 2
    w1 = np.zeros((m + e, 2 * m))
    w1[:m, :m] = np.eye(m)
    w1[:m, m:] = -np.eye(m)
    w2 = np.concatenate([np.eye(m), -np.eye(m)])
    p = MlpParams([(w1, np.zeros(2 * m)), (w2, np.zeros(m))])
    x0 = np.array([0.5, -1.0, 2.0])
    out = mlp_rollout(p, x0, np.zeros((6, e)))
    np.testing.assert_allclose(out, np.tile(x0, (6, 1)))


def test_two_step_rollout_matches_manual_steps():
    rng = np.random.default_rng(1)
    p = init_mlp([7, 5, 4], rng)
    x0, u = rng.standard_normal(4), rng.standard_normal((2, 3))
    x1 = mlp_dynamics_step(p, x0, u[0])
    x2 = mlp_dynamics_step(p, x1, u[1])
    np.testing.assert_array_equal(mlp_rollout(p, x0, u), np.stack([x1, x2]))


def test_bptt_matches_finite_differences():
    rng = np.random.default_rng(2)
    p = init_mlp([7, 6, 4], rng, "tanh")
    x0, u = rng.standard_normal((2, 4)), rng.standard_normal((2, 4, 3))
    w = rng.standard_normal((2, 4, 4))
    _, cache = mlp_rollout(p, x0, u, return_cache=True)
    grads, gx0, gu = mlp_rollout_backward(p, cache, w)

    def loss():
        return float(np.sum(mlp_rollout(p, x0, u) * w))

    def fd_of(arr):
        orig = arr.copy()

        def f(flat):
            arr[...] = flat.reshape(orig.shape)
            return loss()

        out = finite_difference(f, orig)
        arr[...] = orig
        return out.reshape(orig.shape)

    assert relative_error(gx0, fd_of(x0)) < 1e-5
    assert relative_error(gu, fd_of(u)) < 1e-5
    for (dw, db), (wt, bt) in zip(grads, p.layers):
        assert relative_error(dw, fd_of(wt)) < 1e-5
        assert relative_error(db, fd_of(bt)) < 1e-5


def test_blowup_reports_step():
    p = MlpParams([(np.eye(3) * 1e200, np.zeros(3)), (np.eye(3) * 1e200, np.zeros(3))])
    with pytest.raises(RolloutBlowup) as info:
        mlp_rollout(p, np.ones(2), np.ones((5, 1)))
    assert info.value.step == 1


@pytest.mark.parametrize("latent,emb,mu_mode", [(64, 16, "constant"), (8, 4, "learnable"), (32, 8, "constant")])
def test_parameter_parity(latent, emb, mu_mode):
    cfg = ModelConfig(latent_dim=latent, action_emb_dim=emb, mu_mode=mu_mode)
    k = build_model(cfg)
    m = build_model(ModelConfig(**{**cfg.to_dict(), "model_type": "mlp"}))
    assert abs(m.n_params() - k.n_params()) <= 0.1 * k.n_params()
    assert m.hidden_width == baseline_width(cfg)
    dyn = m.n_params() - (k.n_params() - koopman_dynamics_param_count(cfg))
    assert abs(dyn - koopman_dynamics_param_count(cfg)) <= latent + 2 * emb + 1 + latent


def test_parity_width_floor():
    assert parity_hidden_width(64, 32, 0) == 1
