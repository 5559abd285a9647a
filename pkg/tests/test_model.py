from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrpcanet.model import (
    LRPCANet, ModelConfig, Stage, count_parameters, estimate_lipschitz, lipschitz_lower_bound,
    model_forward, se_parameter_count, sebem_forward, seirm_forward, senrm_forward, setem_forward,
)
from lrpcanet.nn import ShapeError, grad_check


def conv_params(cin, cout):
    return cin * cout * 9 + cout


def se_params(c, r=4):
    return (c * (c // r) + c // r) + (c // r * c + c)


def hand_stage_count(bc=4, c=32, l_d=3):
    background = conv_params(1, bc) + 2 * bc + conv_params(bc, c) + 2 * c + se_params(c) + conv_params(c, 1)
    gradient = conv_params(1, bc) + conv_params(bc, c) + se_params(c) + conv_params(c, 1)
    recon = conv_params(1, c) + l_d * conv_params(c, c) + se_params(c) + conv_params(c, 1)
    return background + 2 * gradient + recon + 2  # + epsilon, sigma


# -- configuration -----------------------------------------------------------------

def test_config_validation():
    for bad in ({"K": 0}, {"BC": 0}, {"BC": 64}, {"se_ratio": 5}, {"se_enabled": (True,)}):
        with pytest.raises(ValueError):
            ModelConfig(**bad)


def test_config_roundtrip_and_digest():
    cfg = ModelConfig(K=3, se_enabled=[True, False, True, False])
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.digest() == cfg.digest()
    assert replace(cfg, K=4).digest() != cfg.digest()


# -- parameter accounting ----------------------------------------------------------

def test_stage_count_matches_hand_derivation():
    assert count_parameters(ModelConfig(K=1)) == hand_stage_count() == 35174


def test_count_is_linear_in_stages():
    one = count_parameters(ModelConfig(K=1))
    for k in range(1, 8):
        assert count_parameters(ModelConfig(K=k)) == k * one


def test_default_count():
    assert count_parameters(ModelConfig()) == 211044


def test_fill_layers_add_parameters():
    # each extra C->C layer: one conv in each of three groups plus a BN in the background group
    extra = count_parameters(ModelConfig(K=1, n_fill=1)) - count_parameters(ModelConfig(K=1))
    assert extra == 3 * conv_params(32, 32) + 64


def test_se_parameter_count():
    assert se_parameter_count(ModelConfig(K=1)) == 4 * se_params(32) == 2208
    cfg = ModelConfig(K=2, se_enabled=(True, False, False, False))
    assert se_parameter_count(cfg) == 2 * se_params(32)
    assert count_parameters(ModelConfig(K=1)) - count_parameters(
        ModelConfig(K=1, se_enabled=(False,) * 4)) == 2208


# -- stage algebra -----------------------------------------------------------------

def zero_stage(dtype=np.float64):
    stage = Stage(ModelConfig(K=1), rng=None, dtype=dtype)  # all-zero weights
    stage.epsilon.value[:] = 0
    stage.sigma.value[:] = 0
    return stage


def test_zero_branch_stage_algebra():
    rng = np.random.default_rng(0)
    D, T, N = (rng.standard_normal((2, 1, 8, 8)) for _ in range(3))
    stage = zero_stage()
    rec = stage.forward((D, T, N))
    B = D - T - N
    T1 = T + D - B - N
    N1 = N + D - B - T1
    assert np.array_equal(rec.B, B)
    assert np.array_equal(rec.T, T1)
    assert np.array_equal(rec.N, N1)


def test_zero_branch_first_background_is_input():
    model = LRPCANet(ModelConfig(K=2))  # seed=None: zero weights
    img = np.random.default_rng(1).random((1, 1, 16, 16)).astype(np.float32)
    _, _, trace = model_forward(img, model, keep_trace=True)
    assert len(trace) == 2
    assert np.array_equal(trace[0].B, img)


def test_functional_views_match_stage():
    rng = np.random.default_rng(2)
    stage = Stage(ModelConfig(K=1), rng, np.float64)
    D, T, N = (rng.random((1, 1, 8, 8)) for _ in range(3))
    rec = stage.forward((D, T, N))
    B = sebem_forward((D, T, N), stage)
    T1 = setem_forward((D, T, N), B, stage)
    N1 = senrm_forward((D, T, N), B, T1, stage)
    D1 = seirm_forward(B, T1, N1, stage)
    for a, b in ((rec.B, B), (rec.T, T1), (rec.N, N1), (rec.D, D1)):
        np.testing.assert_array_equal(a, b)


def test_initial_state_and_output_shapes():
    model = LRPCANet(ModelConfig(K=3), seed=0)
    x = np.random.default_rng(0).random((2, 1, 12, 10)).astype(np.float32)
    T, D = model.forward(x)
    assert T.shape == D.shape == x.shape
    assert T.dtype == np.float32


def test_model_rejects_bad_layout():
    model = LRPCANet(ModelConfig(K=1), seed=0)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 2, 8, 8), np.float32))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((8, 8), np.float32))


def test_step_sizes_start_at_half():
    stage = LRPCANet(ModelConfig(K=1), seed=0).stages[0]
    assert stage.epsilon.value[0] == 0.5 and stage.sigma.value[0] == 0.5


def test_seeded_construction_is_deterministic():
    a = dict(LRPCANet(ModelConfig(K=2), seed=5).named_parameters())
    b = dict(LRPCANet(ModelConfig(K=2), seed=5).named_parameters())
    assert all(np.array_equal(a[n].value, b[n].value) for n in a)


def test_small_model_gradients():
    rng = np.random.default_rng([9, 1])
    model = LRPCANet(ModelConfig(K=1, C=8, BC=2), seed=3, dtype=np.float64)
    for _, p in model.named_parameters():
        p.value += 0.1 * rng.standard_normal(p.value.shape)
    res = grad_check(model, rng.random((2, 1, 6, 6)), h=1e-6)
    assert res.passed(1e-4), res.errors


# -- Lipschitz monitoring ----------------------------------------------------------

def test_lipschitz_of_scaling_is_exact():
    est, used = lipschitz_lower_bound(lambda x: 3.0 * x, (4, 4), 5, np.random.default_rng(0))
    assert est == pytest.approx(3.0) and used == 5


def test_lipschitz_bounded_by_spectral_norm():
    # power-iteration oracle for the operator norm of a linear map
    rng = np.random.default_rng(4)
    A = rng.standard_normal((16, 16))
    v = rng.standard_normal(16)
    for _ in range(500):
        v = A.T @ (A @ v)
        v /= np.linalg.norm(v)
    spectral = np.linalg.norm(A @ v)
    est, _ = lipschitz_lower_bound(lambda x: A @ x, (16,), 50, rng)
    assert 0 < est <= spectral * (1 + 1e-9)


def test_lipschitz_needs_two_probes_and_distinct_pairs():
    with pytest.raises(ValueError):
        lipschitz_lower_bound(lambda x: x, (2,), 1, np.random.default_rng(0))

    class Constant:
        def random(self, shape):
            return np.zeros(shape)

    with pytest.raises(ValueError):
        lipschitz_lower_bound(lambda x: x, (2,), 3, Constant())


def test_zero_branch_has_zero_lipschitz():
    est = estimate_lipschitz(LRPCANet(ModelConfig(K=1), seed=0), "target", 0, probe_count=4)
    assert est.estimate == 0.0  # last conv starts at zero


def test_lipschitz_estimate_is_deterministic():
    model = LRPCANet(ModelConfig(K=2), seed=0)
    for p in model.stages[1].noise.layers[-1].parameters():
        p.value += 0.01
    a = estimate_lipschitz(model, "noise", 1, probe_count=4, seed=3)
    b = estimate_lipschitz(model, "noise", 1, probe_count=4, seed=3)
    assert a.estimate == b.estimate > 0
    with pytest.raises(ValueError):
        estimate_lipschitz(model, "background", 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 16), st.floats(0.1, 10.0))
def test_lipschitz_estimate_scales_with_map(seed, c):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 6))
    e1, _ = lipschitz_lower_bound(lambda x: A @ x, (6,), 4, np.random.default_rng(seed))
    e2, _ = lipschitz_lower_bound(lambda x: c * (A @ x), (6,), 4, np.random.default_rng(seed))
    assert e2 == pytest.approx(c * e1, rel=1e-9)
