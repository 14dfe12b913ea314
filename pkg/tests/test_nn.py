import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowflight.errors import ConfigError, NonFiniteError
from flowflight.nn import (ActorCritic, NetSpec, ParamSet, conv2d_forward, conv_output_shape, init_params,
                           l2_normalize_backward, l2_normalize_forward, load_checkpoint, save_checkpoint)

from oracles import gradient_check, naive_conv, reduced_spec


def test_conv_chain_shapes():
    assert NetSpec().conv_chain() == [(3, 36, 6), (4, 16, 4), (16, 8, 4), (16, 4, 4)]
    assert NetSpec().flat_dim == 256


def test_parameter_count():
    assert ParamSet(NetSpec().layout()).size == 140063


def test_bad_conv_spec_names_layer():
    spec = NetSpec(conv=((4, (50, 3), (2, 1), (0, 0)),))
    with pytest.raises(ConfigError) as ei:
        spec.validate()
    assert ei.value.key == "policy.conv[0]"


def test_conv_output_arithmetic():
    assert conv_output_shape((36, 6), (5, 3), (2, 1), (0, 0)) == (16, 4)
    assert conv_output_shape((16, 4), (5, 3), (2, 1), (2, 1)) == (8, 4)


@given(st.integers(0, 10 ** 6))
def test_conv_matches_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 11, 7))
    w = rng.standard_normal((4, 3, 5, 3))
    b = rng.standard_normal(4)
    for stride, pad in (((2, 1), (0, 0)), ((1, 2), (2, 1)), ((2, 2), (1, 0))):
        out, _ = conv2d_forward(x, w, b, stride, pad)
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_l2_normalize_unit_norm_and_zero_vector():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    y, cache = l2_normalize_forward(x)
    np.testing.assert_allclose(y[0], [0.6, 0.8])
    assert np.all(y[1] == 0)
    dx = l2_normalize_backward(np.ones_like(x), cache)
    assert np.isfinite(dx).all()
    # the gradient is orthogonal to the (unit) output
    assert abs(dx[0] @ y[0]) < 1e-15


def test_forward_shapes_and_determinism():
    net = ActorCritic(rng=np.random.default_rng(0))
    x = np.random.default_rng(1).random((5, 3, 36, 6))
    s = np.zeros((5, 9))
    mean, log_std, value, _ = net.forward(x, s)
    assert mean.shape == (5, 3) and log_std.shape == (3,) and value.shape == (5,)
    again = ActorCritic(rng=np.random.default_rng(0)).forward(x, s)
    assert np.array_equal(mean, again[0]) and np.array_equal(value, again[2])
    single = net.forward(x[0], s[0])
    np.testing.assert_allclose(single[0][0], mean[0], rtol=1e-5)


def test_forward_rejects_non_finite():
    net = ActorCritic(rng=np.random.default_rng(0))
    x = np.zeros((1, 3, 36, 6))
    x[0, 1, 2, 3] = np.nan
    with pytest.raises(NonFiniteError):
        net.forward(x, np.zeros((1, 9)))


def test_log_std_clipped_and_gradient_gated():
    spec = NetSpec()
    net = ActorCritic(spec, rng=np.random.default_rng(0))
    net.params["log_std"][...] = [-9.0, 0.0, 4.0]
    _, log_std, _, cache = net.forward(np.zeros((1, 3, 36, 6)), np.zeros((1, 9)))
    assert log_std.tolist() == [-5.0, 0.0, 1.0]
    g = ParamSet(spec.layout(), net.backward(cache, np.zeros((1, 3)), np.ones(3), np.zeros(1)))
    assert g["log_std"].tolist() == [0.0, 1.0, 0.0]


def test_init_heads():
    spec = NetSpec()
    ps = init_params(spec, np.random.default_rng(0))
    assert np.abs(ps["actor.w"]).max() < 0.05
    assert np.all(ps["log_std"] == np.float32(spec.log_std_init))
    w = ps["mlp1.w"].astype(np.float64)  # (137, 256): orthonormal rows scaled by sqrt(2)
    np.testing.assert_allclose(w @ w.T, 2.0 * np.eye(w.shape[0]), atol=1e-5)


def test_gradient_check_reduced_net():
    err, n = gradient_check(reduced_spec(), n_params=400, seed=1)
    assert err < 1e-4


def test_checkpoint_roundtrip(tmp_path):
    net = ActorCritic(rng=np.random.default_rng(3))
    save_checkpoint(tmp_path / "p.ckpt", net, {"seed": 3, "config_hash": "abc"})
    back, meta = load_checkpoint(tmp_path / "p.ckpt")
    assert np.array_equal(back.params.flat, net.params.flat)
    assert meta == {"seed": "3", "config_hash": "abc"}
    head = (tmp_path / "p.ckpt").read_bytes().split(b"\nEND\n")[0].decode()
    assert "conv_chain 3x36x6->4x16x4->16x8x4->16x4x4" in head
    assert "param fc.w" in head


def test_checkpoint_manifest_mismatch(tmp_path):
    net = ActorCritic(rng=np.random.default_rng(3))
    save_checkpoint(tmp_path / "p.ckpt", net)
    other = NetSpec(hidden=(128, 128))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "p.ckpt", other)
