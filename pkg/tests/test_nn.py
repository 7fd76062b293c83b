import math

import numpy as np
import pytest

from usonic_slam.errors import ConfigurationError
from usonic_slam.nn import (
    AdamState,
    ParameterSet,
    Tensor,
    adam_step,
    conv1d_circular_forward,
    global_avg_pool,
    grad_check,
    init_conv1d,
    init_layer_norm,
    init_linear,
    init_mhsa,
    init_mlp,
    layer_norm,
    linear,
    make_rng,
    mhsa_forward,
    mlp,
)
from usonic_slam.nn.checkpoint import CheckpointError, dumps, loads


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def mhsa_params(d, seed):
    ps = ParameterSet()
    init_mhsa(ps, "att", d, make_rng(seed))
    return ps


# --- multi-head attention -------------------------------------------------

def mhsa_oracle(x, ps, heads):
    """Attention written out element by element."""
    k_len, d = x.shape
    dh = d // heads
    W = {n: ps[f"att.{n}.weight"].data.astype(np.float64) for n in "qkv"}
    B = {n: ps[f"att.{n}.bias"].data.astype(np.float64) for n in "qkv"}
    proj = {}
    for n in "qkv":
        m = np.zeros((k_len, d))
        for i in range(k_len):
            for j in range(d):
                m[i, j] = B[n][j] + sum(x[i, c] * W[n][c, j] for c in range(d))
        proj[n] = m
    ctx = np.zeros((k_len, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(k_len):
            s = [sum(proj["q"][i, sl][c] * proj["k"][j, sl][c] for c in range(dh)) / math.sqrt(dh)
                 for j in range(k_len)]
            mx = max(s)
            e = [math.exp(v - mx) for v in s]
            z = sum(e)
            for j in range(k_len):
                ctx[i, sl] += (e[j] / z) * proj["v"][j, sl]
    Wo = ps["att.out.weight"].data.astype(np.float64)
    bo = ps["att.out.bias"].data.astype(np.float64)
    out = np.zeros((k_len, d))
    for i in range(k_len):
        for j in range(d):
            out[i, j] = bo[j] + sum(ctx[i, c] * Wo[c, j] for c in range(d))
    return out


def test_mhsa_matches_scripted_oracle():
    rng = make_rng(11)
    ps = mhsa_params(8, 3)
    x = rng.standard_normal((2, 8))
    got = mhsa_forward(Tensor(x.astype(np.float64)), ps.astype(np.float64), heads=2, prefix="att")
    np.testing.assert_allclose(got.data, mhsa_oracle(x, ps, 2), rtol=1e-10, atol=1e-12)


def test_mhsa_shape_and_softmax_rows():
    ps = mhsa_params(64, 0)
    x = Tensor(make_rng(1).standard_normal((3, 64)).astype(np.float32))
    out, att = mhsa_forward(x, ps, heads=4, prefix="att", return_attention=True)
    assert out.shape == (3, 64)
    assert (att >= 0).all()
    np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-6)


def test_mhsa_zero_input_zero_bias_gives_zero():
    ps = mhsa_params(16, 2)
    for n in ("q", "k", "v", "out"):
        ps[f"att.{n}.bias"].data[:] = 0.0
    out = mhsa_forward(Tensor(np.zeros((3, 16), np.float32)), ps, heads=4, prefix="att")
    assert np.all(out.data == 0.0)


def test_mhsa_rejects_bad_heads():
    ps = mhsa_params(8, 0)
    with pytest.raises(ConfigurationError):
        mhsa_forward(Tensor(np.zeros((2, 8), np.float32)), ps, heads=3, prefix="att")


# --- circular convolution -------------------------------------------------

def conv_oracle(x, w, b, stride=1):
    c_out, c_in, width = w.shape
    length = x.shape[1]
    pad = width // 2
    n_out = (length + stride - 1) // stride
    out = np.zeros((c_out, n_out))
    for o in range(c_out):
        for p in range(n_out):
            acc = b[o]
            for c in range(c_in):
                for j in range(width):
                    acc += w[o, c, j] * x[c, (p * stride + j - pad) % length]
            out[o, p] = acc
    return out


def conv_params(c_in, c_out, width, seed):
    ps = ParameterSet()
    init_conv1d(ps, "conv", c_in, c_out, width, make_rng(seed))
    return ps


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_wrapping_oracle(stride):
    ps = conv_params(2, 3, 5, 4).astype(np.float64)
    x = make_rng(5).standard_normal((2, 16))
    got = conv1d_circular_forward(Tensor(x), ps, "conv", stride=stride).data
    want = conv_oracle(x, ps["conv.weight"].data, ps["conv.bias"].data, stride)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_identity_kernel():
    ps = conv_params(1, 1, 7, 0)
    ps["conv.weight"].data[:] = 0.0
    ps["conv.weight"].data[0, 0, 3] = 1.0
    ps["conv.bias"].data[:] = 0.0
    x = make_rng(2).standard_normal((1, 720)).astype(np.float32)
    np.testing.assert_array_equal(conv1d_circular_forward(Tensor(x), ps, "conv").data, x)


def test_conv_constant_input():
    ps = conv_params(1, 2, 7, 9)
    ps["conv.bias"].data[:] = 0.0
    x = np.full((1, 720), 0.75, np.float32)
    out = conv1d_circular_forward(Tensor(x), ps, "conv").data
    ksum = ps["conv.weight"].data.sum(axis=(1, 2))
    np.testing.assert_allclose(out, np.repeat(0.75 * ksum[:, None], 720, axis=1), rtol=1e-5)


@pytest.mark.parametrize("shift", [1, 5, 137])
def test_conv_rotation_equivariance(shift):
    ps = conv_params(2, 16, 7, 1)
    x = make_rng(3).standard_normal((2, 720)).astype(np.float32)
    a = conv1d_circular_forward(Tensor(np.roll(x, shift, axis=1)), ps, "conv").data
    b = np.roll(conv1d_circular_forward(Tensor(x), ps, "conv").data, shift, axis=1)
    np.testing.assert_array_equal(a, b)


def test_conv_even_width_rejected():
    with pytest.raises(ConfigurationError):
        conv_params(1, 1, 4, 0)
    ps = conv_params(1, 1, 3, 0)
    ps["conv.weight"].data = np.zeros((1, 1, 4), np.float32)
    with pytest.raises(ConfigurationError):
        conv1d_circular_forward(Tensor(np.zeros((1, 8), np.float32)), ps, "conv")


# --- layer norm / softmax statistics --------------------------------------

def test_layer_norm_statistics():
    x = Tensor(make_rng(4).normal(3.0, 2.5, size=(50, 64)).astype(np.float32))
    y = layer_norm(x).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-5
    assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-4


def test_softmax_rows_sum_to_one():
    x = Tensor(make_rng(6).normal(0, 10, size=(20, 30)).astype(np.float32))
    np.testing.assert_allclose(x.softmax().data.sum(axis=-1), 1.0, atol=1e-6)


# --- gradient checks ------------------------------------------------------

SEEDS = [0, 1, 2, 3, 4]


def weighted_sum(out, seed):
    # a fixed random projection keeps sum-reduction from cancelling gradients
    w = make_rng(1000 + seed).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_linear(seed):
    ps = ParameterSet()
    init_linear(ps, "fc", 4, 4, make_rng(seed))
    ps = ps.astype(np.float64)
    x = t64(make_rng(seed + 50).standard_normal((4, 4)))
    err = grad_check(lambda: linear(x, ps, "fc").sum(), {"x": x, **ps})
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_layer_norm(seed):
    ps = ParameterSet()
    init_layer_norm(ps, "ln", 8)
    ps = ps.astype(np.float64)
    rng = make_rng(seed)
    ps["ln.gamma"].data[:] = rng.uniform(0.5, 1.5, 8)
    ps["ln.beta"].data[:] = rng.uniform(-0.5, 0.5, 8)
    x = t64(rng.standard_normal((3, 8)))
    err = grad_check(lambda: weighted_sum(layer_norm(x, ps, "ln"), seed), {"x": x, **ps})
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_mhsa(seed):
    ps = mhsa_params(8, seed).astype(np.float64)
    x = t64(make_rng(seed + 7).standard_normal((3, 8)))
    err = grad_check(lambda: mhsa_forward(x, ps, 2, "att").sum(), {"x": x, **ps})
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_mlp(seed):
    ps = ParameterSet()
    init_mlp(ps, "mlp", 6, 10, 4, make_rng(seed))
    ps = ps.astype(np.float64)
    x = t64(make_rng(seed + 3).standard_normal((3, 6)))
    err = grad_check(lambda: weighted_sum(mlp(x, ps, "mlp"), seed), {"x": x, **ps})
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride", [1, 2])
def test_gradcheck_conv(seed, stride):
    ps = conv_params(2, 3, 5, seed).astype(np.float64)
    x = t64(make_rng(seed + 9).standard_normal((2, 2, 12)))
    err = grad_check(lambda: weighted_sum(conv1d_circular_forward(x, ps, "conv", stride), seed),
                     {"x": x, **ps})
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_pool(seed):
    x = t64(make_rng(seed).standard_normal((2, 3, 10)))
    err = grad_check(lambda: weighted_sum(global_avg_pool(x), seed), {"x": x})
    assert err < 1e-3


def test_gradcheck_zero_function():
    x = t64(make_rng(0).standard_normal((3, 3)))
    assert grad_check(lambda: (x * 0.0).sum(), {"x": x}) == 0.0
    x.grad = None
    (x * 0.0).sum().backward()
    assert np.all(x.grad == 0.0)


@pytest.mark.filterwarnings("ignore:divide by zero:RuntimeWarning")
def test_gradcheck_reports_nonfinite():
    x = t64(np.array([0.0, 1.0]))
    with pytest.raises(FloatingPointError, match="x"):
        grad_check(lambda: x.sqrt().sum(), {"x": x})


# --- Adam -----------------------------------------------------------------

def scalar_params(value, grad):
    ps = ParameterSet()
    ps["w"] = np.array([value], np.float32)
    ps["w"].grad = np.array([grad], np.float32)
    return ps


def test_adam_zero_gradient_is_noop():
    ps = scalar_params(0.3, 0.0)
    adam_step(ps, AdamState())
    assert ps["w"].data[0] == np.float32(0.3)


def test_adam_first_step_moves_by_lr():
    ps = scalar_params(1.0, 1.0)
    st = AdamState(lr=0.1)
    adam_step(ps, st)
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert abs(ps["w"].data[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-6
    assert st.step == 1


def test_adam_two_steps_monotone():
    ps = scalar_params(1.0, 1.0)
    st = AdamState(lr=0.01)
    adam_step(ps, st)
    w1 = ps["w"].data[0]
    ps["w"].grad = np.array([1.0], np.float32)
    adam_step(ps, st)
    assert 1.0 > w1 > ps["w"].data[0]
    assert st.step == 2


def test_adam_missing_gradient_named():
    ps = scalar_params(1.0, 1.0)
    ps["other"] = np.zeros(2, np.float32)
    with pytest.raises(ValueError, match="other"):
        adam_step(ps, AdamState())


# --- checkpoints ----------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = make_rng(0)
    tensors = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32),
               "b": np.array([np.float32(1e-38), -0.0, np.inf], np.float32),
               "scalar": np.array(2.5, np.float32)}
    buf = dumps(tensors)
    assert buf[:4] == b"EGST"
    back = loads(buf)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
        assert back[k].shape == tensors[k].shape
    assert dumps(back) == buf


def test_checkpoint_rejects_bad_version():
    buf = bytearray(dumps({"x": np.zeros(2, np.float32)}))
    buf[4] = 99
    with pytest.raises(CheckpointError, match="version"):
        loads(bytes(buf))
    with pytest.raises(CheckpointError):
        loads(b"NOPE")


def test_parameter_set_rejects_duplicates():
    ps = ParameterSet()
    ps["a"] = np.zeros(1, np.float32)
    with pytest.raises(ConfigurationError):
        ps["a"] = np.zeros(1, np.float32)
