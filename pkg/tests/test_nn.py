import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halftone_pid.nn import (
    DISCRIMINATOR,
    HCD,
    PI,
    REFINER,
    AdamState,
    BadMagicError,
    DimOverflowError,
    NetworkParams,
    NetworkSpec,
    ShapeError,
    TruncatedError,
    VersionError,
    adam_step,
    backward,
    conv,
    fc,
    forward,
    load_checkpoint,
    pool,
    save_checkpoint,
    softmax,
    softmax_layer,
    xavier_init,
)
from halftone_pid.nn import kernels
from halftone_pid.nn.checkpoint import decode, encode

from oracles import fd_input_grad, fd_param_grads, rel_error, softmax64

GRAD_TOL = 1e-3


def _gradcheck(spec, seed=0, batch=3, attempts=5):
    """Norm-wise relative errors of analytic vs central-difference gradients.

    Redraws the input point when some tensor has no element whose
    perturbation avoids every ReLU/max-pool kink.
    """
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        params = xavier_init(spec, seed)
        # non-trivial batch-norm affine and biases so their gradients are exercised
        for name in params.keys():
            if name.endswith("bn_scale") or name.endswith("bn_shift") or name.endswith(".bias"):
                params[name] = rng.normal(0.5, 0.3, params[name].shape).astype(np.float32)
        x = rng.normal(size=(batch,) + spec.input_dims)
        p64 = params.astype(np.float64)
        out, cache = forward(spec, p64, x, "train")
        weights = rng.normal(size=out.shape)
        grads, gin = backward(spec, p64, cache, weights)
        numeric = fd_param_grads(spec, params, x, weights, seed=seed)
        numeric["input"] = fd_input_grad(spec, params, x, weights, seed=seed)
        if all(len(idx) for idx, _ in numeric.values()):
            break
    else:
        pytest.fail("no kink-free elements found")
    analytic = dict(grads, input=gin)
    return {
        name: rel_error(analytic[name].ravel()[idx], vals) for name, (idx, vals) in numeric.items()
    }


SINGLE_LAYER_SPECS = {
    "conv-s1-relu": NetworkSpec([conv(4)], (3, 8, 8)),
    "conv-s2-leaky": NetworkSpec([conv(4, 2, "leaky-relu")], (3, 8, 8)),
    "conv-tanh": NetworkSpec([conv(3, activation="tanh")], (2, 6, 6)),
    "conv-none": NetworkSpec([conv(3, activation="none")], (2, 5, 7)),
    "conv-bn-tanh": NetworkSpec([conv(4, activation="tanh", batch_norm=True)], (3, 6, 6)),
    "maxpool": NetworkSpec([pool()], (3, 6, 6)),
    "fc-relu": NetworkSpec([fc(5, "relu")], (2, 3, 3)),
    "fc-none": NetworkSpec([fc(4)], (3, 2, 2)),
    "softmax": NetworkSpec([fc(4), softmax_layer()], (2, 2, 2)),
}


@pytest.fixture(params=["numpy", "torch"])
def conv_backend(request):
    previous = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


@pytest.mark.parametrize("name", sorted(SINGLE_LAYER_SPECS))
def test_gradcheck_single_layer(name, conv_backend):
    errors = _gradcheck(SINGLE_LAYER_SPECS[name])
    assert max(errors.values()) < GRAD_TOL, errors


LAYER_POOL = [
    lambda: conv(3),
    lambda: conv(4, 2, "leaky-relu"),
    lambda: conv(3, activation="tanh", batch_norm=True),
    lambda: conv(2, batch_norm=True),
    lambda: pool(),
]


@settings(max_examples=12, deadline=None)
@given(st.lists(st.integers(0, len(LAYER_POOL) - 1), min_size=2, max_size=2), st.booleans(), st.integers(0, 1000))
def test_gradcheck_random_three_layer(picks, softmax_head, seed):
    layers = [LAYER_POOL[i]() for i in picks]
    layers.append(fc(3))
    if softmax_head:
        layers.append(softmax_layer())
    spec = NetworkSpec(layers, (2, 8, 8))
    errors = _gradcheck(spec, seed=seed, batch=2)
    assert max(errors.values()) < GRAD_TOL, errors


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backends_agree(stride):
    rng = np.random.default_rng(stride)
    x = rng.normal(size=(3, 9, 8, 5)).astype(np.float32)
    w = rng.normal(size=(6, 5, 3, 3)).astype(np.float32)
    b = rng.normal(size=(1, 6, 1, 1)).astype(np.float32)
    results = {}
    for name in ("numpy", "torch"):
        previous = kernels.set_backend(name)
        try:
            y = kernels.conv_forward(x, w, b, stride)
            g = rng.normal(size=y.shape).astype(np.float32) if name == "numpy" else results["numpy"][-1]
            results[name] = (y, *kernels.conv_backward(g, x, w, stride), g)
        finally:
            kernels.set_backend(previous)
    for a, t in zip(results["numpy"], results["torch"]):
        np.testing.assert_allclose(a, t, rtol=1e-4, atol=1e-4)


def test_canonical_shape_chains():
    assert DISCRIMINATOR.output_dims() == (2, 1, 1)
    assert DISCRIMINATOR.output_dims(6) == (256, 8, 8)
    assert HCD.output_dims() == (4, 64, 64)
    assert REFINER.output_dims() == (3, 64, 64)
    assert PI.output_dims(10) == (64, 32, 32)
    assert PI.output_dims(13) == (128, 16, 16)
    assert PI.output_dims(16) == (256, 8, 8)
    assert [PI.output_dims(n)[0] for n in (17, 18, 19, 20)] == [4096, 4096, 8, 8]
    assert PI.layers[9].describe() == "MaxPool2x2, stride=2"
    assert DISCRIMINATOR.layers[1].describe() == "Conv3x3, stride=2, feature maps=64"


def test_forward_discriminator_and_hcd_dims():
    x = np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)
    out, _ = forward(DISCRIMINATOR, xavier_init(DISCRIMINATOR, 1), x)
    assert out.shape == (1, 2, 1, 1)
    out, _ = forward(HCD, xavier_init(HCD, 1), x)
    assert out.shape == (1, 4, 64, 64)


def test_forward_rejects_bad_input_with_layer_index():
    spec = NetworkSpec([conv(2), fc(3)], (1, 4, 4))
    params = xavier_init(spec, 0)
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros((1, 2, 4, 4), np.float32))
    params["2.weight"] = np.zeros((3, 5, 1, 1), np.float32)
    with pytest.raises(ShapeError) as err:
        forward(spec, params, np.zeros((1, 1, 4, 4), np.float32))
    assert err.value.layer == 2


def test_identity_kernel_reproduces_input():
    spec = NetworkSpec([conv(1, activation="none")], (1, 5, 5))
    params = xavier_init(spec, 0)
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1
    params["1.weight"] = w
    x = np.full((1, 1, 5, 5), 0.37, np.float32)
    out, _ = forward(spec, params, x)
    np.testing.assert_array_equal(out, x)


def test_zero_output_gradient_gives_zero_param_gradients():
    spec = NetworkSpec([conv(3, batch_norm=True), pool(), fc(2)], (2, 4, 4))
    params = xavier_init(spec, 3)
    x = np.random.default_rng(0).normal(size=(2, 2, 4, 4)).astype(np.float32)
    _, cache = forward(spec, params, x, "train")
    grads, gin = backward(spec, params, cache, np.zeros((2, 2, 1, 1), np.float32))
    assert all(not g.any() for g in grads.values())
    assert not gin.any()


def test_backward_rejects_eval_cache():
    spec = NetworkSpec([fc(2)], (1, 2, 2))
    params = xavier_init(spec, 0)
    _, cache = forward(spec, params, np.ones((1, 1, 2, 2), np.float32), "eval")
    with pytest.raises(ValueError):
        backward(spec, params, cache, np.ones((1, 2, 1, 1), np.float32))


def test_fc_weight_gradient_is_outer_product():
    spec = NetworkSpec([fc(3)], (4, 1, 1))
    params = xavier_init(spec, 0)
    x = np.array([1.0, -2.0, 0.5, 3.0], np.float32).reshape(1, 4, 1, 1)
    g = np.array([0.2, -1.0, 4.0], np.float32).reshape(1, 3, 1, 1)
    _, cache = forward(spec, params, x, "train")
    grads, _ = backward(spec, params, cache, g)
    expected = np.outer(g.ravel(), x.ravel())
    np.testing.assert_allclose(grads["1.weight"][:, :, 0, 0], expected, rtol=1e-6)
    np.testing.assert_allclose(grads["1.bias"].ravel(), g.ravel())


def test_batch_norm_normalizes_per_channel_in_train_mode():
    spec = NetworkSpec([conv(4, activation="none", batch_norm=True)], (3, 8, 8))
    params = xavier_init(spec, 0)
    x = np.random.default_rng(1).normal(2.0, 3.0, size=(6, 3, 8, 8))
    out, cache = forward(spec, params.astype(np.float64), x, "train")
    # identity scale/shift at init, so output is the normalized activation
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-3)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)
    assert set(cache.running) == {"1.bn_mean", "1.bn_var"}
    # params are not mutated by a train-mode pass
    assert not params["1.bn_mean"].any()


def test_eval_mode_uses_running_statistics():
    spec = NetworkSpec([conv(2, activation="none", batch_norm=True)], (1, 4, 4))
    params = xavier_init(spec, 0)
    params["1.bn_mean"] = np.full((1, 2, 1, 1), 0.5, np.float32)
    params["1.bn_var"] = np.full((1, 2, 1, 1), 4.0, np.float32)
    x = np.random.default_rng(0).random((1, 1, 4, 4), dtype=np.float32)
    pre, _ = forward(NetworkSpec([conv(2, activation="none")], (1, 4, 4)),
                     NetworkParams({"1.weight": params["1.weight"], "1.bias": params["1.bias"]}), x)
    out, _ = forward(spec, params, x, "eval")
    np.testing.assert_allclose(out, (pre - 0.5) / np.sqrt(4.0 + 1e-5), rtol=1e-5)


def test_forward_is_deterministic():
    spec = DISCRIMINATOR
    x = np.random.default_rng(2).random((2, 3, 64, 64), dtype=np.float32)
    a, _ = forward(spec, xavier_init(spec, 5), x)
    b, _ = forward(spec, xavier_init(spec, 5), x)
    assert np.array_equal(a, b)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    params = NetworkParams({"1.weight": np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)})
    new, state = adam_step(params, {"1.weight": np.zeros((1, 1, 2, 2), np.float32)}, AdamState(), 0.1)
    assert np.array_equal(new["1.weight"], params["1.weight"])
    assert state.step == 1


def test_adam_first_step_hand_computed():
    # m_hat = v_hat = 1 after bias correction, so w -> 1 - 0.1 * 1 / (1 + 1e-8)
    params = NetworkParams({"1.weight": np.ones((1, 1, 1, 1), np.float32)})
    new, state = adam_step(params, {"1.weight": np.ones((1, 1, 1, 1), np.float32)}, AdamState(), 0.1)
    assert new["1.weight"].item() == pytest.approx(0.9, abs=1e-7)
    new, state = adam_step(new, {"1.weight": np.ones((1, 1, 1, 1), np.float32)}, state, 0.1)
    assert state.step == 2
    assert new["1.weight"].item() == pytest.approx(0.8, abs=1e-6)


def test_adam_runs_are_bit_identical():
    spec = NetworkSpec([conv(2), fc(2)], (1, 4, 4))

    def run():
        params, state = xavier_init(spec, 11), AdamState()
        x = np.random.default_rng(3).random((2, 1, 4, 4), dtype=np.float32)
        for _ in range(5):
            out, cache = forward(spec, params, x, "train")
            grads, _ = backward(spec, params, cache, out)
            params, state = adam_step(params, grads, state, 1e-2)
        return params

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a.keys())


def test_adam_rejects_shape_mismatch():
    params = NetworkParams({"1.weight": np.ones((1, 1, 1, 1), np.float32)})
    with pytest.raises(ValueError):
        adam_step(params, {"1.weight": np.ones((1, 1, 1, 2), np.float32)}, AdamState(), 0.1)


# -- Xavier -------------------------------------------------------------------

def test_xavier_variance_matches_uniform_bound():
    spec = NetworkSpec([conv(64), conv(64)], (64, 8, 8))
    w = xavier_init(spec, 0)["2.weight"]
    assert w.size >= 10_000
    # fan_in = fan_out = 3*3*64 = 576; Var U(-a, a) = a^2/3 = 2/1152
    assert abs(w.var() - 2 / 1152) < 0.1 * 2 / 1152
    assert np.abs(w).max() <= math.sqrt(6 / 1152)


def test_xavier_is_seeded_and_biases_are_zero():
    a, b = xavier_init(HCD, 4), xavier_init(HCD, 4)
    assert all(np.array_equal(a[k], b[k]) for k in a.keys())
    assert not any(a[k].any() for k in a.keys() if k.endswith(".bias"))
    c = xavier_init(HCD, 5)
    assert not np.array_equal(a["1.weight"], c["1.weight"])


# -- softmax --------------------------------------------------------------------

def test_softmax_cases():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0], np.float32)), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), softmax64([1.0, 2.0, 3.0]), atol=1e-6)


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=10))
def test_softmax_is_probability_vector(logits):
    p = softmax(np.array(logits, np.float32))
    assert np.all(p >= 0)
    assert abs(float(p.sum()) - 1) <= 1e-6


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_roundtrip_pi(tmp_path):
    params = xavier_init(PI, 9)
    path = tmp_path / "pi.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert list(loaded.keys()) == list(params.keys())
    assert all(np.array_equal(loaded[k], params[k]) for k in params.keys())


def test_checkpoint_header_count():
    params = xavier_init(HCD, 0)
    blob = encode(params)
    assert blob[:4] == b"HFCK"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == len(params.entries)


def test_checkpoint_errors_are_distinct():
    blob = encode(xavier_init(NetworkSpec([fc(2)], (1, 2, 2)), 0))
    with pytest.raises(BadMagicError):
        decode(b"XXXX" + blob[4:])
    with pytest.raises(VersionError):
        decode(blob[:4] + (2).to_bytes(2, "little") + blob[6:])
    with pytest.raises(TruncatedError):
        decode(blob[:-3])
    # first entry's dims start after header (10 bytes) + name length (2) + name
    name_len = int.from_bytes(blob[10:12], "little")
    dims_at = 12 + name_len
    huge = blob[:dims_at] + (0xFFFFFFFF).to_bytes(4, "little") * 4 + blob[dims_at + 16:]
    with pytest.raises(DimOverflowError):
        decode(huge)
