import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kjepa import _fallback, kernels
from kjepa.errors import ContractError, DimensionError, NumericError
from kjepa.numerics import (
    AdamState,
    ModelParams,
    Tape,
    Tensor,
    adam_step,
    add,
    backward,
    conv1d,
    conv_out_len,
    conv_transpose1d,
    ema_update,
    eigenvalues,
    flatten,
    grad_check,
    linear,
    mse,
    relu,
    reshape,
    scale,
    sub,
)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# --- conv1d -------------------------------------------------------------------


def test_conv_length_chain_matches_encoder_table():
    rows = [(7, 2, 3), (5, 2, 2), (3, 2, 1), (3, 2, 1)]
    lengths = [768]
    for k, s, p in rows:
        lengths.append(conv_out_len(lengths[-1], k, s, p))
    assert lengths == [768, 384, 192, 96, 48]
    assert 128 * lengths[-1] == 6144


def test_conv1d_output_shape():
    x = Tensor(np.zeros((2, 1, 768), dtype=np.float32))
    w = Tensor(np.zeros((16, 1, 7), dtype=np.float32))
    assert conv1d(x, w, None, stride=2, padding=3).shape == (2, 16, 384)


def test_conv1d_zero_input_gives_bias():
    x = Tensor(np.zeros((3, 4, 20)))
    w = Tensor(np.random.default_rng(0).standard_normal((5, 4, 3)))
    b = Tensor(np.arange(5.0))
    out = conv1d(x, w, b, stride=1, padding=1).data
    assert np.array_equal(out, np.broadcast_to(np.arange(5.0)[None, :, None], out.shape))


def test_conv1d_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 1, 17))
    out = conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), None, stride=1, padding=0).data
    assert np.array_equal(out, x)


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 11))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    out = conv1d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    l_out = conv_out_len(11, 5, 2, 2)
    ref = np.zeros((2, 4, l_out))
    for n in range(2):
        for o in range(4):
            for t in range(l_out):
                ref[n, o, t] = b[o] + np.sum(w[o] * xp[n, :, 2 * t : 2 * t + 5])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv1d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv1d(Tensor(np.zeros((1, 2, 10))), Tensor(np.zeros((3, 1, 3))))


def test_conv1d_too_short():
    with pytest.raises(DimensionError):
        conv1d(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 7))), padding=1)


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, conv_transpose(y)>
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 24))
    w = rng.standard_normal((5, 3, 5))
    y_len = conv_out_len(24, 5, 2, 2)
    y = rng.standard_normal((2, 5, y_len))
    lhs = np.sum(conv1d(Tensor(x), Tensor(w), None, 2, 2).data * y)
    back = conv_transpose1d(Tensor(y), Tensor(w), None, 2, 2, output_padding=1).data
    assert back.shape == x.shape
    assert lhs == pytest.approx(np.sum(x * back), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    a=st.floats(-3, 3, allow_nan=False),
    b=st.floats(-3, 3, allow_nan=False),
)
def test_conv1d_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((4, 2, 5)).astype(np.float32))
    x = rng.standard_normal((2, 2, 33)).astype(np.float32)
    y = rng.standard_normal((2, 2, 33)).astype(np.float32)
    lhs = conv1d(Tensor((a * x + b * y).astype(np.float32)), w, None, 2, 2).data
    rhs = a * conv1d(Tensor(x), w, None, 2, 2).data + b * conv1d(Tensor(y), w, None, 2, 2).data
    scale_ = np.abs(a * conv1d(Tensor(x), w, None, 2, 2).data).max() + np.abs(b * conv1d(Tensor(y), w, None, 2, 2).data).max()
    assert np.abs(lhs - rhs).max() <= 1e-5 * max(scale_, 1.0)


# --- tape / backward -------------------------------------------------------------


def test_backward_scalar_quadratic():
    w = t64([[2.0]])
    x = t64([[3.0]], grad=False)
    with Tape() as tape:
        loss = mse(linear(x, w), np.array([[1.0]]))
    backward(tape, loss)
    assert loss.item() == 25.0
    assert w.grad[0, 0] == 30.0


def test_backward_unused_parameter_gets_zero_grad():
    w = t64([[2.0]])
    unused = t64(np.ones((3, 3)))
    with Tape() as tape:
        loss = mse(linear(t64([[1.0]], grad=False), w), np.zeros((1, 1)))
    tape.backward(loss, wrt=[unused])
    assert np.array_equal(unused.grad, np.zeros((3, 3)))


def test_relu_dead_region_blocks_gradient():
    x = t64([[-1.5, 2.0]])
    with Tape() as tape:
        loss = mse(relu(x), np.zeros((1, 2)))
    tape.backward(loss)
    assert x.grad[0, 0] == 0.0
    assert x.grad[0, 1] == pytest.approx(2.0)


def test_fan_out_accumulates():
    x = t64([[1.0, -2.0]])
    with Tape() as tape:
        y = add(x, scale(x, 3.0))
        loss = mse(y, np.zeros((1, 2)))
    tape.backward(loss)
    # loss = mean((4x)^2) -> d/dx = 16 x
    np.testing.assert_allclose(x.grad, [[16.0, -32.0]])


def test_backward_rejects_non_scalar():
    x = t64(np.ones((2, 2)))
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_second_backward_requires_reset_and_is_deterministic():
    rng = np.random.default_rng(4)
    w = Tensor(rng.standard_normal((3, 2, 5)).astype(np.float32), requires_grad=True)
    x = Tensor(rng.standard_normal((4, 2, 30)).astype(np.float32))
    with Tape() as tape:
        loss = mse(relu(conv1d(x, w, None, 2, 2)), np.zeros((4, 3, 15), dtype=np.float32))
    tape.backward(loss)
    first = w.grad.copy()
    with pytest.raises(ContractError):
        tape.backward(loss)
    tape.reset()
    tape.backward(loss)
    assert np.array_equal(first, w.grad)


def test_backward_loss_must_come_from_tape():
    x = t64([[1.0]])
    with Tape():
        loss = mse(x, np.zeros((1, 1)))
    other = Tape()
    with pytest.raises(ContractError):
        other.backward(loss)


def test_no_recording_outside_tape():
    x = t64([[1.0]])
    y = scale(x, 2.0)
    assert not y.requires_grad


def test_mse_rejects_non_finite():
    with pytest.raises(NumericError):
        mse(t64([[np.inf]]), np.zeros((1, 1)))


# --- gradient checks ------------------------------------------------------------


def test_grad_check_linear_least_squares():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((20, 4))
    y = rng.standard_normal((20, 1))
    params = ModelParams(w=t64(rng.standard_normal((1, 4))), b=t64(rng.standard_normal(1)))
    err = grad_check(lambda p: mse(linear(Tensor(x), p["w"], p["b"]), y), params, h=1e-5)
    assert err <= 1e-6


def test_grad_check_zero_parameters():
    assert grad_check(lambda p: Tensor(np.array(1.0)), ModelParams()) == 0.0


def test_grad_check_requires_double():
    params = ModelParams(w=Tensor(np.ones((1, 1), dtype=np.float32), requires_grad=True))
    with pytest.raises(ContractError):
        grad_check(lambda p: mse(p["w"], np.zeros((1, 1))), params)


def test_grad_check_reports_non_finite():
    params = ModelParams(w=t64([[1.0]]))

    def f(p):
        if p["w"].data[0, 0] > 1.0:
            return Tensor(np.array(np.nan))
        return mse(p["w"], np.zeros((1, 1)))

    with pytest.raises(NumericError):
        grad_check(f, params, h=1e-4)


def _layer_cases():
    rng = np.random.default_rng(6)
    x3 = rng.standard_normal((2, 3, 21))
    x2 = rng.standard_normal((3, 6))
    yield "conv1d", ModelParams(w=t64(rng.standard_normal((4, 3, 5))), b=t64(rng.standard_normal(4)), x=t64(x3)), (
        lambda p: mse(conv1d(p["x"], p["w"], p["b"], 2, 2), np.zeros((2, 4, 11)))
    )
    yield "conv_transpose1d", ModelParams(w=t64(rng.standard_normal((3, 2, 3))), b=t64(rng.standard_normal(2)), x=t64(x3)), (
        lambda p: mse(conv_transpose1d(p["x"], p["w"], p["b"], 2, 1, 1), np.ones((2, 2, 42)))
    )
    yield "relu", ModelParams(x=t64(x2 + np.sign(x2) * 0.1)), (lambda p: mse(relu(p["x"]), np.ones((3, 6))))
    yield "linear", ModelParams(w=t64(rng.standard_normal((5, 6))), b=t64(rng.standard_normal(5)), x=t64(x2)), (
        lambda p: mse(linear(p["x"], p["w"], p["b"]), np.ones((3, 5)))
    )
    yield "flatten", ModelParams(x=t64(x3)), (lambda p: mse(flatten(p["x"]), np.ones((2, 63))))
    yield "reshape", ModelParams(x=t64(x2)), (lambda p: mse(reshape(p["x"], (9, 2)), np.ones((9, 2))))
    yield "add_scale_sub", ModelParams(a=t64(x2), b=t64(x2[::-1].copy())), (
        lambda p: mse(sub(add(p["a"], scale(p["b"], -1.5)), scale(p["a"], 0.25)), np.ones((3, 6)))
    )
    yield "mse", ModelParams(a=t64(x2), b=t64(x2 * 0.5)), (lambda p: mse(p["a"], p["b"]))


@pytest.mark.parametrize("name,params,f", list(_layer_cases()), ids=[c[0] for c in _layer_cases()])
def test_per_layer_grad_check(name, params, f):
    assert grad_check(f, params, h=1e-5) <= 1e-6


# --- adam / ema -------------------------------------------------------------------


def _single(value, grad):
    p = ModelParams(w=Tensor(np.array([value], dtype=np.float64), requires_grad=True))
    p["w"].grad = np.array([grad], dtype=np.float64)
    return p


def test_adam_first_step_magnitude():
    p = _single(0.0, 1.0)
    state = AdamState.for_params(p)
    adam_step(state, p)
    expected = -0.001 * (0.1 / (1 - 0.9)) / (np.sqrt(0.001 / (1 - 0.999)) + 1e-8)
    assert p["w"].data[0] == pytest.approx(expected, rel=1e-12)
    assert p["w"].grad[0] == 0.0
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    p = _single(0.7, 0.0)
    state = AdamState.for_params(p)
    adam_step(state, p)
    assert p["w"].data[0] == 0.7


def test_adam_constant_gradient_steps_do_not_grow():
    p = _single(0.0, 1.0)
    state = AdamState.for_params(p)
    adam_step(state, p)
    d1 = -p["w"].data[0]
    p["w"].grad[:] = 1.0
    adam_step(state, p)
    d2 = -p["w"].data[0] - d1
    assert abs(d2) <= abs(d1)


def test_adam_missing_grad():
    p = ModelParams(w=t64([1.0]))
    state = AdamState.for_params(p)
    with pytest.raises(ContractError):
        adam_step(state, p)


def _pair(target, online):
    return ModelParams(w=t64(target, grad=False)), ModelParams(w=t64(online, grad=False))


def test_ema_alpha_one_keeps_target():
    tgt, onl = _pair([1.0, 2.0], [5.0, 6.0])
    ema_update(tgt, onl, 1.0)
    assert tgt["w"].data.tolist() == [1.0, 2.0]


def test_ema_alpha_zero_copies_online():
    tgt, onl = _pair([1.0, 2.0], [5.0, 6.0])
    ema_update(tgt, onl, 0.0)
    assert tgt["w"].data.tolist() == [5.0, 6.0]


def test_ema_paper_decay():
    tgt, onl = _pair([1.0], [0.0])
    ema_update(tgt, onl, 0.996)
    assert tgt["w"].data[0] == pytest.approx(0.996, abs=1e-15)


def test_ema_mismatch():
    tgt = ModelParams(w=t64([1.0]))
    with pytest.raises(ContractError):
        ema_update(tgt, ModelParams(v=t64([1.0])), 0.5)
    with pytest.raises(ContractError):
        ema_update(tgt, ModelParams(w=t64([1.0, 2.0])), 0.5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(0.0, 1.0))
def test_ema_is_contraction_towards_online(seed, alpha):
    rng = np.random.default_rng(seed)
    tgt, onl = _pair(rng.standard_normal(7), rng.standard_normal(7))
    before = np.linalg.norm(tgt["w"].data - onl["w"].data)
    ema_update(tgt, onl, alpha)
    after = np.linalg.norm(tgt["w"].data - onl["w"].data)
    assert after == pytest.approx(alpha * before, rel=1e-9, abs=1e-12)


# --- eigenvalues --------------------------------------------------------------------


def test_eigenvalues_identity():
    lam = eigenvalues(np.eye(32))
    assert np.array_equal(np.abs(lam), np.ones(32))


def test_eigenvalues_rotation():
    lam = eigenvalues(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert sorted(lam.imag.tolist()) == [-1.0, 1.0]
    assert np.all(lam.real == 0.0)


def test_eigenvalues_sorted_by_magnitude():
    lam = eigenvalues(np.diag([0.5, -3.0, 2.0, 1.0]))
    assert np.abs(lam).tolist() == [3.0, 2.0, 1.0, 0.5]


def _lu_det(a):
    a = a.copy()
    n = a.shape[0]
    sign = 1.0
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if a[piv, k] == 0.0:
            return 0.0
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            sign = -sign
        a[k + 1 :, k:] -= np.outer(a[k + 1 :, k] / a[k, k], a[k, k:])
    return sign * float(np.prod(np.diag(a)))


@pytest.mark.parametrize("n", [2, 8, 32])
def test_eigenvalues_trace_and_det(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        m = rng.standard_normal((n, n))
        lam = eigenvalues(m)
        assert abs(lam.sum().real - np.trace(m)) <= 1e-8
        assert abs(lam.sum().imag) <= 1e-8
        det = _lu_det(m)
        assert abs(np.prod(lam).real - det) <= 1e-6 * abs(det)


def test_eigenvalues_complex_pairs_are_conjugate():
    m = np.random.default_rng(9).standard_normal((8, 8))
    lam = eigenvalues(m)
    np.testing.assert_allclose(np.sort_complex(lam), np.sort_complex(lam.conj()), atol=1e-12)


def test_eigenvalues_non_convergence_flags_partial():
    m = np.random.default_rng(10).standard_normal((6, 6))
    with pytest.raises(NumericError) as info:
        eigenvalues(m, max_sweeps=0)
    assert info.value.partial is not None and np.isnan(info.value.partial).any()


def test_eigenvalues_rejects_bad_input():
    with pytest.raises(DimensionError):
        eigenvalues(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        eigenvalues(np.eye(65))
    with pytest.raises(NumericError):
        eigenvalues(np.array([[np.nan]]))


# --- backend agreement ------------------------------------------------------------------


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_kernels_match_fallback():
    from kjepa import _kernels

    rng = np.random.default_rng(11)
    eps = rng.standard_normal(500)
    assert np.array_equal(_kernels.arma_filter(eps, 0.5, -0.4), _fallback.arma_filter(eps, 0.5, -0.4))
    for n in (2, 5, 16, 32):
        a = rng.standard_normal((n, n))
        hc, hf = _kernels.hessenberg(a), _fallback.hessenberg(a)
        np.testing.assert_allclose(hc, hf, atol=1e-12)
        wc = _kernels.hqr(hc, 100 * n)
        wf = _fallback.hqr(hc, 100 * n)
        assert wc[2] and wf[2]
        np.testing.assert_allclose(np.sort_complex(wc[0] + 1j * wc[1]), np.sort_complex(wf[0] + 1j * wf[1]), atol=1e-10)
    x = rng.standard_normal((3, 4, 40)).astype(np.float32)
    assert np.array_equal(_kernels.im2col(x, 5, 2, 18), _fallback.im2col(x, 5, 2, 18))
    cols = rng.standard_normal((3, 18, 4, 5))
    np.testing.assert_allclose(_kernels.col2im(cols, 40, 2), _fallback.col2im(cols, 40, 2), atol=1e-12)
