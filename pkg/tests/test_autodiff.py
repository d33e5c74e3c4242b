import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relex import autodiff as ad


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    eye = ad.Tensor(np.eye(2))
    b = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(eye, b).data, b.data)


def test_matmul_hand_expansion():
    a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = ad.Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_mismatch_reports_both_shapes():
    a = ad.Tensor(np.zeros((2, 3)))
    b = ad.Tensor(np.zeros((4, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(a, b)


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = ad.Tensor(rand(rng, 3, 4), requires_grad=True)
    b = ad.Tensor(rand(rng, 4, 2), requires_grad=True)
    err = ad.grad_check(lambda: ad.tsum(ad.matmul(a, b)), [a, b],
                        eps=1e-6, max_coords=20, rng=rng)
    assert err < 1e-6


def test_matmul_batched_gradient():
    rng = np.random.default_rng(8)
    a = ad.Tensor(rand(rng, 3, 2, 4), requires_grad=True)
    b = ad.Tensor(rand(rng, 4, 5), requires_grad=True)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))),
                        [a, b], max_coords=15, rng=rng)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    out = ad.softmax(ad.Tensor([0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_softmax_stable_under_shift():
    out = ad.softmax(ad.Tensor([1000.0, 1000.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_softmax_matches_direct_formula():
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x) / np.exp(x).sum()
    out = ad.softmax(ad.Tensor(x), axis=0)
    np.testing.assert_allclose(out.data, direct, rtol=1e-12)


def test_softmax_mask_zeroes_excluded_positions():
    x = ad.Tensor([[1.0, 5.0, 2.0]])
    out = ad.softmax(x, axis=1, mask=np.array([False, True, False]))
    assert out.data[0, 1] == 0.0
    np.testing.assert_allclose(out.data.sum(), 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_softmax_rows_sum_to_one(seed, n, k):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(n, k))
    out = ad.softmax(ad.Tensor(x), axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(n), atol=1e-6)


def test_softmax_gradient():
    rng = np.random.default_rng(9)
    x = ad.Tensor(rand(rng, 4, 5), requires_grad=True)
    w = rand(rng, 4, 5)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(ad.softmax(x, axis=1), w)),
                        [x], max_coords=20, rng=rng)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# layer_norm


def test_layer_norm_constant_input_gives_zeros():
    x = ad.Tensor(np.full((3, 8), 2.5))
    out = ad.layer_norm(x, ad.Tensor(np.ones(8)), ad.Tensor(np.zeros(8)))
    np.testing.assert_array_equal(out.data, np.zeros((3, 8)))


def test_layer_norm_two_point_symmetry():
    out = ad.layer_norm(ad.Tensor([[1.0, 3.0]]), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_normalizes_nondegenerate_rows():
    rng = np.random.default_rng(11)
    x = rand(rng, 10, 16) * 3 + 1
    out = ad.layer_norm(ad.Tensor(x), ad.Tensor(np.ones(16)), ad.Tensor(np.zeros(16)))
    assert np.all(np.abs(out.data.mean(axis=-1)) < 1e-6)
    assert np.all(np.abs(out.data.var(axis=-1) - 1.0) < 1e-4)


def test_layer_norm_gradient():
    rng = np.random.default_rng(12)
    x = ad.Tensor(rand(rng, 3, 6), requires_grad=True)
    g = ad.Tensor(rand(rng, 6), requires_grad=True)
    b = ad.Tensor(rand(rng, 6), requires_grad=True)
    w = rand(rng, 3, 6)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(ad.layer_norm(x, g, b), w)),
                        [x, g, b], max_coords=12, rng=rng)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# conv1d


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(13)
    x = rand(rng, 7, 3)
    kernel = np.zeros((5, 3, 3))
    kernel[2] = np.eye(3)  # center tap only
    out = ad.conv1d(ad.Tensor(x), ad.Tensor(kernel), ad.Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, x)


def test_conv1d_width1_equals_matmul():
    rng = np.random.default_rng(14)
    x = rand(rng, 6, 4)
    w = rand(rng, 4, 5)
    out = ad.conv1d(ad.Tensor(x), ad.Tensor(w[None]), ad.Tensor(np.zeros(5)))
    np.testing.assert_allclose(out.data, x @ w, rtol=1e-12)


def test_conv1d_even_width_rejected():
    with pytest.raises(ValueError, match="odd"):
        ad.conv1d(ad.Tensor(np.zeros((4, 2))), ad.Tensor(np.zeros((4, 2, 2))),
                  ad.Tensor(np.zeros(2)))


def test_conv1d_receptive_field():
    # perturbation oracle: width-5 output at i must ignore input at i+3
    rng = np.random.default_rng(15)
    x = rand(rng, 10, 3)
    kernel = ad.Tensor(rand(rng, 5, 3, 4))
    bias = ad.Tensor(rand(rng, 4))
    base = ad.conv1d(ad.Tensor(x), kernel, bias).data
    i = 4
    for offset in (3, -3, 4, -4):
        bumped = x.copy()
        bumped[i + offset] += 10.0
        out = ad.conv1d(ad.Tensor(bumped), kernel, bias).data
        np.testing.assert_array_equal(out[i], base[i])
    # sanity: perturbations inside the field do change the output
    bumped = x.copy()
    bumped[i + 2] += 10.0
    assert not np.array_equal(ad.conv1d(ad.Tensor(bumped), kernel, bias).data[i], base[i])


def test_conv1d_gradient():
    rng = np.random.default_rng(16)
    x = ad.Tensor(rand(rng, 6, 3), requires_grad=True)
    k = ad.Tensor(rand(rng, 5, 3, 2), requires_grad=True)
    b = ad.Tensor(rand(rng, 2), requires_grad=True)
    w = rand(rng, 6, 2)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(ad.conv1d(x, k, b), w)),
                        [x, k, b], max_coords=12, rng=rng)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# logsumexp


def test_logsumexp_singleton():
    for a in (-3.5, 0.0, 42.0):
        assert ad.logsumexp(ad.Tensor([a])).item() == pytest.approx(a, abs=1e-12)


def test_logsumexp_direct_evaluation():
    # oracle: log(e^1 + e^2) computed directly
    out = ad.logsumexp(ad.Tensor([1.0, 2.0]))
    assert out.item() == pytest.approx(2.3132616875182226, abs=1e-12)


def test_logsumexp_shifted_direct_evaluation():
    # oracle: 1001 + log(1 + e^-1), no overflow allowed
    out = ad.logsumexp(ad.Tensor([1000.0, 1001.0]))
    assert out.item() == pytest.approx(1001.3132616875182, abs=1e-9)


def test_logsumexp_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        ad.logsumexp(ad.Tensor(np.zeros(0)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_logsumexp_bounds(xs):
    x = np.array(xs)
    val = ad.logsumexp(ad.Tensor(x)).item()
    assert x.max() <= val + 1e-12
    assert val <= x.max() + np.log(len(xs)) + 1e-12


def test_logsumexp_axis_matches_flat():
    rng = np.random.default_rng(17)
    x = rand(rng, 4, 6)
    per_row = ad.logsumexp(ad.Tensor(x), axis=1).data
    for i in range(4):
        assert per_row[i] == pytest.approx(ad.logsumexp(ad.Tensor(x[i])).item())


# ---------------------------------------------------------------------------
# backward


def test_backward_product_rule():
    x = ad.Tensor(3.0, requires_grad=True)
    y = ad.Tensor(4.0, requires_grad=True)
    ad.backward(ad.mul(x, y))
    assert x.grad == pytest.approx(4.0)
    assert y.grad == pytest.approx(3.0)


def test_backward_logsumexp_gradient_is_softmax():
    rng = np.random.default_rng(18)
    x = ad.Tensor(rand(rng, 7), requires_grad=True)
    ad.backward(ad.logsumexp(x))
    np.testing.assert_allclose(x.grad, ad.softmax(ad.Tensor(x.data), axis=0).data,
                               rtol=1e-12)


def test_backward_is_deterministic():
    rng = np.random.default_rng(19)
    x = ad.Tensor(rand(rng, 5, 5), requires_grad=True)
    y = ad.Tensor(rand(rng, 5, 5), requires_grad=True)

    def build():
        z = ad.matmul(x, y)
        return ad.tsum(ad.mul(ad.softmax(z, axis=1), ad.relu(z)))

    loss = build()
    ad.backward(loss)
    g1 = (x.grad.copy(), y.grad.copy())
    ad.backward(loss)
    g2 = (x.grad, y.grad)
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_backward_rejects_non_scalar_loss():
    x = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.relu(x))


def test_backward_unreachable_parameter_gets_exact_zero():
    x = ad.Tensor(2.0, requires_grad=True)
    orphan = ad.Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.mul(x, x), params=[x, orphan])
    np.testing.assert_array_equal(orphan.grad, np.zeros(3))


def test_non_finite_output_is_an_error():
    big = ad.Tensor(np.full((2, 2), 1e308))
    with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError):
        ad.matmul(big, big)


# ---------------------------------------------------------------------------
# grad_check harness


def test_grad_check_exact_quadratic():
    x = ad.Tensor(3.0, requires_grad=True)
    err = ad.grad_check(lambda: ad.mul(x, x), [x], eps=1e-5)
    assert err < 1e-8


def test_grad_check_eps_sweep_has_interior_minimum():
    # a stiff function with a large constant offset so both truncation
    # (large eps) and cancellation (small eps) are visible at fp64
    x = ad.Tensor(np.array(0.01), requires_grad=True)
    offset = ad.Tensor(np.array(1.0e4))

    def f():
        pair = ad.concat([ad.reshape(ad.mul(x, 40.0), (1,)),
                          ad.reshape(ad.mul(x, 0.0), (1,))])
        return ad.add(ad.logsumexp(pair), ad.tsum(offset))

    errs = [ad.grad_check(f, [x], eps=e) for e in (1e-4, 1e-5, 1e-6)]
    assert errs[1] < errs[0]
    assert errs[1] < errs[2]


# ---------------------------------------------------------------------------
# indexing and shaping ops


def test_gather_rows_and_gradient():
    rng = np.random.default_rng(20)
    table = ad.Tensor(rand(rng, 6, 3), requires_grad=True)
    idx = np.array([1, 1, 4])
    out = ad.gather_rows(table, idx)
    np.testing.assert_array_equal(out.data, table.data[idx])
    ad.backward(ad.tsum(out))
    expected = np.zeros((6, 3))
    expected[1] = 2.0
    expected[4] = 1.0
    np.testing.assert_array_equal(table.grad, expected)


def test_take_per_row():
    x = ad.Tensor(np.arange(12, dtype=float).reshape(3, 4), requires_grad=True)
    out = ad.take_per_row(x, np.array([0, 3, 2]))
    np.testing.assert_array_equal(out.data, [0.0, 7.0, 10.0])
    ad.backward(ad.tsum(out))
    assert x.grad.sum() == 3.0 and x.grad[1, 3] == 1.0


def test_concat_transpose_reshape_gradients():
    rng = np.random.default_rng(21)
    a = ad.Tensor(rand(rng, 2, 3), requires_grad=True)
    b = ad.Tensor(rand(rng, 2, 2), requires_grad=True)
    w = rand(rng, 5, 2)

    def f():
        c = ad.concat([a, b], axis=1)           # (2, 5)
        t = ad.transpose(c, (1, 0))             # (5, 2)
        r = ad.reshape(t, (10,))
        return ad.tsum(ad.mul(r, w.reshape(10)))

    err = ad.grad_check(f, [a, b], max_coords=10, rng=rng)
    assert err < 1e-6


def test_no_grad_skips_graph():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.matmul(x, x)
    assert not y.requires_grad and y._bw is None


def test_param_set_load_validates_shapes():
    ps = ad.ParamSet()
    ps.add("w", np.zeros((2, 3)))
    with pytest.raises(ValueError, match="shape mismatch"):
        ps.load({"w": np.zeros((3, 2))})
    with pytest.raises(ValueError, match="name mismatch"):
        ps.load({"v": np.zeros((2, 3))})
