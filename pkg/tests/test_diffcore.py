import math

import numpy as np
import pytest

from zoomshot.diffcore import Graph, Tensor2, cosine_rows, scalar, softmax_rows
from zoomshot.errors import (
    ConfigError,
    DegenerateInputError,
    ShapeError,
    UsageError,
    ValidationError,
)
from zoomshot.gradcheck import finite_diff, rel_err


def test_tensor_rejects_non_finite():
    with pytest.raises(ValidationError):
        Tensor2([[1.0, float("nan")]])
    with pytest.raises(ValidationError):
        Tensor2([[float("inf")]])


def test_matmul_identity():
    g = Graph()
    out = g.matmul(Tensor2(np.eye(2)), Tensor2([[1.0, 2.0], [3.0, 4.0]]))
    assert out.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_matmul_projector():
    g = Graph()
    out = g.matmul(Tensor2([[1.0, 0.0], [0.0, 0.0]]), Tensor2([[5.0], [7.0]]))
    assert out.data.tolist() == [[5.0], [0.0]]


def test_matmul_shape_error_names_both_shapes():
    g = Graph()
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        g.matmul(Tensor2(np.zeros((2, 3))), Tensor2(np.zeros((2, 2))))


def test_matmul_grad_of_sum_matches_finite_differences():
    # linear in each input, so central differences are exact to roundoff
    rng = np.random.default_rng(0)
    a = Tensor2(rng.normal(size=(3, 3)), requires_grad=True)
    b = Tensor2(rng.normal(size=(3, 3)), requires_grad=True)

    def build():
        g = Graph()
        return g, g.sum(g.matmul(a, b))

    g, loss = build()
    grads = g.backward(loss)
    fd_a = finite_diff(lambda: build()[1].item(), a.data)
    assert rel_err(grads[a], fd_a) < 1e-6


def test_row_cosine_self_similarity_and_orthogonality():
    g = Graph()
    a = Tensor2([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor2([[1.0, 0.0]])
    out = g.row_cosine(a, b)
    assert out.data[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert out.data[1, 0] == pytest.approx(0.0, abs=1e-15)


def test_row_cosine_scale_invariance():
    g = Graph()
    out = g.row_cosine(Tensor2([[2.0, 0.0]]), Tensor2([[1.0, 0.0]]))
    assert out.data[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_row_cosine_positive_rescale_invariant():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(5, 6))
    base = cosine_rows(a, b)
    scaled = cosine_rows(a * 37.0, b)
    assert np.abs(base - scaled).max() < 1e-12


def test_row_cosine_zero_row_error_names_index():
    g = Graph()
    bad = Tensor2([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DegenerateInputError, match="row 1"):
        g.row_cosine(bad, Tensor2([[1.0, 0.0]]))


def test_row_softmax_uniform_row():
    g = Graph()
    out = g.row_softmax(Tensor2([[0.0, 0.0, 0.0]]), 1.0)
    assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)


def test_row_softmax_analytic():
    g = Graph()
    out = g.row_softmax(Tensor2([[math.log(2.0), 0.0]]), 1.0)
    assert out.data[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert out.data[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_row_softmax_temperature_flattens_monotonically():
    # doubling the temperature must shrink the output spread every time
    rng = np.random.default_rng(11)
    z = rng.normal(size=(1, 6))
    spreads = []
    for temperature in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        s = softmax_rows(z, temperature)
        spreads.append(float(s.max() - s.min()))
    assert all(lo < hi for lo, hi in zip(spreads[1:], spreads[:-1]))


def test_row_softmax_rows_sum_to_one_and_permutation_equivariant():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(7, 9))
    s = softmax_rows(z, 3.0)
    assert np.abs(s.sum(axis=1) - 1.0).max() < 1e-12
    perm = rng.permutation(9)
    assert np.abs(softmax_rows(z[:, perm], 3.0) - s[:, perm]).max() < 1e-14


def test_row_softmax_bad_temperature():
    g = Graph()
    with pytest.raises(ConfigError):
        g.row_softmax(Tensor2([[0.0]]), 0.0)
    with pytest.raises(ConfigError):
        g.row_softmax(Tensor2([[0.0]]), -1.0)


def test_l1_mean_basics():
    g = Graph()
    a = Tensor2([[1.0, 1.0]])
    assert g.l1_mean(a, a).item() == 0.0
    g2 = Graph()
    assert g2.l1_mean(Tensor2([[1.0, 1.0]]), Tensor2([[0.0, 0.0]])).item() == 2.0


def test_l1_mean_gradient_matches_fd_away_from_ties():
    rng = np.random.default_rng(9)
    while True:
        a_data = rng.normal(size=(3, 4))
        b_data = rng.normal(size=(3, 4))
        if np.abs(a_data - b_data).min() > 1e-3:
            break
    a = Tensor2(a_data, requires_grad=True)
    b = Tensor2(b_data, requires_grad=True)

    def build():
        g = Graph()
        return g, g.l1_mean(a, b)

    g, loss = build()
    grads = g.backward(loss)
    assert rel_err(grads[a], finite_diff(lambda: build()[1].item(), a.data)) < 1e-6
    assert rel_err(grads[b], finite_diff(lambda: build()[1].item(), b.data)) < 1e-6


def test_mse_mean_basics():
    g = Graph()
    a = Tensor2([[1.0, 0.0]])
    assert g.mse_mean(a, a).item() == 0.0
    g2 = Graph()
    assert g2.mse_mean(Tensor2([[1.0, 0.0]]), Tensor2([[0.0, 0.0]])).item() == 1.0
    g3 = Graph()
    out = g3.mse_mean(Tensor2([[1.0, 1.0], [2.0, 2.0]]), Tensor2(np.zeros((2, 2))))
    assert out.item() == 5.0  # mean of (2, 8)


def test_shape_errors_for_elementwise_ops():
    g = Graph()
    a = Tensor2(np.zeros((2, 2)))
    b = Tensor2(np.zeros((2, 3)))
    for op in (g.add, g.subtract, g.l1_mean, g.mse_mean):
        with pytest.raises(ShapeError):
            op(a, b)


def test_cross_entropy_one_hot_is_zero_up_to_eps():
    g = Graph()
    one_hot = Tensor2([[1.0, 0.0, 0.0]])
    assert abs(g.cross_entropy_rows(one_hot, one_hot).item()) < 1e-9


def test_cross_entropy_uniform_is_log_c():
    c = 5
    g = Graph()
    uniform = Tensor2(np.full((3, c), 1.0 / c))
    assert g.cross_entropy_rows(uniform, uniform).item() == pytest.approx(math.log(c), rel=1e-9)


def test_cross_entropy_rejects_non_stochastic():
    g = Graph()
    good = Tensor2([[0.5, 0.5]])
    with pytest.raises(ValidationError):
        g.cross_entropy_rows(good, Tensor2([[0.7, 0.7]]))
    with pytest.raises(ValidationError):
        g.cross_entropy_rows(Tensor2([[1.5, -0.5]]), good)


def test_cross_entropy_grad_wrt_student_logits_matches_fd():
    rng = np.random.default_rng(13)
    zt = Tensor2(rng.normal(size=(3, 4)))
    zs = Tensor2(rng.normal(size=(3, 4)), requires_grad=True)

    def build():
        g = Graph()
        return g, g.cross_entropy_rows(g.row_softmax(zt, 1.0), g.row_softmax(zs, 1.0))

    g, loss = build()
    grads = g.backward(loss)
    fd = finite_diff(lambda: build()[1].item(), zs.data)
    assert rel_err(grads[zs], fd) < 1e-5


def test_backward_sum_gives_all_ones():
    w = Tensor2(np.arange(4.0).reshape(2, 2), requires_grad=True)
    g = Graph()
    grads = g.backward(g.sum(w))
    assert np.array_equal(grads[w], np.ones((2, 2)))


def test_backward_mse_matches_closed_form():
    rng = np.random.default_rng(21)
    w = Tensor2(rng.normal(size=(3, 3)), requires_grad=True)
    x = rng.normal(size=(3, 1))
    y = rng.normal(size=(3, 1))
    g = Graph()
    loss = g.mse_mean(g.matmul(w, Tensor2(x)), Tensor2(y))
    grads = g.backward(loss)
    expected = (2.0 / 3.0) * (w.data @ x - y) @ x.T
    assert np.abs(grads[w] - expected).max() < 1e-12


def test_backward_rejects_non_scalar_and_foreign_nodes():
    g = Graph()
    a = Tensor2(np.zeros((2, 2)), requires_grad=True)
    out = g.add(a, a)
    with pytest.raises(UsageError):
        g.backward(out)
    other = Graph()
    loss = other.sum(a)
    with pytest.raises(UsageError):
        g.backward(loss)


def test_backward_twice_doubles_gradients():
    a = Tensor2([[1.0, 2.0]], requires_grad=True)
    g = Graph()
    loss = g.mse_mean(a, Tensor2([[0.0, 0.0]]))
    first = g.backward(loss)[a].copy()
    second = g.backward(loss)[a]
    assert np.array_equal(second, 2.0 * first)


def test_unreachable_watched_leaf_gets_zero_gradient():
    a = Tensor2([[1.0]], requires_grad=True)
    unused = Tensor2([[5.0]], requires_grad=True)
    g = Graph()
    g.watch(unused)
    loss = g.sum(a)
    grads = g.backward(loss)
    assert np.array_equal(grads[unused], np.zeros((1, 1)))
    assert grads[a][0, 0] == 1.0


def test_ops_are_deterministic():
    rng = np.random.default_rng(17)
    a_data = rng.normal(size=(4, 5))
    b_data = rng.normal(size=(6, 5))

    def run():
        g = Graph()
        a = Tensor2(a_data.copy(), requires_grad=True)
        b = Tensor2(b_data.copy())
        loss = g.mse_mean(g.row_softmax(g.row_cosine(a, b), 2.0),
                          Tensor2(np.zeros((4, 6))))
        grads = g.backward(loss)
        return loss.item(), grads[a].copy()

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_scalar_helper():
    s = scalar(2.5)
    assert s.shape == (1, 1) and s.item() == 2.5


def test_row_cosine_single_row_rescale_invariant():
    rng = np.random.default_rng(23)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(5, 6))
    base = cosine_rows(a, b)
    bumped = a.copy()
    bumped[2] *= 91.5
    assert np.abs(cosine_rows(bumped, b) - base).max() < 1e-12
