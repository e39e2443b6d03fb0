import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vrd_relex import numcore as nc

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def param(x, name="w"):
    return nc.Tensor(x, requires_grad=True, name=name)


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_allclose(nc.softmax(nc.Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_leaky_relu_negative_side():
    assert nc.leaky_relu(nc.Tensor(-1.0), 0.1).item() == pytest.approx(-0.1)
    assert nc.leaky_relu(nc.Tensor(2.0), 0.1).item() == 2.0


def test_cross_entropy_uniform_two_classes():
    loss = nc.softmax_cross_entropy(nc.Tensor([[0.0, 0.0]]), [0])
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_rejects_masked_target():
    with pytest.raises(ValueError, match="masked"):
        nc.softmax_cross_entropy(nc.Tensor([[0.0, 1.0]]), [1], mask=[[True, False]])


def test_backward_of_sum_is_ones():
    w = param(np.arange(4.0))
    nc.backward(nc.sum(w))
    np.testing.assert_array_equal(w.grad, np.ones(4))


def test_backward_of_square():
    w = param([3.0])
    nc.backward(nc.sum(w * w))
    np.testing.assert_allclose(w.grad, [6.0])


def test_gradients_accumulate_until_zeroed():
    w = param([1.0, 2.0])
    nc.backward(nc.sum(w * 3.0))
    nc.backward(nc.sum(w * 3.0))
    np.testing.assert_allclose(w.grad, [6.0, 6.0])
    w.zero_grad()
    np.testing.assert_allclose(w.grad, [0.0, 0.0])


def test_non_scalar_loss_is_rejected():
    with pytest.raises(nc.ShapeError):
        nc.backward(param([1.0, 2.0]) * 2.0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(4, 5\)|\(4, 5\).*\(2, 3\)"):
        nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((4, 5))))


def test_non_finite_forward_is_an_error():
    with pytest.raises(nc.NumericalError):
        nc.Tensor([1.0]) * np.inf


def test_reused_operand_gradient_is_not_double_counted():
    a = param([2.0])
    nc.backward(nc.sum(nc.mul(a, a)))
    np.testing.assert_allclose(a.grad, [4.0])


def test_binary_cross_entropy_at_zero_logit():
    assert nc.binary_cross_entropy(nc.Tensor([0.0]), [1.0]).item() == pytest.approx(math.log(2))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = nc.softmax(nc.Tensor(x), axis=1).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_sigmoid_stays_in_open_interval(x):
    s = nc.sigmoid(nc.Tensor(x)).data
    assert np.all(s > 0) and np.all(s < 1)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 5)), elements=finite), st.data())
def test_cross_entropies_are_nonnegative(x, data):
    targets = data.draw(st.lists(st.integers(0, x.shape[1] - 1), min_size=x.shape[0], max_size=x.shape[0]))
    assert nc.softmax_cross_entropy(nc.Tensor(x), targets).item() >= 0.0
    y = (x > 0).astype(float)
    assert nc.binary_cross_entropy(nc.Tensor(x), y).item() >= 0.0


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_moves_by_learning_rate():
    w = param([0.5])
    w.grad[:] = 1.0
    nc.adam_step([nc.ParamGroup("g", [w], 1e-2)])
    assert w.data[0] == pytest.approx(0.5 - 1e-2, abs=1e-9)
    assert w.grad[0] == 0.0


def test_adam_zero_gradient_leaves_weight():
    w = param([0.5])
    nc.adam_step([nc.ParamGroup("g", [w], 1e-2)])
    assert w.data[0] == 0.5


def test_adam_group_rates_scale_updates():
    a, b = param([1.0], "a"), param([1.0], "b")
    a.grad[:] = b.grad[:] = 0.3
    nc.adam_step([nc.ParamGroup("fast", [a], 1e-2), nc.ParamGroup("slow", [b], 1e-5)])
    assert (1.0 - a.data[0]) / (1.0 - b.data[0]) == pytest.approx(1e3, rel=1e-6)


def test_adam_state_persists_between_steps():
    w = param([0.0])
    opt = nc.Adam([nc.ParamGroup("g", [w], 0.1)])
    w.grad[:] = 1.0
    opt.step()
    w.grad[:] = -1.0
    opt.step()
    # second step: m = 0.9*0.1 - 0.1 = -0.01, bias-corrected by 0.19
    m_hat = -0.01 / 0.19
    v_hat = (0.999 * 0.001 + 0.001) / (1 - 0.999**2)
    first = -0.1 * 1.0 / (1.0 + 1e-8)
    assert w.data[0] == pytest.approx(first - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-12)


def test_param_group_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        nc.ParamGroup("g", [], 0.0)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def test_gradient_check_passes_on_composite_graph():
    rng = np.random.default_rng(0)
    W = param(rng.normal(size=(4, 3)), "W")
    x = param(rng.normal(size=(5, 4)), "x")
    y = rng.integers(0, 3, 5)

    def build():
        return nc.softmax_cross_entropy(nc.leaky_relu(nc.matmul(x, W)), y) + nc.mean(nc.sigmoid(x))

    report = nc.check_gradients(build, {"W": W, "x": x})
    assert report.passed, str(report)
    assert {r.name: r.coords for r in report.results} == {"W": 12, "x": 20}


def test_gradient_check_catches_corrupted_gradient():
    w = param(np.linspace(-1, 1, 40), "w")

    def bad_square(a):
        def bw(g):
            nc._accumulate(a, g * 3.0 * a.data)  # true derivative is 2a

        return nc._result(a.data**2, (a,), bw)

    report = nc.check_gradients(lambda: nc.sum(bad_square(w)), {"w": w})
    assert not report.passed
    assert report.failures()[0].max_rel_error > 0.1


def test_gradient_check_probes_at_least_32_coordinates():
    w = param(np.random.default_rng(1).normal(size=(10, 10)))
    report = nc.check_gradients(lambda: nc.sum(w * w), {"w": w})
    assert report.results[0].coords == 32


def test_losses_are_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(5)
        W = param(rng.normal(size=(6, 4)))
        opt = nc.Adam([nc.ParamGroup("g", [W], 1e-2)])
        out = []
        for _ in range(5):
            loss = nc.softmax_cross_entropy(nc.matmul(nc.Tensor(np.eye(6)), W), [0, 1, 2, 3, 0, 1])
            nc.backward(loss)
            opt.step()
            out.append(loss.item())
        return out

    assert run() == run()
