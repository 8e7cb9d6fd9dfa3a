import numpy as np
import pytest

from src.core import autodiff as ad
from src.core.errors import NonFiniteError, ShapeError
from src.core.gradcheck import analytic_gradient, gradient_check, numeric_gradient
from src.core.lstm import LstmLayerParams, build_module, lstm_cell_on, state_on


def _sum_of_squares(tape, p):
    return ad.sum_squares(p["x"])


def test_quadratic_gradient():
    """L(x) = sum(x^2), x = [1, 2] -> [2, 4]"""
    params = {"x": np.array([[1.0], [2.0]])}
    assert analytic_gradient(_sum_of_squares, params)["x"].ravel().tolist() == [2.0, 4.0]
    report = gradient_check(_sum_of_squares, params)
    assert report.max_rel_error < 1e-8
    assert report.passed


def test_numeric_gradient_does_not_mutate_params():
    x = np.array([[1.0], [2.0]])
    numeric_gradient(_sum_of_squares, {"x": x})
    assert x.ravel().tolist() == [1.0, 2.0]


def test_non_finite_loss_raises():
    params = {"x": np.array([[800.0]])}
    with pytest.raises(NonFiniteError):
        gradient_check(lambda tape, p: ad.sum_squares(ad.exp(p["x"])), params)


def test_non_scalar_loss_rejected():
    params = {"x": np.array([[1.0], [2.0]])}
    with pytest.raises(ShapeError):
        gradient_check(lambda tape, p: ad.tanh(p["x"]), params)


def test_report_fails_above_tolerance():
    # 일부러 틀린 backward 를 가진 op
    def wrong(tape, p):
        x = p["x"]
        out = tape.record(x.value ** 2, [x], lambda g: (g * 3.0 * x.value,), "wrong_square")
        return ad.sum_squares(out)

    report = gradient_check(wrong, {"x": np.array([[0.7]])})
    assert not report.passed
    assert report.errors["x"] > 1e-4


def test_lstm_cell_loss_gradient():
    """hidden=3, input=2, sum(h) 에 대한 모든 파라미터 gradient"""
    rng = np.random.default_rng(3)
    layer = LstmLayerParams.initialized(2, 3, seed=5)
    params = {name: v + 0.3 * rng.standard_normal(v.shape) for name, v in layer.named().items()}
    params["x"] = rng.standard_normal((2, 1))
    params["h0"] = 0.5 * rng.standard_normal((3, 1))
    params["c0"] = rng.standard_normal((3, 1))

    def fn(tape, p):
        h, c = lstm_cell_on(p["x"], p["h0"], p["c0"], p)
        return tape.constant(np.ones((1, 3))) @ h

    report = gradient_check(fn, params, tolerance=1e-4)
    assert report.passed, report.errors


@pytest.mark.parametrize("T, hidden", [(1, [2]), (5, [4]), (8, [8]), (6, [4, 3])])
def test_unrolled_module_loss_gradient(T, hidden):
    """T step 전개한 모듈의 제곱 오차 합, 모든 파라미터"""
    rng = np.random.default_rng(T)
    module = build_module(2, hidden, [(2, False)], seed=T)
    params = {name: v + 0.3 * rng.standard_normal(v.shape) for name, v in module.parameters().items()}
    inputs = rng.standard_normal((T, 2))
    targets = rng.standard_normal((T, 2))

    def fn(tape, p):
        state, total = state_on(tape, module.zero_state()), None
        for t in range(T):
            y, state = module.forward_on(p, tape.constant(inputs[t]), state)
            err = ad.sum_squares(y - tape.constant(targets[t]))
            total = err if total is None else total + err
        return total

    report = gradient_check(fn, params, tolerance=1e-4)
    assert report.passed, report.errors
