import numpy as np
import pytest

from src.core.autodiff import Tape, bind, collect_grads
from src.core.errors import ShapeError, StepError
from src.core.gradcheck import gradient_check
from src.core.kalman import kf_predict, kf_update
from src.core.lstm import preset_small
from src.core.lstm_kf import (
    NOISE_LOG_OFFSET, FilterTrace, LstmKf, LstmKfParams, filter_sequence, initial_state, loss, predict, update,
)
from src.core.models import GaussianBelief, LinearKfModel
from src.infra.data import gen_oscillator
from src.utils.calculator import ErrorCalculator


def _shaken(model: LstmKf, seed: int, scale: float = 0.4) -> LstmKf:
    """초기값 근처에서 파라미터를 흔든 모델 (gradient / Jacobian 이 0 근처가 아니도록)"""
    rng = np.random.default_rng(seed)
    model.load_parameters({k: v + scale * rng.standard_normal(v.shape) for k, v in model.parameters().items()})
    return model


# ==========================================
# 1. 구성 / 초기 상태
# ==========================================

def test_params_reject_dimension_mismatch():
    with pytest.raises(ShapeError):
        LstmKfParams(preset_small(2, seed=0, hidden=3), preset_small(3, seed=1, hidden=3), preset_small(2, seed=2, hidden=3))


def test_parameter_names_are_prefixed(create_lstm_kf):
    names = create_lstm_kf().parameters()
    assert {name.split(".")[0] for name in names} == {"f", "q", "r"}
    assert "f.lstm0.W_fh" in names and "r.fc0.bias" in names


def test_initial_state(create_lstm_kf):
    model = create_lstm_kf(dim=3)
    z1 = np.array([0.3, -1.2, 4.0])
    state = initial_state(z1, model.params)
    assert np.array_equal(state.belief.mean.ravel(), z1)
    assert np.array_equal(state.belief.cov, np.eye(3))
    for rec in (state.f_state, state.q_state, state.r_state):
        for layer in rec.layers:
            assert not layer.h.any() and not layer.c.any()
    with pytest.raises(ShapeError):
        initial_state([1.0, 2.0], model.params)


def test_from_preset_deterministic_and_validated(create_lstm_kf):
    a, b = create_lstm_kf(seed=5), create_lstm_kf(seed=5)
    for name, value in a.parameters().items():
        assert np.array_equal(value, b.parameters()[name])
    with pytest.raises(ValueError):
        LstmKf.from_preset("huge", 2)
    with pytest.raises(ValueError):
        create_lstm_kf(lam=-0.1)


def test_fresh_model_starts_close_to_measurements():
    """q/r head bias 가 ±offset 이므로 학습 전 gain 은 σ(2·offset) 근처"""
    model = LstmKf.from_preset("small", 2, seed=3)
    assert np.array_equal(model.params.q_module.linear_layers[-1].bias, np.full((2, 1), NOISE_LOG_OFFSET))
    assert np.array_equal(model.params.r_module.linear_layers[-1].bias, np.full((2, 1), -NOISE_LOG_OFFSET))

    z = np.random.default_rng(3).standard_normal((20, 2))
    assert model.trace(z).mean_gain() > 0.8
    neutral = LstmKf.from_preset("small", 2, seed=3, noise_offset=0.0)
    assert 0.4 < neutral.trace(z).mean_gain() < 0.65


def test_untrained_model_does_not_degrade_measurements():
    data = gen_oscillator(2, 60, 4, amplitude=1.0, frequency=0.2, r=0.05, seed=5, dt=0.1)
    truths = [s.truth for s in data.sequences]
    calc = ErrorCalculator()

    def error(model):
        return calc.mean_error(truths, [model.run(s.measurements) for s in data.sequences])

    raw = calc.mean_error(truths, [s.measurements for s in data.sequences])
    fresh = error(LstmKf.from_preset("small", 2, seed=5))
    assert fresh < 1.05 * raw
    assert fresh < error(LstmKf.from_preset("small", 2, seed=5, noise_offset=0.0))


# ==========================================
# 2. predict / update
# ==========================================

def test_constant_f_gives_zero_jacobian(zero_f_params):
    params = zero_f_params(dim=2)
    trace = filter_sequence(np.array([[0.5, -0.5], [1.0, 2.0]]), params)
    for F in trace.F:
        assert np.array_equal(F, np.zeros((2, 2)))
    y_pred, P_pred, Q, _ = predict(initial_state([0.5, -0.5], params), params)
    assert np.array_equal(y_pred, np.zeros((2, 1)))
    assert np.array_equal(Q, np.eye(2))
    assert np.array_equal(P_pred, Q)


def test_jacobian_matches_finite_differences(create_lstm_kf):
    model = _shaken(create_lstm_kf(dim=3, hidden=4, seed=2), seed=2, scale=0.5)
    y0 = np.array([0.4, -0.7, 1.1])
    F = filter_sequence(y0[None, :], model.params).F[0]

    f_module, h = model.params.f_module, 1e-6
    numeric = np.zeros((3, 3))
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        plus, _ = f_module.forward(y0 + step, f_module.zero_state())
        minus, _ = f_module.forward(y0 - step, f_module.zero_state())
        numeric[:, j] = ((plus - minus) / (2 * h)).ravel()
    assert np.max(np.abs(F)) > 1e-3
    assert np.max(np.abs(F - numeric)) < 1e-5


def test_predict_advances_recurrent_state(create_lstm_kf):
    model = create_lstm_kf()
    state = initial_state([1.0, 1.0], model.params)
    y_pred, P_pred, _, next_state = predict(state, model.params)
    assert np.array_equal(next_state.belief.mean, y_pred)
    assert np.array_equal(next_state.belief.cov, P_pred)
    assert next_state.f_state.layers[0].h.any()
    assert next_state.r_state is state.r_state


def test_update_trusts_measurement_when_prediction_uncertain(zero_f_params):
    """R 은 log 출력 clamp 하한 (exp(-10)) 까지 내리고, P' 을 크게"""
    params = zero_f_params(dim=2)
    params.r_module.linear_layers[-1].bias = np.full((2, 1), -50.0)
    z = np.array([[1.5], [-0.5]])
    y_hat, _, K, R, _ = update(np.zeros((2, 1)), 100.0 * np.eye(2), z, params.r_module.zero_state(), params)
    assert np.allclose(np.diag(R), np.exp(-10.0))
    assert np.max(np.abs(y_hat - z)) < 1e-6


def test_update_zero_prior_covariance_ignores_measurement(zero_f_params):
    params = zero_f_params(dim=2)
    y_pred = np.array([[0.2], [0.3]])
    y_hat, P, K, _, _ = update(y_pred, np.zeros((2, 2)), [5.0, 5.0], params.r_module.zero_state(), params)
    assert np.array_equal(K, np.zeros((2, 2)))
    assert np.array_equal(y_hat, y_pred)


def test_update_equal_variances_midpoint(zero_f_params):
    params = zero_f_params(dim=1)
    y_hat, P, K, R, _ = update([[0.0]], [[1.0]], [[2.0]], params.r_module.zero_state(), params)
    assert R[0, 0] == 1.0
    assert K[0, 0] == pytest.approx(0.5)
    assert y_hat[0, 0] == pytest.approx(1.0)
    assert P[0, 0] == pytest.approx(0.5)


def test_update_shape_mismatch(zero_f_params):
    params = zero_f_params(dim=2)
    with pytest.raises(ShapeError):
        update(np.zeros((2, 1)), np.eye(2), [1.0, 2.0, 3.0], params.r_module.zero_state(), params)


# ==========================================
# 3. filter_sequence
# ==========================================

def test_trace_lengths_and_determinism(create_lstm_kf):
    model = create_lstm_kf()
    z = np.random.default_rng(0).standard_normal((9, 2))
    first, second = filter_sequence(z, model.params), filter_sequence(z, model.params)
    for field in ("y_hat", "y_pred", "K", "Q", "R", "P", "P_pred", "F"):
        assert len(getattr(first, field)) == 9
    assert np.array_equal(first.estimates(), second.estimates())
    assert first.estimates().shape == (9, 2)
    assert len(filter_sequence(np.zeros((0, 2)), model.params)) == 0


def test_equivalent_to_classic_kf_with_matched_noise(zero_f_params):
    """f ≡ 0, Q ≡ I 이면 A = 0, Q = I, R = R_t 인 고전 KF 와 같은 결과"""
    params = zero_f_params(dim=2, zero_r=False, seed=4)
    z = np.random.default_rng(4).standard_normal((200, 2))
    trace = filter_sequence(z, params)

    belief = GaussianBelief(z[0], np.eye(2))
    for t in range(200):
        step = LinearKfModel(A=np.zeros((2, 2)), H=np.eye(2), Q=np.eye(2), R=trace.R[t])
        belief = kf_update(kf_predict(belief, step), z[t], step)
        assert np.max(np.abs(belief.mean - trace.y_hat[t])) < 1e-10
        assert np.max(np.abs(belief.cov - trace.P[t])) < 1e-10
    assert len({float(np.trace(r)) for r in trace.R}) > 1


def test_filter_wraps_failures_with_time_index(create_lstm_kf):
    model = create_lstm_kf()
    with pytest.raises(StepError) as exc:
        filter_sequence(np.ones((3, 2)), model.params, jacobians=[np.zeros((3, 3))] * 3)
    assert exc.value.time_index == 0
    with pytest.raises(ShapeError):
        filter_sequence(np.ones((3, 4)), model.params)


def test_trace_invariants_over_seeds(create_lstm_kf):
    """대칭 / PSD 공분산, 양수 Q R 대각, K 대각 (0, 1)"""
    for seed in range(100):
        model = _shaken(create_lstm_kf(hidden=3, seed=seed), seed=seed, scale=0.3)
        z = 2.0 * np.random.default_rng(seed).standard_normal((6, 2))
        trace = filter_sequence(z, model.params)
        for t in range(len(trace)):
            for cov in (trace.P[t], trace.P_pred[t]):
                assert np.array_equal(cov, cov.T)
                assert np.min(np.linalg.eigvalsh(cov)) > -1e-10 * max(1.0, np.max(np.abs(cov)))
            assert np.all(np.diag(trace.Q[t]) > 0) and np.all(np.diag(trace.R[t]) > 0)
            assert np.all((np.diag(trace.K[t]) > 0) & (np.diag(trace.K[t]) < 1))


def test_diagonal_update_interpolates(zero_f_params):
    """P' 과 R 이 대각이면 y_hat 은 성분마다 y' 과 z 사이"""
    for seed in range(100):
        params = zero_f_params(dim=2, zero_r=False, seed=seed)
        z = 3.0 * np.random.default_rng(seed).standard_normal((5, 2))
        trace = filter_sequence(z, params)
        for t in range(len(trace)):
            low = np.minimum(trace.y_pred[t], z[t][:, None]) - 1e-12
            high = np.maximum(trace.y_pred[t], z[t][:, None]) + 1e-12
            assert np.all((trace.y_hat[t] >= low) & (trace.y_hat[t] <= high))


# ==========================================
# 4. loss / gradient
# ==========================================

def test_loss_examples():
    trace = FilterTrace(y_hat=[np.zeros((2, 1))], y_pred=[np.ones((2, 1))])
    assert loss(np.array([[1.0, 0.0]]), trace, lam=0.8) == pytest.approx(1.8)
    assert loss(np.array([[1.0, 0.0]]), trace, lam=0.0) == pytest.approx(1.0)
    perfect = FilterTrace(y_hat=[np.ones((2, 1))], y_pred=[np.ones((2, 1))])
    assert loss(np.array([[1.0, 1.0]]), perfect) == 0.0


def test_loss_validation():
    trace = FilterTrace(y_hat=[np.zeros((2, 1))], y_pred=[np.zeros((2, 1))])
    with pytest.raises(ShapeError):
        loss(np.zeros((2, 2)), trace)
    with pytest.raises(ValueError):
        loss(np.zeros((1, 2)), trace, lam=-1.0)


def test_segment_loss_matches_numpy_loss(create_lstm_kf):
    model = _shaken(create_lstm_kf(), seed=1)
    z = np.random.default_rng(1).standard_normal((6, 2))
    y = z + 0.1
    tape = Tape()
    result = model.segment_loss(tape, bind(tape, model.parameters()), y, z, model.initial_carry(z[0]),
                                training=False, rng=None)
    trace = model.trace(z)
    assert result.loss.value[0, 0] == pytest.approx(loss(y, trace, model.lam), rel=1e-12)
    assert result.gains == pytest.approx(trace.gains(), rel=1e-12)


def test_segments_carry_values_forward(create_lstm_kf):
    model = _shaken(create_lstm_kf(), seed=6)
    z = np.random.default_rng(6).standard_normal((8, 2))
    carry = model.initial_carry(z[0])
    pieces = []
    for seg in (slice(0, 3), slice(3, 8)):
        tape = Tape()
        _, corrs, carry = model.segment_steps(tape, bind(tape, model.parameters()), z[seg], carry)
        pieces.extend(c.y_hat.value.ravel() for c in corrs)
    assert np.allclose(np.stack(pieces), model.run(z), atol=1e-12)
    assert carry.time_index == 8


@pytest.mark.parametrize("measurement, truth, r_direction", [
    (4.0, 0.0, 1.0),    # 측정값이 크게 틀림 -> R 을 올리는 방향
    (1.0, 1.0, -1.0),   # 측정값이 정확 -> R 을 내리는 방향
])
def test_loss_gradient_moves_noise_heads_with_measurement_quality(measurement, truth, r_direction):
    model = LstmKf.from_preset("small", 2, seed=2, hidden=4)
    z = np.full((6, 2), measurement)
    y = np.full((6, 2), truth)
    tape = Tape()
    bound = bind(tape, model.parameters())
    result = model.segment_loss(tape, bound, y, z, model.initial_carry(np.zeros(2)), training=False, rng=None)
    grads = collect_grads(tape.backward(result.loss), bound)

    # gradient descent 는 -grad 방향으로 움직인다
    assert np.all(-r_direction * grads["r.fc0.bias"] > 0.0)
    assert np.all(r_direction * grads["q.fc0.bias"] > 0.0)


def test_full_loss_gradient_with_detached_jacobian(create_lstm_kf):
    """d=2, T=5, hidden=4, 세 모듈 전체 파라미터. F 는 상수로 주입"""
    model = _shaken(create_lstm_kf(dim=2, hidden=4, seed=3), seed=3, scale=0.3)
    rng = np.random.default_rng(3)
    z = rng.standard_normal((5, 2))
    y = z + 0.3 * rng.standard_normal((5, 2))
    jacobians = filter_sequence(z, model.params).F
    carry = model.initial_carry(z[0])

    def fn(tape, bound):
        return model.segment_loss(tape, bound, y, z, carry, training=False, rng=None, jacobians=jacobians).loss

    report = gradient_check(fn, model.parameters(), tolerance=1e-4)
    assert report.passed, max(report.errors.items(), key=lambda kv: kv[1])
