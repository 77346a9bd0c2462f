import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import max_relative_error
from photoest.errors import DivergenceError, DomainError, FormatError
from photoest.nnest import (
    HistogramSpec,
    TrainConfig,
    add_target_noise,
    bin_indices,
    build_model,
    feature_matrix,
    forward,
    histogram_features,
    load_model,
    msle_loss,
    predict,
    save_model,
    train,
)
from photoest.trajsim import DelayRecord, generate_dataset


def test_parameter_counts():
    assert build_model("1d").n_params() == 76_711
    assert build_model("2d").n_params() == 77_532


def test_layer_shapes():
    assert build_model("1d").shapes() == [(700, 100), (100, 50), (50, 30), (30, 1)]
    assert build_model("2d").shapes()[-2:] == [(20, 10), (10, 2)]


def test_bin_edges():
    spec = HistogramSpec()
    d = np.array([0.0, 1 / 7 - 1e-12, 1 / 7, 99.99, 100.0, 100.01])
    assert bin_indices(d, spec).tolist() == [0, 0, 1, 699, 699, -1]


@given(st.lists(st.floats(0, 100), min_size=1, max_size=60))
@settings(max_examples=50, deadline=None)
def test_histogram_is_order_invariant_and_counts(delays):
    d = np.array(delays)
    h = histogram_features(d)
    assert h.sum() == len(d)
    assert np.array_equal(h, histogram_features(d[::-1]))


def test_sparse_features_match_dense():
    d = np.random.default_rng(0).exponential(3.0, size=(5, 48))
    dense = np.stack([histogram_features(r) for r in d])
    assert np.array_equal(feature_matrix(d, HistogramSpec()).toarray(), dense)


def test_msle_floor():
    assert msle_loss([-5.0], [0.0]) == 0.0
    assert msle_loss([np.e - 1], [0.0]) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        msle_loss([1.0], [-1.0])


def test_gradients_match_finite_differences():
    model = build_model("2d", seed=3).astype(np.float64)
    ds = generate_dataset({"delta": (0, 3), "omega": (0.25, 5)}, {}, 64, seed=1)
    x = feature_matrix(ds.delays(), model.hist, np.float64)
    # nudge the output layer so most predictions sit above the MSLE floor
    model.layers[-1].biases[:] = 1.0
    assert max_relative_error(model, x, ds.truths(), n_coords=20, seed=5) < 1e-5


def test_outputs_are_clamped():
    model = build_model("1d", seed=0)
    model.layers[-1].biases[:] = 50.0
    rec = DelayRecord(np.full(48, 2.0))
    assert forward(model, rec).values[0] == 5.0
    model.layers[-1].biases[:] = -50.0
    assert forward(model, rec).values[0] == 0.0


def test_record_length_checked():
    with pytest.raises(DomainError):
        predict(build_model("1d"), np.ones((2, 47)))


def test_target_noise_clamped_to_support():
    rng = np.random.default_rng(0)
    y = add_target_noise(np.full((1000, 1), 0.1), 0.5, rng, ((0.0, 5.0),))
    assert y.min() >= 0.0 and y.std() > 0.2


def test_training_reduces_loss_and_is_deterministic():
    ds = generate_dataset(count=2000, seed=2)
    cfg = TrainConfig(epochs=4, batch_size=200, seed=1)
    m1, h1 = train(ds, cfg)
    m2, h2 = train(ds, cfg)
    assert h1.train_msle[-1] < h1.train_msle[0]
    for a, b in zip(m1.layers, m2.layers):
        assert a.weights.tobytes() == b.weights.tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_guards():
    ds = generate_dataset(count=100, seed=2)
    with pytest.raises(DomainError):
        train(ds, TrainConfig(epochs=1, batch_size=1000))
    with pytest.raises(DomainError):
        # delta up to 5 lies outside the 2D support box
        train(ds, TrainConfig(epochs=1, batch_size=10), arch="2d")
    with pytest.raises(DivergenceError):
        train(ds, TrainConfig(epochs=3, batch_size=10, learning_rate=1e30))


def test_save_load_roundtrip(tmp_path):
    model = build_model("2d", seed=4)
    path = tmp_path / "m.hdnn"
    save_model(model, path)
    back = load_model(path)
    d = np.random.default_rng(1).exponential(2.0, size=(3, 48))
    assert np.array_equal(predict(back, d), predict(model, d))
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad")
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad")
