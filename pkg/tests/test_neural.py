import numpy as np
import pytest

from binaural_masking import neural
from binaural_masking.neural import (
    MlpModel,
    ModelFormatError,
    TrainConfig,
    backward,
    forward,
    init_model,
    load_model,
    loss,
    save_model,
    train,
)

DIMS = (6, 8, 5, 4)


def oracle_loss(out, tgt, phi, normalize):
    """Scalar-loop weighted MSE, both normalization conventions."""
    num = 0.0
    wsum = 0.0
    count = 0
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            num += phi[i, j] * (out[i, j] - tgt[i, j]) ** 2
            wsum += phi[i, j]
            count += 1
    if normalize == "sum_weights_only":
        return num / wsum
    return num / wsum / count


def test_loss_matches_oracle(rng):
    for norm in ("as_printed", "sum_weights_only"):
        for _ in range(50):
            n, k = int(rng.integers(1, 9)), int(rng.integers(1, 7))
            out = rng.random((n, k))
            tgt = rng.random((n, k))
            phi = rng.random((n, k)) + 0.01
            assert loss(out, tgt, phi, norm) == pytest.approx(
                oracle_loss(out, tgt, phi, norm), abs=1e-12
            )


def test_forward_shapes_and_range(rng):
    model = init_model(0, DIMS)
    x = rng.standard_normal((11, 6))
    y = forward(model, x)
    assert y.shape == (11, 4)
    assert np.all((y > 0) & (y < 1))
    single = forward(model, x[0])
    assert single.shape == (4,)
    assert np.allclose(single, y[0])


def test_forward_rejects_nonfinite(rng):
    model = init_model(0, DIMS)
    x = np.full((2, 6), np.nan)
    with pytest.raises((ValueError, neural.TrainingDivergence)):
        forward(model, x)


def test_dropout_inverted_scaling(rng):
    model = init_model(0, (6, 400, 4), dropout_rate=0.25)
    x = rng.standard_normal(6)
    ref = forward(model, x)
    outs = [
        forward(model, x, mode="train", rng=np.random.default_rng(s))
        for s in range(300)
    ]
    # inverted dropout keeps the pre-sigmoid expectation, so the averaged
    # train-mode output should land near the deterministic one
    assert np.allclose(np.mean(outs, axis=0), ref, atol=0.05)


def gradient_error(model, x, t, phi, normalize, h=1e-5):
    out, cache = forward(model, x, return_cache=True)
    grads_w, grads_b = backward(model, cache, t, phi, normalize)
    worst = 0.0
    rng = np.random.default_rng(0)
    for li in range(len(model.weights)):
        for g, arr in ((grads_w[li], model.weights[li]), (grads_b[li], model.biases[li])):
            flat = arr.reshape(-1)
            for idx in rng.choice(flat.size, size=min(25, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss(forward(model, x), t, phi, normalize)
                flat[idx] = orig - h
                lm = loss(forward(model, x), t, phi, normalize)
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                an = g.reshape(-1)[idx]
                denom = max(abs(fd), abs(an), 1e-8)
                worst = max(worst, abs(fd - an) / denom)
    return worst


def test_gradient_check_small_net(rng):
    model = init_model(3, DIMS, dropout_rate=0.0)
    x = rng.standard_normal((7, 6))
    t = rng.random((7, 4))
    phi = rng.random((7, 4)) + 0.1
    for norm in ("as_printed", "sum_weights_only"):
        assert gradient_error(model, x, t, phi, norm) < 1e-4


def test_train_reduces_validation_loss(rng):
    # learnable mapping: targets are a fixed random projection of inputs
    W = rng.standard_normal((6, 4))
    X = rng.standard_normal((600, 6))
    T = 1.0 / (1.0 + np.exp(-(X @ W)))
    model = init_model(1, (6, 32, 4), dropout_rate=0.0)
    cfg = TrainConfig(lr=0.5, epochs=40, batch_size=64, patience=40, seed=1,
                      normalize="sum_weights_only")
    best, history = train(model, X, T, config=cfg)
    assert history["best_val_loss"] < 0.5 * history["initial_val_loss"]


def test_model_save_load_roundtrip(tmp_path):
    model = init_model(2, DIMS, dropout_rate=0.1)
    path = tmp_path / "m.npz"
    save_model(model, path, "h")
    back = load_model(path, expect_hash="h")
    assert back.dims == model.dims
    for a, b in zip(model.weights, back.weights):
        assert np.allclose(a, b, atol=1e-6)  # float32 storage


def test_model_load_errors(tmp_path):
    model = init_model(2, DIMS)
    path = tmp_path / "m.npz"
    save_model(model, path)
    with open(path, "r+b") as f:
        f.truncate(100)
    with pytest.raises(ModelFormatError):
        load_model(path)
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "missing.npz")


def test_default_dims():
    assert neural.DEFAULT_DIMS == (90, 500, 500, 500, 500, 129)


def test_fold_standardization_equivalence(rng):
    model = init_model(4, DIMS, dropout_rate=0.0)
    mean = rng.standard_normal(6)
    std = rng.random(6) + 0.5
    folded = neural.fold_standardization(model, mean, std)
    x = rng.standard_normal((5, 6))
    a = forward(model, (x - mean) / std)
    b = forward(folded, x)
    assert np.allclose(a, b, atol=1e-12)
