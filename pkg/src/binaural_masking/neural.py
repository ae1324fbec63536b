"""From-scratch feed-forward mask estimator.

Architecture: 90 -> 500 x 4 (ReLU, inverted dropout 20% in training) ->
129 sigmoid outputs.  Trained with mini-batch momentum gradient descent on
a weighted mean-square error; the per-cell weights are supplied alongside
the targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DIMS = (90, 500, 500, 500, 500, 129)
MODEL_VERSION = "mlp-v1"


class TrainingDivergence(Exception):
    """Loss went non-finite during training."""


class ModelFormatError(Exception):
    """Unreadable or incompatible model file."""


@dataclass
class MlpModel:
    weights: list  # per layer, (fan_in, fan_out)
    biases: list  # per layer, (fan_out,)
    dropout_rate: float = 0.2

    @property
    def dims(self) -> tuple:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_rate,
        )


def init_model(
    seed: int, dims: tuple = DEFAULT_DIMS, dropout_rate: float = 0.2
) -> MlpModel:
    """He-scaled hidden layers, Xavier output, zero biases; seeded."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    n = len(dims) - 1
    for i in range(n):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i < n - 1:
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(1.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, dropout_rate)


def fold_standardization(
    model: MlpModel, mean: np.ndarray, std: np.ndarray
) -> MlpModel:
    """Absorb an input z-scoring into the first layer.

    A model trained on (x - mean) / std becomes one that accepts raw
    features, so nothing beyond the weights needs to be stored.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (model.dims[0],) or std.shape != (model.dims[0],):
        raise ValueError("mean/std must match the input dimension")
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    out = model.copy()
    out.weights[0] = model.weights[0] / std[:, None]
    out.biases[0] = model.biases[0] - (mean / std) @ model.weights[0]
    return out


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(
    model: MlpModel,
    x: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Forward pass; x is (batch, in) or (in,).  Output in (0, 1).

    ``mode='train'`` applies inverted dropout after each hidden activation
    and needs an rng; inference is deterministic.
    """
    single = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite network input")
    if a.shape[1] != model.dims[0]:
        raise ValueError(f"expected {model.dims[0]} input features, got {a.shape[1]}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")

    cache = {"a": [a], "z": [], "drop": []}
    n = model.n_layers
    for i in range(n):
        z = a @ model.weights[i] + model.biases[i]
        cache["z"].append(z)
        if i < n - 1:
            a = np.maximum(z, 0.0)
            if mode == "train" and model.dropout_rate > 0.0:
                keep = 1.0 - model.dropout_rate
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                cache["drop"].append(mask)
            else:
                cache["drop"].append(None)
        else:
            a = _sigmoid(z)
        cache["a"].append(a)
    out = a[0] if single else a
    return (out, cache) if return_cache else out


def loss(
    outputs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    normalize: str = "as_printed",
) -> float:
    """Weighted mean-square error over all (sample, cell) pairs.

    'as_printed' keeps both the 1/count prefactor and the weight-sum
    division; 'sum_weights_only' drops the prefactor.
    """
    c = np.asarray(outputs, dtype=np.float64).ravel()
    z = np.asarray(targets, dtype=np.float64).ravel()
    if c.shape != z.shape:
        raise ValueError("outputs/targets length mismatch")
    if weights is None:
        phi = np.ones_like(c)
    else:
        phi = np.asarray(weights, dtype=np.float64).ravel()
        if phi.shape != c.shape:
            raise ValueError("weights length mismatch")
    phi_sum = float(np.sum(phi))
    if phi_sum <= 0.0:
        raise ValueError("weights must have a positive sum")
    j = float(np.sum(phi * (c - z) ** 2)) / phi_sum
    if normalize == "as_printed":
        return j / c.size
    if normalize == "sum_weights_only":
        return j
    raise ValueError(f"unknown normalization {normalize!r}")


def backward(
    model: MlpModel,
    cache: dict,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    normalize: str = "as_printed",
):
    """Gradients of the weighted-MSE loss wrt every weight and bias."""
    out = cache["a"][-1]
    z = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if weights is None:
        phi = np.ones_like(out)
    else:
        phi = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    phi_sum = float(np.sum(phi))
    scale = 2.0 / phi_sum
    if normalize == "as_printed":
        scale /= out.size

    # dJ/d_out, then through the sigmoid.
    delta = scale * phi * (out - z) * out * (1.0 - out)
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        a_prev = cache["a"][i]
        grads_w[i] = a_prev.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if cache["drop"][i - 1] is not None:
                delta = delta * cache["drop"][i - 1]
            delta = delta * (cache["z"][i - 1] > 0.0)
    return grads_w, grads_b


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    val_split: float = 0.3
    patience: int = 10
    seed: int = 0
    normalize: str = "as_printed"


def train(
    model: MlpModel,
    features: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    config: TrainConfig = TrainConfig(),
    val_indices: np.ndarray | None = None,
):
    """Mini-batch momentum SGD with early stopping on validation loss.

    Returns (best_model, history) where history holds per-epoch train and
    validation losses.  ``val_indices`` overrides the random split (used
    for utterance-level splitting upstream).
    """
    X = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if weights is None:
        Phi = np.ones_like(T)
    else:
        Phi = np.asarray(weights, dtype=np.float64)
    n = len(X)
    if n < config.batch_size:
        raise ValueError("fewer samples than one batch")
    rng = np.random.default_rng(config.seed)

    if val_indices is None:
        perm = rng.permutation(n)
        n_val = max(1, int(round(config.val_split * n)))
        val_idx = perm[:n_val]
        tr_idx = perm[n_val:]
    else:
        val_idx = np.asarray(val_indices)
        tr_idx = np.setdiff1d(np.arange(n), val_idx)

    def val_loss(mdl):
        out = forward(mdl, X[val_idx], mode="infer")
        return loss(out, T[val_idx], Phi[val_idx], config.normalize)

    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    best = model.copy()
    best_val = val_loss(model)
    history = {"train_loss": [], "val_loss": [], "initial_val_loss": best_val}
    since_best = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(tr_idx))
        epoch_losses = []
        for start in range(0, len(order) - config.batch_size + 1, config.batch_size):
            idx = tr_idx[order[start : start + config.batch_size]]
            out, cache = forward(
                model, X[idx], mode="train", rng=rng, return_cache=True
            )
            batch_loss = loss(out, T[idx], Phi[idx], config.normalize)
            if not np.isfinite(batch_loss):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}, batch start {start}"
                )
            epoch_losses.append(batch_loss)
            gw, gb = backward(model, cache, T[idx], Phi[idx], config.normalize)
            for i in range(model.n_layers):
                vel_w[i] = config.momentum * vel_w[i] - config.lr * gw[i]
                vel_b[i] = config.momentum * vel_b[i] - config.lr * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
        v = val_loss(model)
        history["train_loss"].append(float(np.mean(epoch_losses)))
        history["val_loss"].append(v)
        if v < best_val:
            best_val = v
            best = model.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
    history["best_val_loss"] = best_val
    return best, history


def save_model(model: MlpModel, path, config_hash: str = "") -> None:
    arrays = {
        "version": MODEL_VERSION,
        "dims": np.array(model.dims),
        "dropout_rate": model.dropout_rate,
        "config_hash": config_hash,
        "n_layers": model.n_layers,
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w.astype(np.float32)
        arrays[f"b{i}"] = b.astype(np.float32)
    np.savez(path, **arrays)


def load_model(path, expect_hash: str | None = None) -> MlpModel:
    try:
        f = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ModelFormatError(f"{path}: unreadable model file ({exc})") from exc
    with f:
        try:
            if str(f["version"]) != MODEL_VERSION:
                raise ModelFormatError(f"{path}: unsupported version {f['version']}")
            if expect_hash is not None and str(f["config_hash"]) != expect_hash:
                raise ModelFormatError(f"{path}: config hash mismatch")
            dims = tuple(int(d) for d in f["dims"])
            n_layers = int(f["n_layers"])
            weights = [np.asarray(f[f"w{i}"], dtype=np.float64) for i in range(n_layers)]
            biases = [np.asarray(f[f"b{i}"], dtype=np.float64) for i in range(n_layers)]
            dropout = float(f["dropout_rate"])
        except KeyError as exc:
            raise ModelFormatError(f"{path}: missing field {exc}") from exc
    model = MlpModel(weights, biases, dropout)
    if model.dims != dims:
        raise ModelFormatError(f"{path}: dimension chain mismatch")
    return model
