"""Small convolutional regressor mapping spatio-temporal maps to bpm.

Pure-numpy implementation (forward, backprop, Adam) so gradients can be
verified against finite differences and training is bit-reproducible from a
seed. Architecture: four blocks of [3x3 same-padding conv, 2x2 stride-2
average pool, ReLU], global average pooling, and a single dense output.
The dense output is affinely rescaled (x60, +120) so the network's raw
output lives near unit scale while predictions cover the physiological
bpm range.

Checkpoints are a stable, versioned container: a magic line, one JSON
header describing architecture / parameter layout / training metadata, then
the raw little-endian float64 parameter bytes in header order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MAGIC = b"PULSEMAP-CNN v1\n"

DEFAULT_WIDTHS = (16, 32, 64, 64)
OUTPUT_SCALE = 60.0
OUTPUT_OFFSET = 120.0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_final: float = 1e-4          # linear decay target over the epochs
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0


class HeartRateCnn:
    """Conv net with explicit parameter dict; all math in float64."""

    def __init__(
        self,
        widths: tuple[int, ...] = DEFAULT_WIDTHS,
        in_channels: int = 3,
        seed: int = 0,
        input_shape: tuple[int, int] | None = None,
    ):
        self.widths = tuple(int(w) for w in widths)
        self.in_channels = int(in_channels)
        self.input_shape = input_shape
        self.output_scale = OUTPUT_SCALE
        self.output_offset = OUTPUT_OFFSET
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        c_in = self.in_channels
        for i, c_out in enumerate(self.widths):
            std = np.sqrt(2.0 / (9.0 * c_in))
            self.params[f"conv{i}_w"] = rng.standard_normal((c_in, 3, 3, c_out)) * std
            self.params[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        self.params["dense_w"] = rng.standard_normal((c_in, 1)) * np.sqrt(1.0 / c_in)
        self.params["dense_b"] = np.zeros(1)

    # -- layers ------------------------------------------------------------

    @staticmethod
    def _conv_forward(x, w, b):
        n, h, wd, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (n,h,w,c,3,3)
        cols = win.reshape(n, h, wd, c * 9)
        y = cols @ w.reshape(c * 9, -1) + b
        return y, cols

    @staticmethod
    def _conv_backward(dy, cols, w, x_shape):
        n, h, wd, c = x_shape
        c_out = dy.shape[-1]
        dw = cols.reshape(-1, c * 9).T @ dy.reshape(-1, c_out)
        db = dy.sum(axis=(0, 1, 2))
        dcols = (dy @ w.reshape(c * 9, c_out).T).reshape(n, h, wd, c, 3, 3)
        dxp = np.zeros((n, h + 2, wd + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, :, i, j]
        return dxp[:, 1:1 + h, 1:1 + wd, :], dw.reshape(w.shape), db

    @staticmethod
    def _pool_forward(x):
        n, h, w, c = x.shape
        ph = 2 if h >= 2 else 1
        pw = 2 if w >= 2 else 1
        hc, wc = (h // ph) * ph, (w // pw) * pw
        y = x[:, :hc, :wc].reshape(n, hc // ph, ph, wc // pw, pw, c).mean(axis=(2, 4))
        return y, (x.shape, ph, pw)

    @staticmethod
    def _pool_backward(dy, cache):
        (n, h, w, c), ph, pw = cache
        hc, wc = (h // ph) * ph, (w // pw) * pw
        dx = np.zeros((n, h, w, c))
        dx[:, :hc, :wc] = np.repeat(np.repeat(dy, ph, axis=1), pw, axis=2) / (ph * pw)
        return dx

    # -- model -------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ValueError(f"expected maps of shape (k, t, {self.in_channels})")
        if self.input_shape is not None and x.shape[1:3] != tuple(self.input_shape):
            raise ValueError(
                f"map shape {x.shape[1:3]} does not match model input "
                f"shape {tuple(self.input_shape)}"
            )
        return x

    def _forward(self, x: np.ndarray):
        caches = []
        h = x
        for i in range(len(self.widths)):
            w, b = self.params[f"conv{i}_w"], self.params[f"conv{i}_b"]
            conv, cols = self._conv_forward(h, w, b)
            pooled, pool_cache = self._pool_forward(conv)
            relu_mask = pooled > 0
            h_next = pooled * relu_mask
            caches.append((h.shape, cols, pool_cache, relu_mask))
            h = h_next
        spatial = h.shape[1] * h.shape[2]
        gap = h.mean(axis=(1, 2))
        z = gap @ self.params["dense_w"] + self.params["dense_b"]
        pred = z[:, 0] * self.output_scale + self.output_offset
        caches.append((h.shape, spatial, gap))
        return pred, caches

    def forward(self, x: np.ndarray) -> np.ndarray | float:
        """Predict bpm for one map (k, t, c) or a batch (n, k, t, c)."""
        arr = self._check_input(x)
        pred, _ = self._forward(arr)
        return float(pred[0]) if np.asarray(x).ndim == 3 else pred

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray):
        """Mean absolute error on a batch and its parameter gradients."""
        x = self._check_input(x)
        y = np.asarray(y, dtype=np.float64)
        pred, caches = self._forward(x)
        n = x.shape[0]
        loss = float(np.abs(pred - y).mean())
        dpred = np.sign(pred - y) / n

        grads: dict[str, np.ndarray] = {}
        h_shape, spatial, gap = caches[-1]
        dz = (dpred * self.output_scale)[:, None]
        grads["dense_w"] = gap.T @ dz
        grads["dense_b"] = dz.sum(axis=0)
        dgap = dz @ self.params["dense_w"].T
        dh = np.broadcast_to(
            dgap[:, None, None, :] / spatial, h_shape
        )
        for i in reversed(range(len(self.widths))):
            x_shape, cols, pool_cache, relu_mask = caches[i]
            dpool = dh * relu_mask
            dconv = self._pool_backward(dpool, pool_cache)
            dh, dw, db = self._conv_backward(
                dconv, cols, self.params[f"conv{i}_w"], x_shape
            )
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
        return loss, grads

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def param_names(self) -> list[str]:
        return sorted(self.params)


def cnn_forward(model: HeartRateCnn, stmap) -> float:
    """Predict bpm for one spatio-temporal map (object or raw array)."""
    values = getattr(stmap, "values", stmap)
    return float(model.forward(np.asarray(values)))


def cnn_train(
    dataset: list[tuple[np.ndarray, float]],
    config: TrainConfig | None = None,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
) -> tuple[HeartRateCnn, list[float]]:
    """Train by mini-batch gradient descent (Adam) on L1 loss.

    Returns the model and the per-epoch training loss evaluated on the full
    set after each epoch. Fully deterministic given config.seed.
    """
    if config is None:
        config = TrainConfig()
    if not dataset:
        raise ValueError("empty training dataset")
    maps = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m, _ in dataset]
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent map shapes in dataset: {sorted(shapes)}")
    x = np.stack(maps)
    y = np.asarray([float(b) for _, b in dataset])

    model = HeartRateCnn(
        widths=widths,
        in_channels=x.shape[-1],
        seed=config.seed,
        input_shape=x.shape[1:3],
    )
    rng = np.random.default_rng(config.seed + 1)
    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(dataset)
    full_batch = n <= config.batch_size
    loss_log: list[float] = []
    prev_loss = _full_loss(model, x, y)
    for epoch in range(config.epochs):
        frac = epoch / max(1, config.epochs - 1)
        lr = config.lr + (config.lr_final - config.lr) * frac
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads = model.loss_and_grad(x[batch], y[batch])
            step += 1
            direction = {}
            for name, g in grads.items():
                adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
                m_hat = adam_m[name] / (1 - beta1**step)
                v_hat = adam_v[name] / (1 - beta2**step)
                direction[name] = m_hat / (np.sqrt(v_hat) + eps)
            if not full_batch:
                for name, d in direction.items():
                    model.params[name] -= lr * d
                continue
            # Full-batch mode: backtrack so the loss never increases, which
            # keeps L1's sign-gradient from oscillating around the optimum.
            saved = {name: p.copy() for name, p in model.params.items()}
            trial_lr = lr
            for _ in range(8):
                for name, d in direction.items():
                    model.params[name] = saved[name] - trial_lr * d
                new_loss = _full_loss(model, x, y)
                if new_loss <= prev_loss:
                    prev_loss = new_loss
                    break
                trial_lr *= 0.5
            else:
                model.params = saved
        loss_log.append(_full_loss(model, x, y) if not full_batch else prev_loss)
    return model, loss_log


def _full_loss(model: HeartRateCnn, x: np.ndarray, y: np.ndarray) -> float:
    preds = np.concatenate(
        [model.forward(x[i:i + 64]) for i in range(0, len(x), 64)]
    )
    return float(np.abs(preds - y).mean())


def save_checkpoint(
    model: HeartRateCnn, path: str | Path, training_meta: dict | None = None
) -> None:
    """Write the versioned checkpoint container (see module docstring)."""
    names = model.param_names()
    header = {
        "widths": list(model.widths),
        "in_channels": model.in_channels,
        "input_shape": list(model.input_shape) if model.input_shape else None,
        "output_scale": model.output_scale,
        "output_offset": model.output_offset,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "training": training_meta or {},
    }
    blob = bytearray(_MAGIC)
    blob += json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    for n in names:
        blob += np.ascontiguousarray(model.params[n], dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> HeartRateCnn:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a pulsemap CNN checkpoint")
    header_end = data.index(b"\n", len(_MAGIC))
    header = json.loads(data[len(_MAGIC):header_end].decode("utf-8"))
    model = HeartRateCnn(
        widths=tuple(header["widths"]),
        in_channels=header["in_channels"],
        input_shape=tuple(header["input_shape"]) if header["input_shape"] else None,
    )
    offset = header_end + 1
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(data[offset:offset + size], dtype="<f8").reshape(shape)
        model.params[spec["name"]] = arr.astype(np.float64)
        offset += size
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return model
