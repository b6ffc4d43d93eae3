"""Many-to-one stacked LSTM classifier trained by BPTT, numpy only.

A fixed-length sequence runs through ``num_layers`` LSTM layers with
inverted dropout between layers (train mode only); the last timestep's top
hidden state feeds a dense layer and softmax. Gates are packed row-wise as
[input, forget, candidate, output] in each layer's weight matrices. Training
is mini-batch gradient descent (Adam by default, plain SGD selectable) on
cross-entropy, deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LSTM_FORMAT = "bloomcast-lstm/1"
PROB_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """Training or a forward pass produced non-finite values."""


@dataclass(frozen=True)
class LstmHyper:
    input_size: int
    n_classes: int
    num_layers: int = 2
    hidden_size: int = 30
    dropout: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.input_size < 1 or self.hidden_size < 1:
            raise ValueError("input_size and hidden_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam|sgd, got {self.optimizer!r}")


@dataclass
class LayerParams:
    wx: np.ndarray  # (4H, in_dim)
    wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)


@dataclass
class LstmParams:
    layers: list[LayerParams]
    w_out: np.ndarray  # (n_classes, H)
    b_out: np.ndarray  # (n_classes,)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.wx, layer.wh, layer.b])
        out.extend([self.w_out, self.b_out])
        return out

    def copy(self) -> "LstmParams":
        return LstmParams(
            layers=[
                LayerParams(l.wx.copy(), l.wh.copy(), l.b.copy()) for l in self.layers
            ],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )


def init_params(hyper: LstmHyper, rng: np.random.Generator | None = None) -> LstmParams:
    """Uniform +-1/sqrt(H) weights, forget-gate bias +1, other biases 0."""
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    h = hyper.hidden_size
    scale = 1.0 / np.sqrt(h)
    layers = []
    for layer_idx in range(hyper.num_layers):
        in_dim = hyper.input_size if layer_idx == 0 else h
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        layers.append(
            LayerParams(
                wx=rng.uniform(-scale, scale, size=(4 * h, in_dim)),
                wh=rng.uniform(-scale, scale, size=(4 * h, h)),
                b=b,
            )
        )
    return LstmParams(
        layers=layers,
        w_out=rng.uniform(-scale, scale, size=(hyper.n_classes, h)),
        b_out=np.zeros(hyper.n_classes),
    )


def zeros_like_params(params: LstmParams) -> LstmParams:
    return LstmParams(
        layers=[
            LayerParams(np.zeros_like(l.wx), np.zeros_like(l.wh), np.zeros_like(l.b))
            for l in params.layers
        ],
        w_out=np.zeros_like(params.w_out),
        b_out=np.zeros_like(params.b_out),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _cell(x_t, h_prev, c_prev, layer: LayerParams, hidden: int):
    z = layer.wx @ x_t + layer.wh @ h_prev + layer.b
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = _sigmoid(z[3 * hidden :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, i, f, g, o, tanh_c


def cell_forward(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, layer_params: LayerParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell step: returns the new hidden and cell state."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    hidden = layer_params.wh.shape[1]
    if layer_params.wx.shape != (4 * hidden, x_t.shape[0]):
        raise ValueError(
            f"input shape {x_t.shape} incompatible with wx {layer_params.wx.shape}"
        )
    if h_prev.shape != (hidden,) or c_prev.shape != (hidden,):
        raise ValueError("state shape mismatch")
    h, c, *_ = _cell(x_t, h_prev, c_prev, layer_params, hidden)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise DivergenceError("non-finite cell state")
    return h, c


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def forward(
    seq: np.ndarray,
    params: LstmParams,
    hyper: LstmHyper,
    train_mode: bool = False,
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Run the stack over a (T, input_size) sequence; returns (probs, cache).

    Dropout masks (train mode only) are drawn from ``seed`` up front, so the
    same seed replays the exact same forward pass; the cache carries all
    activations and masks that :func:`backward` needs.
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] < 1 or seq.shape[1] != hyper.input_size:
        raise ValueError(f"sequence shape {seq.shape} != (T, {hyper.input_size})")
    T = seq.shape[0]
    L, H = hyper.num_layers, hyper.hidden_size

    masks = None
    if train_mode and hyper.dropout > 0.0 and L > 1:
        rng = np.random.default_rng(seed)
        keep = rng.random((L - 1, T, H)) >= hyper.dropout
        masks = keep / (1.0 - hyper.dropout)

    gates = {name: np.zeros((T, L, H)) for name in ("i", "f", "g", "o", "tanhc")}
    h_all = np.zeros((T, L, H))
    c_all = np.zeros((T, L, H))
    h_state = [np.zeros(H) for _ in range(L)]
    c_state = [np.zeros(H) for _ in range(L)]

    for t in range(T):
        x = seq[t]
        for l, layer in enumerate(params.layers):
            h, c, i, f, g, o, tanh_c = _cell(x, h_state[l], c_state[l], layer, H)
            h_state[l], c_state[l] = h, c
            h_all[t, l], c_all[t, l] = h, c
            gates["i"][t, l], gates["f"][t, l] = i, f
            gates["g"][t, l], gates["o"][t, l] = g, o
            gates["tanhc"][t, l] = tanh_c
            x = h if l == L - 1 else (h * masks[l, t] if masks is not None else h)

    logits = params.w_out @ h_state[L - 1] + params.b_out
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite logits")
    probs = softmax(logits)
    cache = {
        "seq": seq,
        "h": h_all,
        "c": c_all,
        "gates": gates,
        "masks": masks,
        "logits": logits,
        "probs": probs,
        "params": params,
        "hyper": hyper,
    }
    return probs, cache


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs, dtype=float)
    if not 0 <= label < len(probs):
        raise ValueError(f"label {label} outside 0..{len(probs) - 1}")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def backward(cache: dict, label: int) -> LstmParams:
    """Analytic gradients of cross_entropy(forward(seq), label).

    Replays the cached dropout masks, so gradients match the exact stochastic
    forward pass that produced the cache.
    """
    params: LstmParams = cache["params"]
    hyper: LstmHyper = cache["hyper"]
    seq, h_all, c_all = cache["seq"], cache["h"], cache["c"]
    gates, masks = cache["gates"], cache["masks"]
    probs = cache["probs"]
    T = seq.shape[0]
    L, H = hyper.num_layers, hyper.hidden_size
    if not 0 <= label < hyper.n_classes:
        raise ValueError(f"label {label} outside 0..{hyper.n_classes - 1}")

    grads = zeros_like_params(params)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    grads.w_out += np.outer(dlogits, h_all[T - 1, L - 1])
    grads.b_out += dlogits

    dh_above = np.zeros((T, H))
    dh_above[T - 1] = params.w_out.T @ dlogits

    for l in range(L - 1, -1, -1):
        layer = params.layers[l]
        glayer = grads.layers[l]
        in_dim = hyper.input_size if l == 0 else H
        dx = np.zeros((T, in_dim))
        dh_carry = np.zeros(H)
        dc_carry = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i, f = gates["i"][t, l], gates["f"][t, l]
            g, o = gates["g"][t, l], gates["o"][t, l]
            tanh_c = gates["tanhc"][t, l]
            c_prev = c_all[t - 1, l] if t > 0 else np.zeros(H)
            h_prev = h_all[t - 1, l] if t > 0 else np.zeros(H)
            if l == 0:
                x_in = seq[t]
            elif masks is not None:
                x_in = h_all[t, l - 1] * masks[l - 1, t]
            else:
                x_in = h_all[t, l - 1]

            dh_tot = dh_above[t] + dh_carry
            do = dh_tot * tanh_c
            dc_tot = dc_carry + dh_tot * o * (1.0 - tanh_c * tanh_c)
            df = dc_tot * c_prev
            di = dc_tot * g
            dg = dc_tot * i
            dc_carry = dc_tot * f

            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ]
            )
            glayer.wx += np.outer(dz, x_in)
            glayer.wh += np.outer(dz, h_prev)
            glayer.b += dz
            dx[t] = layer.wx.T @ dz
            dh_carry = layer.wh.T @ dz
        if l > 0:
            dh_above = dx * masks[l - 1] if masks is not None else dx
    return grads


class _Adam:
    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grad_arrays):
        self.t += 1
        for p, g, m, v in zip(arrays, grad_arrays, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, arrays, grad_arrays):
        for p, g in zip(arrays, grad_arrays):
            p -= self.lr * g


def sequence_view(features: np.ndarray, input_size: int) -> np.ndarray:
    """Reshape flat window features to (T, input_size); length must factor."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1 or features.size % input_size != 0:
        raise ValueError(
            f"feature length {features.size} is not a multiple of input_size {input_size}"
        )
    return features.reshape(-1, input_size)


def train_lstm(train, hyper: LstmHyper) -> tuple[LstmParams, list[float]]:
    """Train on a window Dataset; returns final params and per-epoch loss.

    Sequences are the dataset's flat feature vectors reshaped to
    (feature_len / input_size, input_size). Deterministic for a given
    hyper.seed; a non-finite loss raises DivergenceError with the epoch.
    """
    X = train.feature_matrix()
    labels = train.labels()
    if train.feature_len % hyper.input_size != 0:
        raise ValueError(
            f"feature_len {train.feature_len} not divisible by input_size {hyper.input_size}"
        )
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    seqs = X.reshape(n, -1, hyper.input_size)

    rng = np.random.default_rng(hyper.seed)
    params = init_params(hyper, rng)
    arrays = params.arrays()
    opt = _Adam(arrays, hyper.learning_rate) if hyper.optimizer == "adam" else _Sgd(
        hyper.learning_rate
    )

    losses: list[float] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            grads = zeros_like_params(params)
            grad_arrays = grads.arrays()
            for idx in batch:
                drop_seed = int(rng.integers(0, 2**63 - 1))
                probs, cache = forward(
                    seqs[idx], params, hyper, train_mode=True, seed=drop_seed
                )
                total += cross_entropy(probs, int(labels[idx]))
                sample_grads = backward(cache, int(labels[idx]))
                for acc, g in zip(grad_arrays, sample_grads.arrays()):
                    acc += g
            for g in grad_arrays:
                g /= len(batch)
            opt.step(arrays, grad_arrays)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise DivergenceError(f"training diverged at epoch {epoch}")
        losses.append(mean_loss)
    return params, losses


def predict_proba(params: LstmParams, hyper: LstmHyper, seq: np.ndarray) -> np.ndarray:
    probs, _ = forward(seq, params, hyper, train_mode=False)
    return probs


def predict_lstm(params: LstmParams, hyper: LstmHyper, seq: np.ndarray) -> int:
    """Argmax class of the forward probabilities; ties go to the lower index."""
    return int(np.argmax(predict_proba(params, hyper, seq)))


def save_lstm(params: LstmParams, hyper: LstmHyper, path: str | Path) -> None:
    payload = {
        "format": LSTM_FORMAT,
        "hyper": asdict(hyper),
        "layers": [
            {"wx": l.wx.tolist(), "wh": l.wh.tolist(), "b": l.b.tolist()}
            for l in params.layers
        ],
        "w_out": params.w_out.tolist(),
        "b_out": params.b_out.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_lstm(path: str | Path) -> tuple[LstmParams, LstmHyper]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != LSTM_FORMAT:
        raise ValueError(f"{path}: not a {LSTM_FORMAT} model file")
    hyper = LstmHyper(**payload["hyper"])
    params = LstmParams(
        layers=[
            LayerParams(
                wx=np.array(entry["wx"], dtype=float),
                wh=np.array(entry["wh"], dtype=float),
                b=np.array(entry["b"], dtype=float),
            )
            for entry in payload["layers"]
        ],
        w_out=np.array(payload["w_out"], dtype=float),
        b_out=np.array(payload["b_out"], dtype=float),
    )
    return params, hyper
