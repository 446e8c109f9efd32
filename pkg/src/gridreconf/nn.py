"""Two-hidden-layer MLP with batch normalization, manual backprop and ADAM."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, NonFiniteGradient

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def init_he(shapes, seed: int):
    """He-normal weights ``N(0, 2/fan_in)`` and zero biases for each ``(fan_in, fan_out)``."""
    rng = np.random.default_rng(seed)
    out = []
    for fan_in, fan_out in shapes:
        if fan_in <= 0 or fan_out <= 0:
            raise ValueError(f"layer shape ({fan_in}, {fan_out}) has a zero width")
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        out.append((w, np.zeros(fan_out)))
    return out


@dataclass
class MLP:
    """``x -> Linear -> BN -> ReLU -> Linear -> BN -> ReLU -> Linear``."""

    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]

    @classmethod
    def create(cls, n_in: int, hidden: int, n_out: int, seed: int) -> "MLP":
        (w1, b1), (w2, b2), (w3, b3) = init_he([(n_in, hidden), (hidden, hidden), (hidden, n_out)], seed)
        params = {
            "W1": w1, "b1": b1, "gamma1": np.ones(hidden), "beta1": np.zeros(hidden),
            "W2": w2, "b2": b2, "gamma2": np.ones(hidden), "beta2": np.zeros(hidden),
            "W3": w3, "b3": b3,
        }
        running = {"mean1": np.zeros(hidden), "var1": np.ones(hidden),
                   "mean2": np.zeros(hidden), "var2": np.ones(hidden)}
        return cls(params, running)

    @property
    def shapes(self) -> tuple[int, int, int]:
        return self.params["W1"].shape[0], self.params["W1"].shape[1], self.params["W3"].shape[1]

    def copy(self) -> "MLP":
        return MLP({k: v.copy() for k, v in self.params.items()}, {k: v.copy() for k, v in self.running.items()})

    def forward(self, x, train: bool = False, update_stats: bool = True):
        """Returns ``(output, cache)``; train mode normalizes with batch statistics."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or len(x) == 0:
            raise BatchTooSmall("forward needs a nonempty 2-D batch")
        if train and len(x) < 2:
            raise BatchTooSmall("batch normalization in train mode needs at least two rows")
        p = self.params
        cache: dict = {"x": x, "train": train}
        h = x
        for i in (1, 2):
            a = h @ p[f"W{i}"] + p[f"b{i}"]
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                if update_stats:
                    n = len(a)
                    self.running[f"mean{i}"] = (1 - BN_MOMENTUM) * self.running[f"mean{i}"] + BN_MOMENTUM * mu
                    self.running[f"var{i}"] = ((1 - BN_MOMENTUM) * self.running[f"var{i}"]
                                               + BN_MOMENTUM * var * n / (n - 1))
            else:
                mu, var = self.running[f"mean{i}"], self.running[f"var{i}"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (a - mu) * inv
            bn = p[f"gamma{i}"] * xhat + p[f"beta{i}"]
            relu = np.maximum(bn, 0.0)
            cache[i] = (h, xhat, inv, bn > 0)
            h = relu
        cache["h2"] = h
        return h @ p["W3"] + p["b3"], cache

    def backward(self, cache, dout) -> dict[str, np.ndarray]:
        p = self.params
        grads = {"W3": cache["h2"].T @ dout, "b3": dout.sum(axis=0)}
        dh = dout @ p["W3"].T
        for i in (2, 1):
            h_in, xhat, inv, mask = cache[i]
            dbn = dh * mask
            grads[f"gamma{i}"] = (dbn * xhat).sum(axis=0)
            grads[f"beta{i}"] = dbn.sum(axis=0)
            dxhat = dbn * p[f"gamma{i}"]
            if cache["train"]:
                n = len(xhat)
                da = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                da = dxhat * inv
            grads[f"W{i}"] = h_in.T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            dh = da @ p[f"W{i}"].T
        return grads

    def relu_pattern(self, cache) -> bytes:
        return np.concatenate([cache[1][3].ravel(), cache[2][3].ravel()]).tobytes()

    def to_bytes(self, meta: dict | None = None) -> bytes:
        buf = io.BytesIO()
        arrays = {f"param_{k}": v for k, v in self.params.items()}
        arrays.update({f"running_{k}": v for k, v in self.running.items()})
        arrays["meta"] = np.array(json.dumps({"format": 1, **(meta or {})}, sort_keys=True))
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["MLP", dict]:
        with np.load(io.BytesIO(data), allow_pickle=False) as npz:
            params = {k[6:]: npz[k] for k in npz.files if k.startswith("param_")}
            running = {k[8:]: npz[k] for k in npz.files if k.startswith("running_")}
            meta = json.loads(str(npz["meta"]))
        return cls(params, running), meta


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"gradient of {k} has non-finite entries")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
