"""Adam and flat parameter-vector views over named arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


def flatten(params: Params) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([params[k].ravel() for k in params])


def unflatten(vec: np.ndarray, like: Params) -> Params:
    out, pos = {}, 0
    for k, v in like.items():
        out[k] = np.asarray(vec[pos:pos + v.size], dtype=np.float64).reshape(v.shape).copy()
        pos += v.size
    if pos != vec.size:
        raise ValueError(f"vector of size {vec.size} does not match {pos} parameters")
    return out


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> None:
        """In-place update of ``params``; keys missing from ``grads`` are left alone."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
