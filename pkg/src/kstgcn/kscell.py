"""Knowledge/traffic fusion followed by graph convolution.

Each node's speed is concatenated with its static and dynamic knowledge
vectors, mapped through an affine layer and tanh, and the fused features are
propagated over the road graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import activation, gcn_layer, gcn_layer_backward


@dataclass
class KsCellParams:
    fusion_w: np.ndarray          # (1 + d_s + d_d, d_f)
    fusion_b: np.ndarray          # (d_f,)
    gcn_w: list[np.ndarray]       # per layer: (d_f, d_out), then (d_out, d_out)
    fusion_act: str = "tanh"
    gcn_act: str = "relu"

    def __post_init__(self):
        if self.fusion_b.shape != (self.fusion_w.shape[1],):
            raise ValueError(f"fusion bias {self.fusion_b.shape} does not match weight {self.fusion_w.shape}")
        d = self.fusion_w.shape[1]
        for w in self.gcn_w:
            if w.shape[0] != d:
                raise ValueError(f"graph-convolution weight {w.shape} does not accept {d} features")
            d = w.shape[1]

    @property
    def d_in(self) -> int:
        return self.fusion_w.shape[0]

    @property
    def d_out(self) -> int:
        return self.gcn_w[-1].shape[1]

    @classmethod
    def init(cls, d_s: int, d_d: int, d_f: int, d_out: int, layers: int = 1,
             rng: np.random.Generator | None = None, **kw) -> "KsCellParams":
        rng = rng or np.random.default_rng(0)
        d_in = 1 + d_s + d_d
        ws, d = [], d_f
        for _ in range(layers):
            ws.append(glorot(rng, d, d_out))
            d = d_out
        return cls(glorot(rng, d_in, d_f), np.zeros(d_f), ws, **kw)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def fuse(x_t: np.ndarray, e_s: np.ndarray, e_d_t: np.ndarray, params: KsCellParams) -> np.ndarray:
    """tanh([speed | e_s | e_d] W + b) per node -> (n, d_f)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    n = x_t.shape[0]
    if e_s.shape[0] != n or e_d_t.shape[0] != n:
        raise ValueError(f"row counts differ: speeds {n}, e_s {e_s.shape[0]}, e_d {e_d_t.shape[0]}")
    z = np.concatenate([x_t.reshape(n, 1), e_s, e_d_t], axis=1)
    if z.shape[1] != params.d_in:
        raise ValueError(f"fused input has {z.shape[1]} columns, weight expects {params.d_in}")
    f, _ = activation(params.fusion_act)
    return f(z @ params.fusion_w + params.fusion_b)


def ks_cell_forward(x_t: np.ndarray, e_s: np.ndarray, e_d_t: np.ndarray, p: np.ndarray,
                    params: KsCellParams) -> np.ndarray:
    h = fuse(x_t, e_s, e_d_t, params)
    for w in params.gcn_w:
        h = gcn_layer(p, h, w, params.gcn_act)
    return h


def ks_cell_backward(x_t: np.ndarray, e_s: np.ndarray, e_d_t: np.ndarray, p: np.ndarray,
                     params: KsCellParams, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of one KS-Cell evaluation given dL/d(output).

    Keys: fusion_w, fusion_b, gcn_w0.., and the inputs x_t, e_s, e_d_t.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    n = x_t.shape[0]
    z = np.concatenate([x_t.reshape(n, 1), e_s, e_d_t], axis=1)
    f, df = activation(params.fusion_act)
    a = z @ params.fusion_w + params.fusion_b
    hs = [f(a)]
    for w in params.gcn_w[:-1]:
        hs.append(gcn_layer(p, hs[-1], w, params.gcn_act))
    out, dh = {}, grad_out
    for k in reversed(range(len(params.gcn_w))):
        dh, out[f"gcn_w{k}"] = gcn_layer_backward(p, hs[k], params.gcn_w[k], params.gcn_act, dh)
    da = dh * df(a, hs[0])
    out["fusion_w"] = z.T @ da
    out["fusion_b"] = da.sum(axis=0)
    dz = da @ params.fusion_w.T
    d_s = e_s.shape[1]
    out["x_t"] = dz[:, 0]
    out["e_s"] = dz[:, 1:1 + d_s]
    out["e_d_t"] = dz[:, 1 + d_s:]
    return out
