"""The composed forecaster: KS-Cell -> GRU -> multi-horizon head, batched.

Forward caches every intermediate needed by the hand-written reverse pass.
Shapes: B windows, w steps, n nodes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import activation
from .gru import GruParams, sigmoid
from .kscell import KsCellParams
from .optim import Params, flatten, unflatten


class NumericError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    d_s: int = 20
    d_d: int = 20
    d_f: int = 32
    d_out: int = 32
    d_h: int = 128
    horizon: int = 1
    gcn_layers: int = 1
    fusion_act: str = "tanh"
    gcn_act: str = "relu"


class ForecastModel:
    def __init__(self, cell: KsCellParams, gru: GruParams, config: ModelConfig):
        if gru.d_in != cell.d_out:
            raise ValueError(f"GRU expects {gru.d_in} inputs, KS-Cell produces {cell.d_out}")
        self.cell = cell
        self.gru = gru
        self.config = config

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ForecastModel":
        rng = np.random.default_rng(seed)
        cell = KsCellParams.init(config.d_s, config.d_d, config.d_f, config.d_out, config.gcn_layers, rng,
                                 fusion_act=config.fusion_act, gcn_act=config.gcn_act)
        gru = GruParams.init(config.d_out, config.d_h, config.horizon, rng)
        return cls(cell, gru, config)

    # named arrays, in a fixed order; the optimizer updates them in place
    def params(self) -> Params:
        p = {"fusion_w": self.cell.fusion_w, "fusion_b": self.cell.fusion_b}
        for k, w in enumerate(self.cell.gcn_w):
            p[f"gcn_w{k}"] = w
        g = self.gru
        p.update(w_u=g.w_u, b_u=g.b_u, w_r=g.w_r, b_r=g.b_r, w_c=g.w_c, b_c=g.b_c,
                 head_w=g.head_w, head_b=g.head_b)
        return p

    def set_params(self, p: Params) -> None:
        self.cell.fusion_w, self.cell.fusion_b = p["fusion_w"], p["fusion_b"]
        self.cell.gcn_w = [p[f"gcn_w{k}"] for k in range(len(self.cell.gcn_w))]
        for k in ("w_u", "b_u", "w_r", "b_r", "w_c", "b_c", "head_w", "head_b"):
            setattr(self.gru, k, p[k])

    def vector(self) -> np.ndarray:
        return flatten(self.params())

    def set_vector(self, vec: np.ndarray) -> None:
        self.set_params(unflatten(vec, self.params()))

    def copy(self) -> "ForecastModel":
        m = ForecastModel.init(self.config)
        m.set_vector(self.vector())
        return m

    def astype(self, dtype) -> None:
        """Cast every parameter in place (float32 training, float64 checking)."""
        self.set_params({k: v.astype(dtype) for k, v in self.params().items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())

    def save(self, path: str | Path) -> None:
        """Flat float64 array plus a JSON manifest of shapes and config."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.vector().astype("<f8").tofile(path / "params.bin")
        manifest = {"config": asdict(self.config),
                    "shapes": {k: list(v.shape) for k, v in self.params().items()}}
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ForecastModel":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        m = cls.init(ModelConfig(**manifest["config"]))
        shapes = {k: tuple(v.shape) for k, v in m.params().items()}
        if shapes != {k: tuple(v) for k, v in manifest["shapes"].items()}:
            raise ValueError("checkpoint shapes do not match its config")
        m.set_vector(np.fromfile(path / "params.bin", dtype="<f8"))
        return m

    # -- batched forward / backward ------------------------------------------

    def forward(self, x: np.ndarray, e_s: np.ndarray, e_d: np.ndarray, p: np.ndarray):
        """x: (B, w, n) speeds, e_s: (n, d_s), e_d: (B, w, n, d_d) -> (pred (B, n, H), cache)."""
        B, w, n = x.shape
        cell, gru = self.cell, self.gru
        d_s, d_d = e_s.shape[1], e_d.shape[-1]
        if cell.d_in != 1 + d_s + d_d:
            raise ValueError(f"KS-Cell expects {cell.d_in - 1} knowledge dims, got {d_s}+{d_d}")
        for a, where in ((x, "input speeds"), (e_s, "static knowledge"), (e_d, "dynamic knowledge")):
            _check(a, where)
        dtype = np.result_type(x, e_s, e_d, cell.fusion_w)
        z = np.empty((B, w, n, 1 + d_s + d_d), dtype=dtype)
        z[..., 0] = x
        z[..., 1:1 + d_s] = e_s
        z[..., 1 + d_s:] = e_d
        fa, _ = activation(cell.fusion_act)
        ga, _ = activation(cell.gcn_act)
        a0 = _lin(z, cell.fusion_w) + cell.fusion_b
        hs = [fa(a0)]
        pre = []
        for wg in cell.gcn_w:
            m = _mix(p, hs[-1])
            pre.append((m, _lin(m, wg)))
            hs.append(ga(pre[-1][1]))
        xp = hs[-1]                                            # (B, w, n, d_out)
        _check(xp, "ks-cell")

        d = gru.d_in
        xu = _lin(xp, gru.w_u[:d])
        xr = _lin(xp, gru.w_r[:d])
        xc = _lin(xp, gru.w_c[:d])
        h = np.zeros((B, n, gru.d_h), dtype=dtype)
        steps = []
        for j in range(w):
            u = sigmoid(xu[:, j] + _lin(h, gru.w_u[d:]) + gru.b_u)
            r = sigmoid(xr[:, j] + _lin(h, gru.w_r[d:]) + gru.b_r)
            rh = r * h
            c = np.tanh(xc[:, j] + _lin(rh, gru.w_c[d:]) + gru.b_c)
            steps.append((h, u, r, rh, c))
            h = u * h + (1.0 - u) * c
        _check(h, "gru")
        pred = _lin(h, gru.head_w) + gru.head_b
        _check(pred, "head")
        cache = (z, a0, hs, pre, xp, steps, h, p)
        return pred, cache

    def predict(self, x, e_s, e_d, p) -> np.ndarray:
        return self.forward(x, e_s, e_d, p)[0]

    def backward(self, cache, dpred: np.ndarray) -> Params:
        z, a0, hs, pre, xp, steps, h_last, p = cache
        cell, gru = self.cell, self.gru
        d = gru.d_in
        g = {k: np.zeros_like(v) for k, v in self.params().items()}
        g["head_w"] = _flat(h_last).T @ _flat(dpred)
        g["head_b"] = _flat(dpred).sum(axis=0)
        dh = _lin(dpred, gru.head_w.T)
        w = len(steps)
        dau = np.empty(xp.shape[:-1] + (gru.d_h,), dtype=xp.dtype)
        dar = np.empty_like(dau)
        dac = np.empty_like(dau)
        gwu = np.zeros((gru.d_h, gru.d_h), dtype=xp.dtype)
        gwr = np.zeros_like(gwu)
        gwc = np.zeros_like(gwu)
        for j in reversed(range(w)):
            h_prev, u, r, rh, c = steps[j]
            du = dh * (h_prev - c)
            dc = dh * (1.0 - u)
            dh_prev = dh * u
            ac = dc * (1.0 - c * c)
            gwc += _flat(rh).T @ _flat(ac)
            drh = _lin(ac, gru.w_c[d:].T)
            dh_prev += drh * r
            ar = drh * h_prev * r * (1.0 - r)
            au = du * u * (1.0 - u)
            gwr += _flat(h_prev).T @ _flat(ar)
            gwu += _flat(h_prev).T @ _flat(au)
            dh_prev += _lin(ar, gru.w_r[d:].T) + _lin(au, gru.w_u[d:].T)
            dau[:, j], dar[:, j], dac[:, j] = au, ar, ac
            dh = dh_prev
        xf = _flat(xp)
        for name, gate_in, gh in (("w_u", dau, gwu), ("w_r", dar, gwr), ("w_c", dac, gwc)):
            g[name][:d] = xf.T @ _flat(gate_in)
            g[name][d:] = gh
        g["b_u"], g["b_r"], g["b_c"] = _flat(dau).sum(0), _flat(dar).sum(0), _flat(dac).sum(0)
        dxp = _lin(dau, gru.w_u[:d].T) + _lin(dar, gru.w_r[:d].T) + _lin(dac, gru.w_c[:d].T)

        _, dga = activation(cell.gcn_act)
        dh_cell = dxp
        for k in reversed(range(len(cell.gcn_w))):
            m, zk = pre[k]
            dzk = dh_cell * dga(zk, hs[k + 1])
            g[f"gcn_w{k}"] = _flat(m).T @ _flat(dzk)
            dh_cell = _mix(p.T, _lin(dzk, cell.gcn_w[k].T))
        _, dfa = activation(cell.fusion_act)
        da0 = dh_cell * dfa(a0, hs[0])
        g["fusion_w"] = _flat(z).T @ _flat(da0)
        g["fusion_b"] = _flat(da0).sum(axis=0)
        for k, v in g.items():
            _check(v, f"gradient {k}")
        return g


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _lin(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """a @ w over the last axis as one 2-D product."""
    return (_flat(a) @ w).reshape(a.shape[:-1] + (w.shape[1],))


def _mix(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Apply p along the node axis (-2) as one 2-D product."""
    n = p.shape[0]
    ht = np.moveaxis(h, -2, 0)
    out = (p @ ht.reshape(n, -1)).reshape(ht.shape)
    return np.moveaxis(out, 0, -2)


def _check(a: np.ndarray, where: str) -> None:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {where}")
