"""Gated recurrent unit over KS-Cell outputs, the multi-horizon head, and speed series."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kscell import KsCellParams, glorot, ks_cell_forward

INTERVAL_MINUTES = 15


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GruParams:
    w_u: np.ndarray   # (d_in + d_h, d_h)
    b_u: np.ndarray
    w_r: np.ndarray
    b_r: np.ndarray
    w_c: np.ndarray
    b_c: np.ndarray
    head_w: np.ndarray  # (d_h, horizon)
    head_b: np.ndarray  # (horizon,)

    def __post_init__(self):
        d_h = self.b_u.shape[0]
        for w in (self.w_u, self.w_r, self.w_c):
            if w.shape[1] != d_h or w.shape[0] <= d_h:
                raise ValueError(f"gate weight {w.shape} inconsistent with hidden size {d_h}")
        if self.head_w.shape[0] != d_h or self.head_b.shape != (self.head_w.shape[1],):
            raise ValueError("output head shapes do not conform")

    @property
    def d_h(self) -> int:
        return self.b_u.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_u.shape[0] - self.d_h

    @property
    def horizon(self) -> int:
        return self.head_w.shape[1]

    @classmethod
    def init(cls, d_in: int, d_h: int, horizon: int, rng: np.random.Generator | None = None) -> "GruParams":
        rng = rng or np.random.default_rng(0)
        return cls(glorot(rng, d_in + d_h, d_h), np.zeros(d_h),
                   glorot(rng, d_in + d_h, d_h), np.zeros(d_h),
                   glorot(rng, d_in + d_h, d_h), np.zeros(d_h),
                   glorot(rng, d_h, horizon), np.zeros(horizon))


def gru_gates(x_prime_t: np.ndarray, h_prev: np.ndarray, params: GruParams,
              update_gate: float | np.ndarray | None = None):
    """One recurrent step returning (h_t, u, r, c).

    ``update_gate`` replaces the computed u when given; used to probe the
    gate limits.
    """
    if x_prime_t.shape[-1] != params.d_in or h_prev.shape[-1] != params.d_h:
        raise ValueError(f"inputs {x_prime_t.shape}, {h_prev.shape} do not match "
                         f"d_in={params.d_in}, d_h={params.d_h}")
    d = params.d_in
    xh = np.concatenate([x_prime_t, h_prev], axis=-1)
    u = sigmoid(xh @ params.w_u + params.b_u)
    if update_gate is not None:
        u = np.broadcast_to(np.asarray(update_gate, dtype=np.float64), u.shape)
    r = sigmoid(xh @ params.w_r + params.b_r)
    c = np.tanh(x_prime_t @ params.w_c[:d] + (r * h_prev) @ params.w_c[d:] + params.b_c)
    h = u * h_prev + (1.0 - u) * c
    return h, u, r, c


def gru_step(x_prime_t: np.ndarray, h_prev: np.ndarray, params: GruParams,
             update_gate: float | np.ndarray | None = None) -> np.ndarray:
    return gru_gates(x_prime_t, h_prev, params, update_gate)[0]


def gru_step_backward(x_prime_t: np.ndarray, h_prev: np.ndarray, params: GruParams,
                      grad_h: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of one step given dL/dh_t: gate weights and biases, x_prime_t and h_prev."""
    d = params.d_in
    _, u, r, c = gru_gates(x_prime_t, h_prev, params)
    du = grad_h * (h_prev - c)
    ac = grad_h * (1.0 - u) * (1.0 - c * c)
    drh = ac @ params.w_c[d:].T
    ar = drh * h_prev * r * (1.0 - r)
    au = du * u * (1.0 - u)
    xh = np.concatenate([x_prime_t, h_prev], axis=-1)
    xrh = np.concatenate([x_prime_t, r * h_prev], axis=-1)
    dxh = au @ params.w_u.T + ar @ params.w_r.T
    return {"w_u": xh.T @ au, "b_u": au.sum(axis=0),
            "w_r": xh.T @ ar, "b_r": ar.sum(axis=0),
            "w_c": xrh.T @ ac, "b_c": ac.sum(axis=0),
            "x_prime_t": dxh[:, :d] + ac @ params.w_c[:d].T,
            "h_prev": dxh[:, d:] + drh * r + grad_h * u}


def forward_sequence(window: np.ndarray, e_s: np.ndarray, e_d: np.ndarray, p: np.ndarray,
                     cell: KsCellParams, gru: GruParams, return_states: bool = False):
    """Predict the next ``horizon`` speeds per node from a (w, n) window.

    ``e_d`` holds one (n, d_d) slice per window step.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 1:
        raise ValueError(f"window must be (w >= 1, n), got {window.shape}")
    if len(e_d) < window.shape[0]:
        raise ValueError(f"dynamic knowledge covers {len(e_d)} of {window.shape[0]} window steps")
    n = window.shape[1]
    h = np.zeros((n, gru.d_h))
    states = []
    for j, x_t in enumerate(window):
        h = gru_step(ks_cell_forward(x_t, e_s, e_d[j], p, cell), h, gru)
        states.append(h)
    pred = h @ gru.head_w + gru.head_b
    return (pred, states) if return_states else pred


# -- speed series ------------------------------------------------------------

@dataclass
class SpeedTensor:
    values: np.ndarray                      # (T, n)
    node_ids: list[str] = field(default_factory=list)
    time_ids: list[int] = field(default_factory=list)
    interval_minutes: int = INTERVAL_MINUTES
    bounds: tuple[float, float] | None = None   # set when values are min-max normalized

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"speeds must be (T >= 1, n), got {self.values.shape}")
        T, n = self.values.shape
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(n)]
        if not self.time_ids:
            self.time_ids = list(range(T))
        if len(self.node_ids) != n or len(self.time_ids) != T:
            raise ValueError("node/time ids do not match the value shape")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def span(self) -> float:
        return 1.0 if self.bounds is None else self.bounds[1] - self.bounds[0]

    def normalized(self, bounds: tuple[float, float] | None = None) -> "SpeedTensor":
        if self.bounds is not None:
            raise ValueError("speeds are already normalized")
        lo, hi = bounds if bounds is not None else (float(self.values.min()), float(self.values.max()))
        if hi <= lo:
            raise ValueError("cannot normalize a constant series")
        return replace(self, values=(self.values - lo) / (hi - lo), bounds=(lo, hi))

    def denormalize(self, arr: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return np.asarray(arr)
        lo, hi = self.bounds
        return np.asarray(arr) * (hi - lo) + lo

    def raw(self) -> "SpeedTensor":
        return self if self.bounds is None else replace(self, values=self.denormalize(self.values), bounds=None)

    def slice(self, start: int, stop: int) -> "SpeedTensor":
        return replace(self, values=self.values[start:stop], time_ids=self.time_ids[start:stop])

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_id"] + [f"node_{k}" for k in range(self.n_nodes)])
            for t, row in zip(self.time_ids, self.values):
                w.writerow([t] + [repr(float(x)) for x in row])
        side = {"interval_minutes": self.interval_minutes, "node_ids": self.node_ids,
                "bounds": list(self.bounds) if self.bounds is not None else None}
        path.with_suffix(".json").write_text(json.dumps(side), encoding="utf-8")

    @classmethod
    def load_csv(cls, path: str | Path) -> "SpeedTensor":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0] != "time_id":
                raise ValueError(f"{path.name}: expected a time_id,node_0,... header")
            times, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ValueError(f"{path.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
                times.append(int(row[0]))
                rows.append([float(x) for x in row[1:]])
        side_path = path.with_suffix(".json")
        side = json.loads(side_path.read_text(encoding="utf-8")) if side_path.exists() else {}
        bounds = side.get("bounds")
        return cls(np.array(rows), side.get("node_ids") or [], times,
                   side.get("interval_minutes", INTERVAL_MINUTES), tuple(bounds) if bounds else None)


def horizon_minutes(horizon: int, interval: int = INTERVAL_MINUTES) -> int:
    return horizon * interval


def windows(n_steps: int, window: int, horizon: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Start indices s with inputs [s, s+window) and targets [s+window, s+window+horizon)
    entirely inside [start, stop)."""
    stop = n_steps if stop is None else stop
    last = stop - window - horizon
    if last < start:
        return np.zeros(0, dtype=np.int64)
    return np.arange(start, last + 1)


__all__ = ["GruParams", "SpeedTensor", "gru_gates", "gru_step", "gru_step_backward", "forward_sequence", "sigmoid",
           "windows", "horizon_minutes"]
