"""Entity/attribute knowledge embedding (relation translation + attribute classification).

Relation triples are scored by a translation model (TransE, or TransR with a
per-relation transfer matrix); attribute triples by a classifier that maps the
entity vector through ``tanh(e W_att + b_att)`` and compares it with each value
embedding of the attribute. Both are turned into conditional probabilities by a
softmax over candidates and trained jointly by maximizing the log-likelihood.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..optim import Adam, Params, flatten, unflatten
from .store import (WEATHER, AttributeTriple, KGError, OBSERVED_AT, RelationTriple, SamplingError,
                    TripleStore, time_entity)

log = logging.getLogger(__name__)

B1_DEFAULT = 7.0
B2_DEFAULT = 7.0


class TrainingError(RuntimeError):
    pass


# -- norms -------------------------------------------------------------------

def _norm(x: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(x).sum(axis=-1)
    if norm == "L2":
        return np.sqrt((x * x).sum(axis=-1))
    raise ValueError(f"norm must be 'L1' or 'L2', got {norm!r}")


def _norm_grad(x: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.sign(x)
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def _check_dims(*vecs):
    dims = {np.shape(v)[-1] for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {[np.shape(v) for v in vecs]}")


# -- scores ------------------------------------------------------------------

def score_relation_transe(h, r, t, norm: str = "L1", b1: float = B1_DEFAULT):
    """-||h + r - t|| + b1."""
    h, r, t = (np.asarray(x, dtype=np.float64) for x in (h, r, t))
    _check_dims(h, r, t)
    return -_norm(h + r - t, norm) + b1


def score_relation_transr(h, r, t, m_r, norm: str = "L1", b1: float = B1_DEFAULT):
    """-||h M_r + r - t M_r|| + b1."""
    h, r, t, m_r = (np.asarray(x, dtype=np.float64) for x in (h, r, t, m_r))
    d = h.shape[-1]
    if m_r.shape[-2:] != (d, d):
        raise ValueError(f"transfer matrix {m_r.shape} is not {d}x{d}")
    _check_dims(h, r, t)
    return -_norm(h @ m_r + r - t @ m_r, norm) + b1


def score_attribute(e, w_att, b_att, value_vec, norm: str = "L1", b2: float = B2_DEFAULT):
    """-||tanh(e W_att + b_att) - E_value|| + b2."""
    e, w_att, b_att, value_vec = (np.asarray(x, dtype=np.float64) for x in (e, w_att, b_att, value_vec))
    if w_att.shape[0] != e.shape[-1]:
        raise ValueError(f"projection {w_att.shape} does not accept vectors of size {e.shape[-1]}")
    return -_norm(np.tanh(e @ w_att + b_att) - value_vec, norm) + b2


def log_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    m = scores.max(axis=axis, keepdims=True)
    z = scores - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# -- table -------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    entities: list[str]
    relations: list[str]
    attributes: dict[str, list[str]]
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    attr_value_vecs: dict[str, np.ndarray]
    attr_w: dict[str, np.ndarray]
    attr_b: dict[str, np.ndarray]
    transfer_mats: np.ndarray | None = None
    scorer: str = "transe"
    norm: str = "L1"
    b1: float = B1_DEFAULT
    b2: float = B2_DEFAULT
    seed: int = 0

    def __post_init__(self):
        self.entity_index = {e: k for k, e in enumerate(self.entities)}
        self.relation_index = {r: k for k, r in enumerate(self.relations)}
        self.value_index = {a: {v: k for k, v in enumerate(vals)} for a, vals in self.attributes.items()}

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    # flat parameter view used by the optimizer and the gradient checks
    def params(self) -> Params:
        p = {"entity": self.entity_vecs, "relation": self.relation_vecs}
        if self.scorer == "transr":
            p["transfer"] = self.transfer_mats
        for a in self.attributes:
            p[f"value:{a}"] = self.attr_value_vecs[a]
            p[f"W:{a}"] = self.attr_w[a]
            p[f"b:{a}"] = self.attr_b[a]
        return p

    def set_params(self, p: Params) -> None:
        self.entity_vecs = p["entity"]
        self.relation_vecs = p["relation"]
        if "transfer" in p:
            self.transfer_mats = p["transfer"]
        for a in self.attributes:
            self.attr_value_vecs[a] = p[f"value:{a}"]
            self.attr_w[a] = p[f"W:{a}"]
            self.attr_b[a] = p[f"b:{a}"]

    def copy(self) -> "EmbeddingTable":
        t = EmbeddingTable(list(self.entities), list(self.relations),
                           {a: list(v) for a, v in self.attributes.items()},
                           self.entity_vecs.copy(), self.relation_vecs.copy(),
                           {a: v.copy() for a, v in self.attr_value_vecs.items()},
                           {a: v.copy() for a, v in self.attr_w.items()},
                           {a: v.copy() for a, v in self.attr_b.items()},
                           None if self.transfer_mats is None else self.transfer_mats.copy(),
                           self.scorer, self.norm, self.b1, self.b2, self.seed)
        return t

    def relation_scores(self, heads, rels, tails) -> np.ndarray:
        """Vectorized relation scores for index arrays (broadcastable)."""
        h = self.entity_vecs[heads]
        t = self.entity_vecs[tails]
        r = self.relation_vecs[rels]
        if self.scorer == "transr":
            m = self.transfer_mats[rels]
            return -_norm(np.einsum("...d,...de->...e", h, m) + r
                          - np.einsum("...d,...de->...e", t, m), self.norm) + self.b1
        return -_norm(h + r - t, self.norm) + self.b1

    def score_relation(self, t: RelationTriple) -> float:
        return float(self.relation_scores(self.entity_index[t.head], self.relation_index[t.relation],
                                          self.entity_index[t.tail]))

    def attribute_scores(self, entity_idx, attribute: str) -> np.ndarray:
        """Scores of every value of ``attribute``; shape (..., |range|)."""
        y = np.tanh(self.entity_vecs[entity_idx] @ self.attr_w[attribute] + self.attr_b[attribute])
        return -_norm(y[..., None, :] - self.attr_value_vecs[attribute], self.norm) + self.b2

    def score_attribute(self, t: AttributeTriple) -> float:
        try:
            v = self.value_index[t.attribute][t.value]
        except KeyError:
            raise KGError(f"unknown attribute value {t.attribute}={t.value!r}") from None
        return float(self.attribute_scores(self.entity_index[t.entity], t.attribute)[v])

    def relation_log_prob(self, t: RelationTriple, negatives: Sequence[RelationTriple]) -> float:
        """Log-probability of ``t`` against head-corrupted ``negatives``."""
        if not negatives:
            raise ValueError("need at least one negative")
        scores = np.array([self.score_relation(t)] + [self.score_relation(n) for n in negatives])
        return float(log_softmax(scores)[0])

    def relation_log_prob_exact(self, t: RelationTriple) -> float:
        """Denominator over every entity as the head."""
        heads = np.arange(len(self.entities))
        scores = self.relation_scores(heads, self.relation_index[t.relation], self.entity_index[t.tail])
        return float(log_softmax(scores)[self.entity_index[t.head]])

    def attribute_log_prob(self, t: AttributeTriple) -> float:
        s = self.attribute_scores(self.entity_index[t.entity], t.attribute)
        return float(log_softmax(s)[self.value_index[t.attribute][t.value]])


def init_table(store: TripleStore, dim: int = 20, scorer: str = "transe", norm: str = "L1",
               b1: float = B1_DEFAULT, b2: float = B2_DEFAULT, seed: int = 0,
               attributes: Sequence[str] | None = None) -> EmbeddingTable:
    if dim <= 0:
        raise ValueError("dim must be positive")
    if scorer not in ("transe", "transr"):
        raise ValueError(f"scorer must be 'transe' or 'transr', got {scorer!r}")
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(dim)
    attrs = list(store.attributes) if attributes is None else list(attributes)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    ent = _l2_rows(u(len(store.entities), dim))
    rel = _l2_rows(u(len(store.relations), dim))
    # value vectors start inside the image of tanh so the classifier is not saturated
    values = {a: np.tanh(u(len(store.attributes[a]), dim)) for a in attrs}
    w = {a: u(dim, dim) / math.sqrt(dim) for a in attrs}
    b = {a: np.zeros(dim) for a in attrs}
    tm = np.repeat(np.eye(dim)[None], len(store.relations), axis=0) if scorer == "transr" else None
    return EmbeddingTable(list(store.entities), list(store.relations), {a: list(store.attributes[a]) for a in attrs},
                          ent, rel, values, w, b, tm, scorer, norm, b1, b2, seed)


def _l2_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=x.copy(), where=n > 0)


# -- likelihood and gradients ------------------------------------------------

@dataclass
class RelationBatch:
    heads: np.ndarray      # (B,)
    rels: np.ndarray       # (B,)
    tails: np.ndarray      # (B,)
    neg_heads: np.ndarray  # (B, k)


@dataclass
class AttributeBatch:
    attribute: str
    entities: np.ndarray   # (B,)
    values: np.ndarray     # (B,)


def relation_nll(table: EmbeddingTable, batch: RelationBatch, grads: Params | None = None) -> float:
    """Summed negative log-likelihood of a relation batch; accumulates into ``grads``."""
    ent, rel = table.entity_vecs, table.relation_vecs
    hi = np.concatenate([batch.heads[:, None], batch.neg_heads], axis=1)   # (B, k+1), true first
    h = ent[hi]                                   # (B, K, d)
    t = ent[batch.tails][:, None, :]              # (B, 1, d)
    r = rel[batch.rels][:, None, :]
    if table.scorer == "transr":
        m = table.transfer_mats[batch.rels]       # (B, d, d)
        hm = np.einsum("bkd,bde->bke", h, m)
        tm = np.einsum("bkd,bde->bke", t, m)
        diff = hm + r - tm
    else:
        diff = h + r - t
    scores = -_norm(diff, table.norm) + table.b1
    lp = log_softmax(scores)
    nll = -float(lp[:, 0].sum())
    if grads is None:
        return nll
    ds = np.exp(lp)
    ds[:, 0] -= 1.0                               # d nll / d scores
    ddiff = -ds[..., None] * _norm_grad(diff, table.norm)   # (B, K, d)
    dr = ddiff.sum(axis=1)
    if table.scorer == "transr":
        dh = np.einsum("bke,bde->bkd", ddiff, m)
        dt = -np.einsum("be,bde->bd", ddiff.sum(axis=1), m)
        dm = np.einsum("bkd,bke->bde", h, ddiff) - np.einsum("bd,be->bde", t[:, 0], ddiff.sum(axis=1))
        np.add.at(grads["transfer"], batch.rels, dm)
    else:
        dh = ddiff
        dt = -dr
    np.add.at(grads["entity"], hi.ravel(), dh.reshape(-1, dh.shape[-1]))
    np.add.at(grads["entity"], batch.tails, dt)
    np.add.at(grads["relation"], batch.rels, dr)
    return nll


def attribute_nll(table: EmbeddingTable, batch: AttributeBatch, grads: Params | None = None) -> float:
    """Summed negative log-likelihood of an attribute batch over the full value range."""
    a = batch.attribute
    e = table.entity_vecs[batch.entities]         # (B, d)
    w, b, vals = table.attr_w[a], table.attr_b[a], table.attr_value_vecs[a]
    y = np.tanh(e @ w + b)
    diff = y[:, None, :] - vals[None]             # (B, V, d)
    scores = -_norm(diff, table.norm) + table.b2
    lp = log_softmax(scores)
    rows = np.arange(len(batch.values))
    nll = -float(lp[rows, batch.values].sum())
    if grads is None:
        return nll
    ds = np.exp(lp)
    ds[rows, batch.values] -= 1.0
    ddiff = -ds[..., None] * _norm_grad(diff, table.norm)
    dy = ddiff.sum(axis=1)
    grads[f"value:{a}"] -= ddiff.sum(axis=0)
    dz = dy * (1.0 - y * y)
    grads[f"W:{a}"] += e.T @ dz
    grads[f"b:{a}"] += dz.sum(axis=0)
    np.add.at(grads["entity"], batch.entities, dz @ w.T)
    return nll


def cooccurrence_penalty(table: EmbeddingTable, store: TripleStore, weight: float,
                         grads: Params | None = None) -> float:
    """weight * sum p(a,b) ||mean(E_a) - mean(E_b)||^2 over co-occurrence triples."""
    if weight == 0.0:
        return 0.0
    total = 0.0
    for c in store.cooccurrence:
        if c.attr_a not in table.attr_value_vecs or c.attr_b not in table.attr_value_vecs:
            continue
        va, vb = table.attr_value_vecs[c.attr_a], table.attr_value_vecs[c.attr_b]
        delta = va.mean(axis=0) - vb.mean(axis=0)
        total += weight * c.probability * float(delta @ delta)
        if grads is not None:
            g = 2.0 * weight * c.probability * delta
            grads[f"value:{c.attr_a}"] += g / len(va)
            grads[f"value:{c.attr_b}"] -= g / len(vb)
    return total


# -- training ----------------------------------------------------------------

@dataclass
class KrearConfig:
    dim: int = 20
    scorer: str = "transe"
    norm: str = "L1"
    negatives: int = 10
    epochs: int = 100
    lr: float = 0.05
    batch_size: int = 256
    seed: int = 0
    cooc_reg_weight: float = 0.0
    b1: float = B1_DEFAULT
    b2: float = B2_DEFAULT
    # complete section-to-time linkage carries no information and its softmax
    # spans every time id, so it is left out of the objective by default
    exclude_attributes: tuple[str, ...] = (OBSERVED_AT,)


@dataclass
class KrearResult:
    table: EmbeddingTable
    history: list[float] = field(default_factory=list)


class _HeadSampler:
    """Vectorized head corruption: uniform over same-kind entities, never the
    original head or the tail, and never a known positive triple."""

    def __init__(self, store: TripleStore, table: EmbeddingTable, max_tries: int = 100):
        n_e = len(table.entities)
        self.n_e = n_e
        self.n_r = max(len(table.relations), 1)
        kind = np.array([e.startswith("time:") for e in table.entities])
        self.pools = {k: np.flatnonzero(kind == k) for k in (False, True)}
        self.kind = kind
        keys = [self._key(table.entity_index[t.head], table.relation_index[t.relation], table.entity_index[t.tail])
                for t in store.relation_triples]
        self.positive = np.unique(np.array(keys, dtype=np.int64))
        self.max_tries = max_tries

    def _key(self, h, r, t):
        return (np.asarray(h, dtype=np.int64) * self.n_r + r) * self.n_e + t

    def sample(self, heads, rels, tails, k, rng):
        out = np.empty((len(heads), k), dtype=np.int64)
        for kind, pool in self.pools.items():
            rows = np.flatnonzero(self.kind[heads] == kind)
            if rows.size == 0:
                continue
            if pool.size < 2:
                raise SamplingError("need at least 2 candidate heads of the same kind")
            todo = np.ones((rows.size, k), dtype=bool)
            cand = np.empty((rows.size, k), dtype=np.int64)
            for _ in range(self.max_tries):
                n = int(todo.sum())
                if n == 0:
                    break
                cand[todo] = pool[rng.integers(pool.size, size=n)]
                h = heads[rows][:, None]
                t = tails[rows][:, None]
                r = rels[rows][:, None]
                bad = (cand == h) | (cand == t) | np.isin(self._key(cand, r, t), self.positive)
                todo = bad
            if todo.any():
                raise SamplingError(f"no valid head corruption after {self.max_tries} draws")
            out[rows] = cand
        return out


def train_krear(store: TripleStore, config: KrearConfig | None = None) -> KrearResult:
    cfg = config or KrearConfig()
    attrs = [a for a in store.attributes if a not in cfg.exclude_attributes]
    att_triples = [t for t in store.attribute_triples if t.attribute in attrs]
    if not store.relation_triples or not att_triples:
        raise KGError("training needs both relation and attribute triples")
    table = init_table(store, cfg.dim, cfg.scorer, cfg.norm, cfg.b1, cfg.b2, cfg.seed, attributes=attrs)
    rng = np.random.default_rng(cfg.seed + 1)
    history: list[float] = []
    if cfg.epochs <= 0:
        return KrearResult(table, history)

    ei, ri = table.entity_index, table.relation_index
    rh = np.array([ei[t.head] for t in store.relation_triples])
    rr = np.array([ri[t.relation] for t in store.relation_triples])
    rt = np.array([ei[t.tail] for t in store.relation_triples])
    attr_code = {a: k for k, a in enumerate(attrs)}
    ae = np.array([ei[t.entity] for t in att_triples])
    aa = np.array([attr_code[t.attribute] for t in att_triples])
    av = np.array([table.value_index[t.attribute][t.value] for t in att_triples])
    sampler = _HeadSampler(store, table)

    n_steps = max(1, math.ceil(max(len(rh), len(ae)) / cfg.batch_size))
    opt = Adam(lr=cfg.lr)
    params = table.params()
    for epoch in range(cfg.epochs):
        rperm = rng.permutation(len(rh))
        aperm = rng.permutation(len(ae))
        total = 0.0
        for rb, ab in zip(np.array_split(rperm, n_steps), np.array_split(aperm, n_steps)):
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            loss = 0.0
            if rb.size:
                negs = sampler.sample(rh[rb], rr[rb], rt[rb], cfg.negatives, rng)
                batch = RelationBatch(rh[rb], rr[rb], rt[rb], negs)
                loss += _scaled(relation_nll, table, batch, grads, rb.size)
            if ab.size:
                sub = {k: np.zeros_like(v) for k, v in grads.items()}
                att_loss = 0.0
                for code in np.unique(aa[ab]):
                    sel = ab[aa[ab] == code]
                    att_loss += attribute_nll(table, AttributeBatch(attrs[code], ae[sel], av[sel]), sub)
                for k in grads:
                    grads[k] += sub[k] / ab.size
                loss += att_loss / ab.size
            loss += cooccurrence_penalty(table, store, cfg.cooc_reg_weight, grads)
            if not np.isfinite(loss):
                raise TrainingError(f"embedding loss diverged at epoch {epoch}")
            opt.step(params, grads)
            total += loss
        params["entity"][:] = _l2_rows(params["entity"])
        params["relation"][:] = _l2_rows(params["relation"])
        history.append(total / n_steps)
        if not np.isfinite(history[-1]):
            raise TrainingError(f"embedding loss diverged at epoch {epoch}")
    table.set_params(params)
    return KrearResult(table, history)


def _scaled(fn, table, batch, grads, n):
    sub = {k: np.zeros_like(v) for k, v in grads.items()}
    loss = fn(table, batch, sub)
    for k in grads:
        grads[k] += sub[k] / n
    return loss / n


def joint_nll(table: EmbeddingTable, rel_batches: Sequence[RelationBatch],
              att_batches: Sequence[AttributeBatch], store: TripleStore | None = None,
              cooc_weight: float = 0.0) -> tuple[float, Params]:
    """Summed negative log-likelihood with its exact gradient over ``table.params()``."""
    grads = {k: np.zeros_like(v) for k, v in table.params().items()}
    loss = sum(relation_nll(table, b, grads) for b in rel_batches)
    loss += sum(attribute_nll(table, b, grads) for b in att_batches)
    if store is not None:
        loss += cooccurrence_penalty(table, store, cooc_weight, grads)
    return loss, grads


# -- evaluation --------------------------------------------------------------

def tail_rank(table: EmbeddingTable, t: RelationTriple) -> int:
    """Raw rank of the true tail among all entities (1 = best)."""
    h, r = table.entity_index[t.head], table.relation_index[t.relation]
    scores = table.relation_scores(h, r, np.arange(len(table.entities)))
    true = scores[table.entity_index[t.tail]]
    return 1 + int(np.sum(scores > true))


def mean_tail_rank(table: EmbeddingTable, triples: Sequence[RelationTriple]) -> float:
    return float(np.mean([tail_rank(table, t) for t in triples]))


def attribute_accuracy(table: EmbeddingTable, triples: Sequence[AttributeTriple]) -> float:
    hits = 0
    for t in triples:
        s = table.attribute_scores(table.entity_index[t.entity], t.attribute)
        hits += int(np.argmax(s)) == table.value_index[t.attribute][t.value]
    return hits / len(triples)


# -- knowledge vectors -------------------------------------------------------

@dataclass
class KnowledgeVectors:
    """Static vectors per road section and dynamic vectors per (time, section)."""
    e_s: np.ndarray          # (n, d_s)
    e_d: np.ndarray          # (T, n, d_d)
    time_index: list

    def __post_init__(self):
        if self.e_d.shape[0] != len(self.time_index):
            raise ValueError("e_d does not cover the time index")
        if self.e_d.shape[1] != self.e_s.shape[0]:
            raise ValueError("e_s and e_d disagree on the node count")
        if not (np.isfinite(self.e_s).all() and np.isfinite(self.e_d).all()):
            raise ValueError("knowledge vectors must be finite")

    @property
    def n_nodes(self) -> int:
        return self.e_s.shape[0]

    @property
    def d_s(self) -> int:
        return self.e_s.shape[1]

    @property
    def d_d(self) -> int:
        return self.e_d.shape[2]

    def select(self, static: bool = True, dynamic: bool = True) -> "KnowledgeVectors":
        """Ablated copy: drop the static and/or dynamic part (zero-width)."""
        n, T = self.n_nodes, len(self.time_index)
        e_s = self.e_s if static else np.zeros((n, 0))
        e_d = self.e_d if dynamic else np.broadcast_to(np.zeros((1, 1, 0)), (T, n, 0))
        return KnowledgeVectors(e_s, e_d, self.time_index)

    @classmethod
    def empty(cls, n_nodes: int, n_steps: int) -> "KnowledgeVectors":
        return cls(np.zeros((n_nodes, 0)), np.broadcast_to(np.zeros((1, 1, 0)), (n_steps, n_nodes, 0)),
                   list(range(n_steps)))


def extract_knowledge_vectors(table: EmbeddingTable, store: TripleStore, time_index: Sequence,
                              sections: Sequence[str] | None = None,
                              weather_attribute: str = WEATHER, unit_values: bool = True) -> KnowledgeVectors:
    """e_s: each section's entity vector; e_d[t]: the embedding of the weather
    class active at time t, shared by all sections.

    Entity vectors are unit length after training; ``unit_values`` rescales the
    value vectors to unit length too so neither block dominates the fusion input.
    """
    sections = list(sections) if sections is not None else store.section_entities()
    try:
        e_s = table.entity_vecs[[table.entity_index[s] for s in sections]].copy()
    except KeyError as exc:
        raise KGError(f"section {exc.args[0]!r} has no embedding") from None
    values = table.attr_value_vecs[weather_attribute]
    vindex = table.value_index[weather_attribute]
    rows = []
    for t in time_index:
        cls = store.attribute_of(time_entity(t), weather_attribute)
        if cls is None:
            raise KGError(f"no weather recorded for time {t!r}")
        rows.append(vindex[cls])
    if unit_values:
        norms = np.linalg.norm(values, axis=1, keepdims=True)
        values = values / np.where(norms > 0, norms, 1.0)
    per_time = values[np.array(rows, dtype=np.int64)]                 # (T, d)
    e_d = np.broadcast_to(per_time[:, None, :], (len(rows), len(sections), per_time.shape[1]))
    return KnowledgeVectors(e_s, e_d, list(time_index))


# -- serialization -----------------------------------------------------------

def save_table(table: EmbeddingTable, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_vectors(path / "entities.csv", ["id"], [[e] for e in table.entities], table.entity_vecs)
    _write_vectors(path / "relations.csv", ["id"], [[r] for r in table.relations], table.relation_vecs)
    keys, vecs = [], []
    for a, vals in table.attributes.items():
        keys += [[a, v] for v in vals]
        vecs.append(table.attr_value_vecs[a])
    _write_vectors(path / "attr_values.csv", ["attribute", "value"], keys,
                   np.vstack(vecs) if vecs else np.zeros((0, table.dim)))
    meta = {
        "dim": table.dim, "scorer": table.scorer, "norm": table.norm, "b1": table.b1, "b2": table.b2,
        "seed": table.seed,
        "attributes": table.attributes,
        "attr_w": {a: w.tolist() for a, w in table.attr_w.items()},
        "attr_b": {a: b.tolist() for a, b in table.attr_b.items()},
        "transfer_mats": None if table.transfer_mats is None else table.transfer_mats.tolist(),
    }
    (path / "meta.json").write_text(json.dumps(meta), encoding="utf-8")


def _write_vectors(path, head, keys, vecs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head + [f"x{k}" for k in range(vecs.shape[1])])
        for key, row in zip(keys, vecs):
            w.writerow(key + [repr(float(x)) for x in row])


def _read_vectors(path, n_keys):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    keys = [r[:n_keys] for r in rows]
    return keys, np.array([[float(x) for x in r[n_keys:]] for r in rows], dtype=np.float64)


def load_table(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    d = meta["dim"]
    ek, ev = _read_vectors(path / "entities.csv", 1)
    rk, rv = _read_vectors(path / "relations.csv", 1)
    vk, vv = _read_vectors(path / "attr_values.csv", 2)
    attributes = {a: list(v) for a, v in meta["attributes"].items()}
    values, pos = {}, 0
    for a, vals in attributes.items():
        values[a] = vv[pos:pos + len(vals)].reshape(len(vals), d)
        pos += len(vals)
    tm = meta["transfer_mats"]
    return EmbeddingTable([k[0] for k in ek], [k[0] for k in rk], attributes,
                          ev.reshape(len(ek), d), rv.reshape(len(rk), d), values,
                          {a: np.array(w, dtype=np.float64) for a, w in meta["attr_w"].items()},
                          {a: np.array(b, dtype=np.float64) for a, b in meta["attr_b"].items()},
                          None if tm is None else np.array(tm, dtype=np.float64),
                          meta["scorer"], meta["norm"], meta["b1"], meta["b2"], meta["seed"])


__all__ = [
    "EmbeddingTable", "KnowledgeVectors", "KrearConfig", "KrearResult", "TrainingError",
    "RelationBatch", "AttributeBatch",
    "score_relation_transe", "score_relation_transr", "score_attribute", "log_softmax",
    "init_table", "relation_nll", "attribute_nll", "cooccurrence_penalty", "joint_nll",
    "train_krear", "tail_rank", "mean_tail_rank", "attribute_accuracy",
    "extract_knowledge_vectors", "save_table", "load_table", "flatten", "unflatten",
]
