"""City knowledge graph: relation, attribute and co-occurrence triples.

The store keeps three collections with their vocabularies:

* relation triples ``(head, relation, tail)`` between road sections,
* attribute triples ``(entity, attribute, value)`` with a finite declared
  value range per attribute,
* co-occurrence triples ``(attr_a, attr_b, probability)`` between POI
  categories.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from ..graph import RoadGraph

ADJ = "adj"
ADJ2 = "adj2"
OBSERVED_AT = "observed_at"
WEATHER = "weather"

WEATHER_CLASSES = ("sunny", "cloudy", "foggy", "light_rain", "heavy_rain")
POI_CATEGORIES = (
    "food_services",
    "enterprises",
    "shopping_services",
    "transportation_services",
    "education_services",
    "living_services",
    "medical_services",
    "accommodation_services",
    "others",
)
# ordinal POI count classes: 0, 1-5, 6-15, 16-50, >50
POI_BUCKETS = ("0", "1-5", "6-15", "16-50", ">50")
_BUCKET_UPPER = (0, 5, 15, 50)

DEFAULT_RELATIONS = (ADJ, ADJ2)


class KGError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class RelationTriple(NamedTuple):
    head: str
    relation: str
    tail: str


class AttributeTriple(NamedTuple):
    entity: str
    attribute: str
    value: str


class CooccurrenceTriple(NamedTuple):
    attr_a: str
    attr_b: str
    probability: float


def poi_bucket(count: int) -> str:
    if count < 0:
        raise KGError(f"negative POI count {count}")
    for label, upper in zip(POI_BUCKETS, _BUCKET_UPPER):
        if count <= upper:
            return label
    return POI_BUCKETS[-1]


def time_entity(time_id) -> str:
    return f"time:{time_id}"


@dataclass
class TripleStore:
    entities: list[str]
    relations: list[str]
    attributes: dict[str, list[str]]
    relation_triples: list[RelationTriple] = field(default_factory=list)
    attribute_triples: list[AttributeTriple] = field(default_factory=list)
    cooccurrence: list[CooccurrenceTriple] = field(default_factory=list)

    def __post_init__(self):
        self.entity_index = {e: k for k, e in enumerate(self.entities)}
        self.relation_index = {r: k for k, r in enumerate(self.relations)}
        self.value_index = {a: {v: k for k, v in enumerate(vals)} for a, vals in self.attributes.items()}
        if len(self.entity_index) != len(self.entities):
            raise KGError("duplicate entity ids")
        self.validate()
        self.positive = set(self.relation_triples)
        self.by_head: dict[str, list[RelationTriple]] = {}
        self.by_tail: dict[str, list[RelationTriple]] = {}
        for t in self.relation_triples:
            self.by_head.setdefault(t.head, []).append(t)
            self.by_tail.setdefault(t.tail, []).append(t)
        self.by_entity: dict[str, list[AttributeTriple]] = {}
        for t in self.attribute_triples:
            self.by_entity.setdefault(t.entity, []).append(t)

    def validate(self) -> None:
        for t in self.relation_triples:
            if t.head not in self.entity_index or t.tail not in self.entity_index:
                raise KGError(f"unknown entity in {t}")
            if t.relation not in self.relation_index:
                raise KGError(f"unknown relation in {t}")
            if t.relation in (ADJ, ADJ2) and t.head == t.tail:
                raise KGError(f"self adjacency {t}")
        for t in self.attribute_triples:
            if t.entity not in self.entity_index:
                raise KGError(f"unknown entity in {t}")
            if t.value not in self.value_index.get(t.attribute, {}):
                raise KGError(f"value outside declared range in {t}")
        seen = set()
        for c in self.cooccurrence:
            if c.attr_a not in self.attributes or c.attr_b not in self.attributes:
                raise KGError(f"unknown attribute in {c}")
            if not 0.0 <= c.probability <= 1.0:
                raise KGError(f"probability out of [0, 1] in {c}")
            key = frozenset((c.attr_a, c.attr_b))
            if key in seen:
                raise KGError(f"duplicate co-occurrence pair {c.attr_a}, {c.attr_b}")
            seen.add(key)

    def __eq__(self, other):
        if not isinstance(other, TripleStore):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self.attributes == other.attributes
                and self.relation_triples == other.relation_triples
                and self.attribute_triples == other.attribute_triples
                and self.cooccurrence == other.cooccurrence)

    def cooccurrence_of(self, a: str, b: str) -> float:
        key = {a, b}
        for c in self.cooccurrence:
            if {c.attr_a, c.attr_b} == key:
                return c.probability
        raise KeyError((a, b))

    def attribute_of(self, entity: str, attribute: str) -> str | None:
        for t in self.by_entity.get(entity, ()):
            if t.attribute == attribute:
                return t.value
        return None

    def section_entities(self) -> list[str]:
        return [e for e in self.entities if not e.startswith("time:")]


def build_ckg(g: RoadGraph, poi_counts: np.ndarray | Mapping | None = None,
              weather_series: Mapping | Sequence[str] | None = None,
              time_index: Sequence | None = None, *,
              categories: Sequence[str] = POI_CATEGORIES,
              weather_classes: Sequence[str] = WEATHER_CLASSES,
              include_adj2: bool = False, link_sections: bool = True) -> TripleStore:
    """Assemble the city knowledge graph from a road graph and its attributes.

    ``poi_counts`` is either an ``n x len(categories)`` count array or a mapping
    ``node index -> {category: count}``. ``weather_series`` maps each time id in
    ``time_index`` to a weather class.
    """
    sections = list(g.node_ids)
    time_index = list(time_index) if time_index is not None else []
    entities = sections + [time_entity(t) for t in time_index]
    relations = [ADJ, ADJ2] if include_adj2 else [ADJ]
    attributes: dict[str, list[str]] = {}
    rel_triples = [RelationTriple(sections[i], ADJ, sections[j]) for i, j in g.edges()]
    if include_adj2:
        a = g.adjacency.astype(np.int64)
        two = (a @ a > 0) & (a == 0)
        np.fill_diagonal(two, False)
        i2, j2 = np.nonzero(np.triu(two, k=1))
        rel_triples += [RelationTriple(sections[i], ADJ2, sections[j]) for i, j in zip(i2, j2)]

    att_triples: list[AttributeTriple] = []
    cooc: list[CooccurrenceTriple] = []
    counts = _poi_table(poi_counts, g.n_nodes, categories)
    if counts is not None:
        for c in categories:
            attributes[c] = list(POI_BUCKETS)
        for i, sec in enumerate(sections):
            for k, c in enumerate(categories):
                att_triples.append(AttributeTriple(sec, c, poi_bucket(int(counts[i, k]))))
        present = counts > 0
        for ka, kb in combinations(range(len(categories)), 2):
            p = float(np.mean(present[:, ka] & present[:, kb]))
            cooc.append(CooccurrenceTriple(categories[ka], categories[kb], p))

    if time_index:
        if weather_series is None:
            raise KGError("time_index given without a weather series")
        attributes[WEATHER] = list(weather_classes)
        for t in time_index:
            try:
                cls = weather_series[t]
            except (KeyError, IndexError):
                raise KGError(f"weather series does not cover time {t!r}") from None
            if cls not in weather_classes:
                raise KGError(f"unknown weather class {cls!r} at time {t!r}")
            att_triples.append(AttributeTriple(time_entity(t), WEATHER, cls))
        if link_sections:
            attributes[OBSERVED_AT] = [time_entity(t) for t in time_index]
            for sec in sections:
                for t in time_index:
                    att_triples.append(AttributeTriple(sec, OBSERVED_AT, time_entity(t)))

    return TripleStore(entities, relations, attributes, rel_triples, att_triples, cooc)


def _poi_table(poi_counts, n, categories):
    if poi_counts is None:
        return None
    if isinstance(poi_counts, Mapping):
        table = np.zeros((n, len(categories)), dtype=np.int64)
        col = {c: k for k, c in enumerate(categories)}
        for node, row in poi_counts.items():
            for c, v in row.items():
                if c not in col:
                    raise KGError(f"unknown POI category {c!r}")
                table[int(node), col[c]] = v
        return table
    table = np.asarray(poi_counts)
    if table.size == 0:
        return None
    if table.shape != (n, len(categories)):
        raise KGError(f"POI table shape {table.shape} != ({n}, {len(categories)})")
    return table


# -- negative sampling -------------------------------------------------------

def negative_sample_relation(t: RelationTriple, store: TripleStore, rng: np.random.Generator,
                             max_tries: int = 100) -> RelationTriple:
    """Corrupt the head with a uniformly drawn entity of the same kind."""
    pool = _same_kind(store, t.head)
    if len(pool) < 2:
        raise SamplingError(f"need at least 2 candidate heads, have {len(pool)}")
    for _ in range(max_tries):
        h = pool[rng.integers(len(pool))]
        if h == t.head or h == t.tail:
            continue
        cand = RelationTriple(h, t.relation, t.tail)
        if cand not in store.positive:
            return cand
    raise SamplingError(f"no valid corruption of {t} after {max_tries} draws")


def negative_sample_attribute(t: AttributeTriple, store: TripleStore,
                              rng: np.random.Generator) -> AttributeTriple:
    values = store.attributes[t.attribute]
    if len(values) < 2:
        raise SamplingError(f"attribute {t.attribute!r} has a singleton value range")
    k = store.value_index[t.attribute][t.value]
    j = int(rng.integers(len(values) - 1))
    if j >= k:
        j += 1
    return AttributeTriple(t.entity, t.attribute, values[j])


def _same_kind(store: TripleStore, entity: str) -> list[str]:
    cache = store.__dict__.setdefault("_kind_cache", {})
    kind = entity.startswith("time:")
    if kind not in cache:
        cache[kind] = [e for e in store.entities if e.startswith("time:") == kind]
    return cache[kind]


# -- serialization -----------------------------------------------------------

REL_FILE, ATT_FILE, COOC_FILE, VOCAB_FILE = "relations.csv", "attributes.csv", "cooccurrence.csv", "vocab.json"


class ParseError(KGError):
    pass


def save_store(store: TripleStore, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write(path / REL_FILE, ("head", "relation", "tail"), store.relation_triples)
    _write(path / ATT_FILE, ("entity", "attribute", "value"), store.attribute_triples)
    _write(path / COOC_FILE, ("attr_a", "attr_b", "probability"),
           [(c.attr_a, c.attr_b, repr(c.probability)) for c in store.cooccurrence])
    vocab = {"entities": store.entities, "relations": store.relations, "attributes": store.attributes}
    (path / VOCAB_FILE).write_text(json.dumps(vocab, indent=1), encoding="utf-8")


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def load_store(path: str | Path) -> TripleStore:
    """Read a store directory. Without ``vocab.json`` the vocabularies are
    inferred from the rows and relations default to adj/adj2."""
    path = Path(path)
    vocab = None
    if (path / VOCAB_FILE).exists():
        vocab = json.loads((path / VOCAB_FILE).read_text(encoding="utf-8"))
    relations = vocab["relations"] if vocab else list(DEFAULT_RELATIONS)
    rel_rows = _read(path / REL_FILE, ("head", "relation", "tail"))
    att_rows = _read(path / ATT_FILE, ("entity", "attribute", "value"))
    cooc_rows = _read(path / COOC_FILE, ("attr_a", "attr_b", "probability"))

    rel_triples = []
    for lineno, (h, r, t) in rel_rows:
        if r not in relations:
            raise ParseError(f"{REL_FILE}:{lineno}: unknown relation {r!r} in row {h},{r},{t}")
        rel_triples.append(RelationTriple(h, r, t))
    att_triples = [AttributeTriple(*row) for _, row in att_rows]
    cooc = []
    for lineno, (a, b, p) in cooc_rows:
        try:
            cooc.append(CooccurrenceTriple(a, b, float(p)))
        except ValueError:
            raise ParseError(f"{COOC_FILE}:{lineno}: bad probability {p!r}") from None

    if vocab:
        entities, attributes = vocab["entities"], {a: list(v) for a, v in vocab["attributes"].items()}
    else:
        entities, attributes = [], {}
        seen = set()
        for e in [x for t in rel_triples for x in (t.head, t.tail)] + [t.entity for t in att_triples]:
            if e not in seen:
                seen.add(e)
                entities.append(e)
        for t in att_triples:
            vals = attributes.setdefault(t.attribute, [])
            if t.value not in vals:
                vals.append(t.value)
        for c in cooc:
            attributes.setdefault(c.attr_a, [])
            attributes.setdefault(c.attr_b, [])
    try:
        return TripleStore(entities, relations, attributes, rel_triples, att_triples, cooc)
    except KGError as exc:
        raise ParseError(str(exc)) from None


def _read(path: Path, header):
    if not path.exists():
        return []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return []
        if tuple(first) != header:
            raise ParseError(f"{path.name}:1: expected header {','.join(header)}, got {','.join(first)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or any(not x for x in row):
                raise ParseError(f"{path.name}:{lineno}: malformed row {','.join(row)!r}")
            rows.append((lineno, tuple(row)))
    return rows
