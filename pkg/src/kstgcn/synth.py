"""Synthetic city: road network, POIs, weather process and a traffic simulator
whose speeds depend on those attributes, plus noise perturbation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import RoadGraph, build_graph, read_edge_csv, write_edge_csv
from .gru import SpeedTensor
from .kg.store import POI_CATEGORIES, WEATHER_CLASSES

STEPS_PER_DAY = 96
SPEED_MIN, SPEED_MAX = 5.0, 80.0

# km/h lost per weather class at popularity 1
WEATHER_PENALTY = {"sunny": 0.0, "cloudy": 1.0, "foggy": 4.0, "light_rain": 6.0, "heavy_rain": 12.0}
# background climate used for the off-diagonal transition mass
CLIMATE = (0.40, 0.30, 0.10, 0.15, 0.05)
# mean POI count per category
POI_MEANS = (12.0, 8.0, 6.0, 3.0, 2.0, 6.0, 2.0, 3.0, 4.0)
# equal weights scaled so the expected load is 1
POI_WEIGHTS = (1.0 / sum(POI_MEANS),) * len(POI_MEANS)


class ScenarioError(ValueError):
    pass


@dataclass
class EffectConfig:
    base_speed: float = 50.0
    diurnal_amplitude: float = 8.0
    rush_amplitude: float = 20.0       # km/h per unit of POI load at the rush peak
    weather_scale: float = 1.0         # multiplies WEATHER_PENALTY
    neighbor_coupling: float = 0.3
    noise_std: float = 2.0
    poi_weights: tuple[float, ...] = POI_WEIGHTS
    rush_hours: tuple[float, ...] = (8.0, 18.0)
    rush_width_hours: float = 1.0

    @classmethod
    def zeros(cls) -> "EffectConfig":
        """All attribute effects and coupling off; sinusoid plus noise remains."""
        return cls(rush_amplitude=0.0, weather_scale=0.0, neighbor_coupling=0.0)

    @classmethod
    def no_knowledge_signal(cls, **kw) -> "EffectConfig":
        """POI and weather effects off; network coupling kept."""
        return cls(rush_amplitude=0.0, weather_scale=0.0, **kw)


@dataclass
class ScenarioParams:
    n_nodes: int = 156
    avg_degree: float = 3.0
    n_steps: int = 31 * STEPS_PER_DAY
    seed: int = 0
    sticky: float = 0.9
    effects: EffectConfig = field(default_factory=EffectConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioParams":
        d = dict(d)
        eff = dict(d.pop("effects", {}))
        for k in ("poi_weights", "rush_hours"):
            if k in eff:
                eff[k] = tuple(eff[k])
        return cls(effects=EffectConfig(**eff), **d)


@dataclass
class CityScenario:
    graph: RoadGraph
    poi_counts: np.ndarray        # (n, 9)
    weather: list[str]            # class per step
    speeds: SpeedTensor
    params: ScenarioParams


# -- network -----------------------------------------------------------------

def generate_network(n: int, avg_degree: float = 3.0, seed: int = 0) -> RoadGraph:
    """Connected random geometric graph on the unit square.

    The connection radius targets ``avg_degree``; components are then joined
    by their closest node pairs.
    """
    if n < 2:
        raise ScenarioError("need at least 2 nodes")
    if not 1.0 <= avg_degree <= n - 1:
        raise ScenarioError(f"average degree {avg_degree} infeasible for {n} nodes")
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 2))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    # pick the radius giving exactly round(n * avg_degree / 2) shortest pairs
    iu = np.triu_indices(n, k=1)
    target = int(round(n * avg_degree / 2))
    order = np.argsort(dist[iu], kind="stable")[:target]
    adj = np.zeros((n, n), dtype=bool)
    adj[iu[0][order], iu[1][order]] = True
    adj |= adj.T
    while True:
        k, labels = connected_components(adj, directed=False)
        if k == 1:
            break
        # join component 0 to its nearest other component
        inside = labels == 0
        sub = dist[np.ix_(inside, ~inside)]
        a, b = np.unravel_index(np.argmin(sub), sub.shape)
        i, j = np.flatnonzero(inside)[a], np.flatnonzero(~inside)[b]
        adj[i, j] = adj[j, i] = True
    ii, jj = np.nonzero(np.triu(adj, k=1))
    return build_graph(n, zip(ii.tolist(), jj.tolist()))


# -- attributes --------------------------------------------------------------

def weather_transition_matrix(sticky: float = 0.9, climate=CLIMATE) -> np.ndarray:
    """Self-transition ``sticky``; the rest spread in proportion to ``climate``."""
    climate = np.asarray(climate, dtype=np.float64)
    k = climate.size
    P = np.zeros((k, k))
    for i in range(k):
        off = climate.copy()
        off[i] = 0.0
        P[i] = (1.0 - sticky) * off / off.sum()
        P[i, i] = sticky
    return P


def generate_attributes(graph: RoadGraph, n_steps: int, seed: int = 0, sticky: float = 0.9):
    """POI counts (n, 9) from a heavy-tailed negative binomial and a weather
    class sequence from a sticky first-order Markov chain."""
    rng = np.random.default_rng([seed, 1])
    means = np.asarray(POI_MEANS)
    shape = 0.6                               # dispersion; small -> heavy tail
    prob = shape / (shape + means)
    poi = rng.negative_binomial(shape, prob, size=(graph.n_nodes, means.size))
    P = weather_transition_matrix(sticky)
    cum = np.cumsum(P, axis=1)
    state = int(rng.choice(len(WEATHER_CLASSES), p=np.asarray(CLIMATE)))
    draws = rng.random(n_steps)
    seq = np.empty(n_steps, dtype=np.int64)
    for t in range(n_steps):
        seq[t] = state
        state = min(int(np.searchsorted(cum[state], draws[t], side="right")), len(WEATHER_CLASSES) - 1)
    return poi, [WEATHER_CLASSES[s] for s in seq]


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


# -- traffic -----------------------------------------------------------------

def poi_load(poi_counts: np.ndarray, weights=POI_WEIGHTS) -> np.ndarray:
    """Weighted POI count per node."""
    return np.asarray(poi_counts, dtype=np.float64) @ np.asarray(weights, dtype=np.float64)


def popularity(load: np.ndarray) -> np.ndarray:
    """Weather sensitivity per node: increasing in POI load, mean 1."""
    m = load.mean()
    return load / m if m > 0 else np.ones_like(load)


def rush_factor(t: np.ndarray, hours=(8.0, 18.0), width_hours: float = 1.0) -> np.ndarray:
    """Sum of Gaussian bumps (peak 1) at the rush hours, periodic per day."""
    hour = (np.asarray(t) % STEPS_PER_DAY) * 24.0 / STEPS_PER_DAY
    out = np.zeros(hour.shape)
    for c in hours:
        d = np.abs(hour - c)
        d = np.minimum(d, 24.0 - d)
        out += np.exp(-0.5 * (d / width_hours) ** 2)
    return out


def diurnal(t: np.ndarray, base: float, amplitude: float) -> np.ndarray:
    """Free-flow speed: fastest around 03:00, slowest around 15:00."""
    return base + amplitude * np.cos(2.0 * np.pi * (np.asarray(t) - 12) / STEPS_PER_DAY)


def expected_speed(graph: RoadGraph, poi_counts, weather, effects: EffectConfig) -> np.ndarray:
    """Deterministic part of the speed field (T, n), before coupling and noise."""
    T = len(weather)
    t = np.arange(T)
    load = poi_load(poi_counts, effects.poi_weights)
    pop = popularity(load)
    pen = np.array([WEATHER_PENALTY[w] for w in weather]) * effects.weather_scale
    base = diurnal(t, effects.base_speed, effects.diurnal_amplitude)
    rush = rush_factor(t, effects.rush_hours, effects.rush_width_hours)
    return (base[:, None] - effects.rush_amplitude * rush[:, None] * load[None, :]
            - pen[:, None] * pop[None, :])


def simulate_traffic(graph: RoadGraph, poi_counts, weather, effects: EffectConfig | None = None,
                     seed: int = 0) -> SpeedTensor:
    """Speeds (km/h) = expected field + 0.3 x neighbors' previous deviation + noise,
    clipped to [5, 80]."""
    eff = effects or EffectConfig()
    mean = expected_speed(graph, poi_counts, weather, eff)
    T, n = mean.shape
    rng = np.random.default_rng([seed, 2])
    noise = rng.normal(0.0, eff.noise_std, size=(T, n))
    deg = graph.degrees().astype(np.float64)
    avg = np.divide(graph.adjacency, deg[:, None], out=np.zeros((n, n)), where=deg[:, None] > 0)
    dev = np.zeros((T, n))
    prev = np.zeros(n)
    for t in range(T):
        prev = eff.neighbor_coupling * (avg @ prev) + noise[t]
        dev[t] = prev
    speeds = np.clip(mean + dev, SPEED_MIN, SPEED_MAX)
    return SpeedTensor(speeds, list(graph.node_ids))


def generate_scenario(params: ScenarioParams | None = None) -> CityScenario:
    prm = params or ScenarioParams()
    if prm.n_steps < 2:
        raise ScenarioError("need at least 2 time steps")
    g = generate_network(prm.n_nodes, prm.avg_degree, prm.seed)
    poi, weather = generate_attributes(g, prm.n_steps, prm.seed, prm.sticky)
    speeds = simulate_traffic(g, poi, weather, prm.effects, prm.seed)
    return CityScenario(g, poi, weather, speeds, prm)


# -- perturbation ------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    kind: str          # "gaussian" or "poisson"
    level: float       # sigma or lambda, in speed units (km/h)

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ScenarioError(f"unknown noise kind {self.kind!r}")
        if not self.level > 0:
            raise ScenarioError("noise level must be positive")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        kind, _, level = text.partition(":")
        return cls(kind, float(level))


def noise_draws(shape, spec: NoiseSpec, seed: int = 0) -> np.ndarray:
    """Uncentered draws: N(0, sigma^2) or Poisson(lambda)."""
    rng = np.random.default_rng([seed, 3])
    if spec.kind == "gaussian":
        return spec.level * rng.standard_normal(shape)
    return rng.poisson(spec.level, size=shape).astype(np.float64)


def perturb(speeds: SpeedTensor, spec: NoiseSpec, seed: int = 0) -> SpeedTensor:
    """Add zero-mean noise in speed units; Poisson draws are centered by
    subtracting lambda. Normalized tensors receive the noise divided by their span."""
    noise = noise_draws(speeds.values.shape, spec, seed)
    if spec.kind == "poisson":
        noise -= spec.level
    return SpeedTensor(speeds.values + noise / speeds.span, list(speeds.node_ids), list(speeds.time_ids),
                       speeds.interval_minutes, speeds.bounds)


# -- scenario directory ------------------------------------------------------

def save_scenario(s: CityScenario, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_edge_csv(s.graph, path / "edges.csv", path / "nodes.csv")
    with open(path / "poi.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "category", "count"])
        for i, nid in enumerate(s.graph.node_ids):
            for k, c in enumerate(POI_CATEGORIES):
                w.writerow([nid, c, int(s.poi_counts[i, k])])
    with open(path / "weather.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_id", "class"])
        for t, cls in zip(s.speeds.time_ids, s.weather):
            w.writerow([t, cls])
    s.speeds.save_csv(path / "speeds.csv")
    (path / "scenario.json").write_text(json.dumps(s.params.to_dict(), indent=1), encoding="utf-8")


def load_scenario(path: str | Path) -> CityScenario:
    path = Path(path)
    g = read_edge_csv(path / "edges.csv", path / "nodes.csv")
    col = {c: k for k, c in enumerate(POI_CATEGORIES)}
    row = {nid: i for i, nid in enumerate(g.node_ids)}
    poi = np.zeros((g.n_nodes, len(POI_CATEGORIES)), dtype=np.int64)
    with open(path / "poi.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            poi[row[r["node"]], col[r["category"]]] = int(r["count"])
    with open(path / "weather.csv", newline="", encoding="utf-8") as fh:
        weather = [r["class"] for r in csv.DictReader(fh)]
    speeds = SpeedTensor.load_csv(path / "speeds.csv")
    prm = ScenarioParams.from_dict(json.loads((path / "scenario.json").read_text(encoding="utf-8")))
    return CityScenario(g, poi, weather, speeds, prm)
