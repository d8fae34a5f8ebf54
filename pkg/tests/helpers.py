"""Shared toy instances for the test suite."""

import numpy as np

from kstgcn.graph import build_graph, propagation_matrix
from kstgcn.kg.store import AttributeTriple, RelationTriple, TripleStore
from kstgcn.model import ForecastModel, ModelConfig
from kstgcn.trainer import Batch


def cycle_kg(n=10):
    """n entities in a ring joined by adj (canonical lower-id head), plus a
    two-valued parity attribute."""
    ents = [f"e{i}" for i in range(n)]
    rels = []
    for i in range(n):
        a, b = sorted((i, (i + 1) % n))
        rels.append(RelationTriple(ents[a], "adj", ents[b]))
    atts = [AttributeTriple(e, "parity", str(i % 2)) for i, e in enumerate(ents)]
    return TripleStore(ents, ["adj"], {"parity": ["0", "1"]}, rels, atts)


def ring_graph(n):
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)])


def small_model_and_batch(n=8, d_s=4, d_d=4, d=4, d_h=6, window=3, horizon=2, batch=3, seed=0,
                          gcn_layers=1):
    """Random composed model and batch of the gradient-check size."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d_s=d_s, d_d=d_d, d_f=d, d_out=d, d_h=d_h, horizon=horizon, gcn_layers=gcn_layers)
    model = ForecastModel.init(cfg, seed)
    g = build_graph(n, [(i, (i + 1) % n) for i in range(n)] + [(0, n // 2)])
    b = Batch(rng.random((batch, window, n)), rng.standard_normal((n, d_s)),
              rng.standard_normal((batch, window, n, d_d)), rng.random((batch, n, horizon)),
              propagation_matrix(g))
    return model, b


def tiny_experiment(out, mode="ablate", seeds=(0,), **over):
    """An experiment small enough to run end to end in a few seconds."""
    from kstgcn.kg.embed import KrearConfig
    from kstgcn.runner import ExperimentConfig, Grids
    from kstgcn.synth import ScenarioParams
    from kstgcn.trainer import TrainConfig

    return ExperimentConfig(
        scenario=ScenarioParams(n_nodes=8, n_steps=288, seed=1),
        embed=KrearConfig(dim=4, epochs=3, negatives=2),
        model=ModelConfig(d_f=4, d_out=4, d_h=6),
        train=TrainConfig(epochs=2, lr=0.01, batch_size=64, weight_decay=0.0),
        grids=Grids(horizons=[1, 2, 3, 4], hidden=[4, 8], embed_dims=[3, 5], gaussian=[0.2, 1.0],
                    poisson=[1.0, 4.0]),
        mode=mode, seeds=list(seeds), out=str(out), **over)


def acceptance_experiment(out, mode="ablate", seeds=(0, 1, 2, 3, 4), effects=None, **over):
    """The desk-scale synthetic city (64 sections, 10 days) used for the
    direction-of-effect checks."""
    from kstgcn.kg.embed import KrearConfig
    from kstgcn.runner import ExperimentConfig
    from kstgcn.synth import EffectConfig, ScenarioParams
    from kstgcn.trainer import TrainConfig

    return ExperimentConfig(
        scenario=ScenarioParams(n_nodes=64, n_steps=960, seed=0, effects=effects or EffectConfig()),
        embed=KrearConfig(epochs=50),
        model=ModelConfig(d_f=32, d_out=32, d_h=32),
        train=TrainConfig(epochs=50, lr=0.005, lr_decay=0.98, weight_decay=0.0, dtype="float32"),
        mode=mode, seeds=list(seeds), out=str(out), **over)
