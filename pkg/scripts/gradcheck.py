"""Central-difference check of the composed model's analytic gradient."""

import argparse

import numpy as np

from kstgcn.graph import build_graph, propagation_matrix
from kstgcn.model import ForecastModel, ModelConfig
from kstgcn.trainer import Batch, finite_diff_check


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=8)
    ap.add_argument("--dim", type=int, default=4, help="fusion and graph-convolution width")
    ap.add_argument("--knowledge-dim", type=int, default=4)
    ap.add_argument("--hidden", type=int, default=6)
    ap.add_argument("--window", type=int, default=3)
    ap.add_argument("--horizon", type=int, default=2)
    ap.add_argument("--batch", type=int, default=3)
    ap.add_argument("--layers", type=int, default=1)
    ap.add_argument("--eps", type=float, default=1e-5)
    ap.add_argument("--weight-decay", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    rng = np.random.default_rng(a.seed)
    k = a.knowledge_dim
    cfg = ModelConfig(d_s=k, d_d=k, d_f=a.dim, d_out=a.dim, d_h=a.hidden, horizon=a.horizon, gcn_layers=a.layers)
    model = ForecastModel.init(cfg, a.seed)
    n = a.nodes
    g = build_graph(n, [(i, (i + 1) % n) for i in range(n)] + [(0, n // 2)])
    batch = Batch(rng.random((a.batch, a.window, n)), rng.standard_normal((n, k)),
                  rng.standard_normal((a.batch, a.window, n, k)), rng.random((a.batch, n, a.horizon)),
                  propagation_matrix(g))
    print(f"{model.n_params} parameters")
    print(finite_diff_check(model, batch, a.eps, a.weight_decay, seed=a.seed))


if __name__ == "__main__":
    main()
