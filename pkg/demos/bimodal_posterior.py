"""
A two-branch posterior
======================

x ~ U[-2, 2] is observed through y = x**2 + N(0, 0.01**2), so every positive
y has two explanations, +sqrt(y) and -sqrt(y).  This is a reduced version of
``genuq bimodal-demo`` (fewer labels, one fixed network) that finishes in a
few minutes and prints histograms next to the quadrature reference.
"""

import numpy as np

from genuq import bench, pipeline
from genuq.evaluate import ensemble
from genuq.flow import FlowConfig
from genuq.network import Architecture
from genuq.score import LikelihoodModel
from genuq.trainer import TrainConfig, train

_, prep, clean = pipeline.bimodal_datasets(seed=0)
lik = LikelihoodModel.explicit(pipeline.BIMODAL_SIGMA / float(prep.scaler.y_std[0]))

# every training row in each score batch; rows far below the best likelihood are skipped
cfg = FlowConfig(batch_size=None, loglik_cutoff=40.0, n_labels=5000)
triples = pipeline.labels(prep, lik, cfg, label_data=clean)
x = prep.scaler.invert_x(triples.x)[:, 0]
print(f"{len(triples)} labels, fraction on the negative branch {np.mean(x < 0):.3f}")

model, report = train(triples, Architecture(1, 1, 2, 64, 0.05), TrainConfig(max_epochs=150),
                      prep.scaler)
print(f"validation R^2 {report.val_r2:.4f} after {report.epochs} epochs")


def bars(counts, width=40):
    top = counts.max()
    return ["#" * int(round(width * c / top)) for c in counts]


for y in (0.25, 1.0):
    s = ensemble(model, [y], 2000, seed=0).samples[:, 0]
    ref = bench.bimodal_reference(y, pipeline.BIMODAL_SIGMA)
    neg, pos = bench.sample_modes(s)
    print(f"\ny = {y}: reference modes {np.round(ref.modes(), 3)}, ensemble modes {neg:.3f} {pos:.3f}")
    print(f"sign split {np.mean(s < 0):.3f}, W1 to reference {ref.wasserstein1(s):.4f}")
    counts, edges = np.histogram(s, bins=20, range=(-2, 2))
    for lo, bar in zip(edges, bars(counts)):
        print(f"{lo:+5.1f} {bar}")
