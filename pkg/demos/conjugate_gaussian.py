"""
Conjugate Gaussian check
========================

x ~ N(0, 1) observed as y = x + N(0, s**2) has the closed-form posterior
N(y / (1 + s**2), s**2 / (1 + s**2)).  This script generates labels, trains a
generator and compares its ensembles with the exact answer.  Takes about a
minute on one core.
"""

import numpy as np

from genuq import bench
from genuq.dataset import fit_scaler
from genuq.evaluate import ensemble
from genuq.flow import FlowConfig, generate_labels
from genuq.network import Architecture
from genuq.score import LikelihoodModel
from genuq.trainer import TrainConfig, train

sigma_obs = 0.5
prob = bench.gaussian_linear_problem(sigma_obs, 10_000, seed=0)
scaler = fit_scaler(prob.dataset)

# the likelihood width must be given in standardized units
lik = LikelihoodModel.explicit(sigma_obs / float(scaler.y_std[0]))
triples = generate_labels(scaler.apply(prob.noiseless()), lik, FlowConfig(n_labels=10_000))
print(f"{len(triples)} labeled triples")

model, report = train(triples, Architecture(1, 1, 2, 64, 0.05), TrainConfig(max_epochs=200), scaler)
print(f"trained {report.epochs} epochs, best epoch {report.best_epoch}, validation R^2 {report.val_r2:.4f}")

print(f"{'y':>5} {'mean':>8} {'exact':>8} {'std':>8} {'exact':>8}")
for y in (-1.0, 0.0, 2.0):
    s = ensemble(model, [y], 2000, seed=1).samples[:, 0]
    mean, var = prob.closed_form(y)
    print(f"{y:5.1f} {s.mean():8.4f} {mean:8.4f} {s.std():8.4f} {np.sqrt(var):8.4f}")
