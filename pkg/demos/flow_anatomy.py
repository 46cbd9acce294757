"""
Anatomy of one labeled triple
=============================

Walks a single trajectory of the probability-flow ODE by hand: the
Monte Carlo weights, the weighted mean x_bar, the velocity, and the RK4
integration from t = 1 down to t_min.  Run with ``python3 demos/flow_anatomy.py``.
"""

import numpy as np

from genuq.flow import FlowConfig, integrate, integrate_state, velocity
from genuq.score import LikelihoodModel, MiniBatch, log_weights, normalize_weights, score_estimate

rng = np.random.default_rng(0)

# a toy prior sample: five points on the line, observed through y = x**2
x = np.array([[-1.0], [-0.5], [0.2], [0.6], [1.0]])
batch = MiniBatch(x, x**2)
lik = LikelihoodModel.explicit(0.1)
y_star = [1.0]

# at t = 1 the state carries no information about x; only the likelihood matters
w = normalize_weights(log_weights(np.zeros(1), 1.0, batch, y_star, lik))
print("weights at t=1:       ", np.round(w, 3))

# halfway down, the current state z pulls the weights toward one branch
z_half = np.array([0.4])
w = normalize_weights(log_weights(z_half, 0.5, batch, y_star, lik))
score, x_bar = score_estimate(z_half, 0.5, batch, y_star, lik)
print("weights at t=0.5, z=0.4:", np.round(w, 3))
print("x_bar", x_bar, "score", score, "velocity", velocity(z_half, 0.5, x_bar))

# the full trajectory: the sign of the starting z picks the branch
for z1 in (-1.2, -0.1, 0.1, 1.2):
    out = integrate([z1], y_star, batch, lik, FlowConfig())
    raw = integrate_state([z1], y_star, batch, lik, FlowConfig())
    print(f"z1 = {z1:+.1f} -> x = {out[0]:+.4f}   (raw state at t_min {raw[0]:+.4f})")

# one data point: the flow must return it exactly, whatever z is
single = MiniBatch(np.array([[0.3, -0.7]]), np.zeros((1, 1)))
for _ in range(3):
    z1 = rng.normal(size=2)
    print("point mass:", integrate(z1, [0.0], single, LikelihoodModel.kernel(1e6), FlowConfig()))
