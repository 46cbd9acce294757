"""
Reducing fields to a latent vector
==================================

High-dimensional outputs (here 64 x 128 smooth fields) are compressed to 20
principal components before they enter the generator as observations.
"""

import numpy as np

from genuq import reduce

rng = np.random.default_rng(0)
h, w = 64, 128
yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

# 500 random fields built from low-frequency cosines
fields = np.zeros((500, h * w))
for i in range(6):
    for j in range(6):
        mode = (np.cos(np.pi * i * yy) * np.cos(np.pi * j * xx)).ravel()
        fields += np.outer(rng.standard_normal(500) / (1 + i + j) ** 2, mode)

r = reduce.fit(fields, 20)
print("cumulative explained variance:", np.round(np.cumsum(r.explained_ratio)[[0, 4, 9, 19]], 4))

latent = r.encode(fields)
back = r.decode(latent)
err = np.linalg.norm(back - fields, axis=1) / np.linalg.norm(fields - r.mean, axis=1)
print(f"latent shape {latent.shape}, median relative reconstruction error {np.median(err):.2e}")

# the latent columns are what a run config would list under data.y_cols
reduce.save(r, "/tmp/fields.gqrd")
print("reloaded k =", reduce.load("/tmp/fields.gqrd").k)
