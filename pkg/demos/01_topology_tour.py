"""
Backhaul topologies and how fast they mix
=========================================

Edge servers gossip over a sparse graph.  The second largest eigenvalue
magnitude of the mixing matrix, zeta, decides how quickly repeated gossip
drives the edge models to consensus.
"""

import numpy as np

from cfel.topology import build_graph, metropolis_weights, omega_constants

# A handful of 8-server graphs, from sparse to dense.
for kind in ("path", "ring", "torus2d", "erdos_renyi", "complete"):
    mix = metropolis_weights(build_graph(kind, 8, seed=1))
    o1, o2 = omega_constants(mix.zeta, 10)
    print(f"{kind:12s} zeta={mix.zeta:.4f}  Omega1={o1:.3e}  Omega2={o2:.3f}")

# The ring has a closed form: its eigenvalues are (1 + 2 cos(2 pi k / 8)) / 3.
ring = metropolis_weights(build_graph("ring", 8))
print("\nring-8 zeta", ring.zeta, "closed form", (1 + np.sqrt(2)) / 3)

# Gossip contracts the disagreement by at least zeta per step.
y = np.random.default_rng(0).standard_normal((8, 3))
for pi in (1, 2, 5, 10):
    z = ring.power(pi).T @ y
    ratio = np.linalg.norm(z - z.mean(0)) / np.linalg.norm(y - y.mean(0))
    print(f"pi={pi:2d}: spread ratio {ratio:.3e}  <=  zeta^pi = {ring.zeta ** pi:.3e}")
