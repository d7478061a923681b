"""
Where the time goes in one global round
=======================================

The runtime model charges local computation, device-to-edge uploads,
edge-to-edge gossip and, for the cloud baselines, a slow device-to-cloud link.
"""

from cfel.costmodel import PRESETS, round_breakdown

profile = PRESETS["femnist-paper"]

# CE-FedAvg with the usual schedule: tau=2, q=8, pi=10.
cost = round_breakdown("ce_fedavg", profile, tau=2, q=8, pi=10)
print(f"compute {cost.compute:.6f} s, uplink {cost.uplink:.4f} s, gossip {cost.backhaul:.4f} s")
print(f"total {cost.total:.4f} s per round, {100 * cost.total:.1f} s for 100 rounds\n")

# Same compute budget (q * tau = 16) across the four algorithms.
print(f"{'tau':>3} {'q':>3} " + " ".join(f"{a:>11s}" for a in ("local_edge", "ce_fedavg", "hier_favg", "fedavg")))
for tau in (2, 4, 8):
    q = 16 // tau
    row = [round_breakdown(a, profile, tau, q, 10).total for a in ("local_edge", "ce_fedavg", "hier_favg", "fedavg")]
    print(f"{tau:3d} {q:3d} " + " ".join(f"{v:11.3f}" for v in row))

# Fewer edge rounds per global round means fewer uploads, so larger tau is cheaper per round.
