"""
Special cases that must collapse to known algorithms
====================================================

With one cluster the method is FedAvg; with one device per server and a
single local step it is decentralized SGD; over a complete graph it is
hierarchical SGD.  The engine is also replayed against an explicit matrix
recursion.  ``cfel verify`` runs the same checks.
"""

from cfel import verify

for check in verify.run_all():
    print(check.line())

# The matrix recursion tracks the engine on every step of every random config.
for cfg, layout, mix, model, data in verify.random_oracle_configs(5):
    gap, resid = verify.oracle_deviation(cfg, layout, mix, model, data)
    print(f"n={layout.n} m={layout.m} tau={cfg.tau} q={cfg.q} pi={cfg.pi}: gap {gap:.1e}, residual {resid:.1e}")
