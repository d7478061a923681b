"""Reduction- and oracle-equivalence harnesses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import datagen, reference, topology
from .engine import RunConfig, run, run_matrix_oracle
from .errors import InvariantError
from .layout import ClusterLayout
from .numerics import LogisticModel, QuadraticModel


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max deviation {self.deviation:.3e} (tol {self.tolerance:.0e}) {self.detail}".rstrip()


def quadratic_bed(n: int, d: int, seed: int):
    fleet = datagen.make_quadratic_fleet(n, d, 1.0, seed, samples_per_device=6, sample_spread=0.7)
    return QuadraticModel(d), fleet.datasets


def logistic_bed(n: int, seed: int, n_features: int = 2, n_classes: int = 3):
    pool, _ = datagen.make_classification(12 * n, 10, n_features, n_classes, seed)
    data = datagen.partition(pool, ClusterLayout.even(n, 1), datagen.PartitionSpec("dirichlet", 1.0), seed)
    return LogisticModel(n_features, n_classes), data


def _beds(n, seeds):
    for seed in seeds:
        yield seed, quadratic_bed(n, 6, seed)
    yield seeds[0] + 100, logistic_bed(n, seeds[0])


def check_fedavg_reduction(seeds=(0, 1, 2)) -> CheckResult:
    """One cluster, q = 1: CE-FedAvg must equal FedAvg bit for bit."""
    worst = direct_gap = 0.0
    mix = topology.metropolis_weights(topology.build_graph("ring", 1))
    layout = ClusterLayout.even(8, 1)
    for seed, (model, data) in _beds(8, seeds):
        ce = RunConfig("ce_fedavg", tau=4, q=1, pi=3, lr=0.1, rounds=8, batch_size=2, seed=seed)
        fa = RunConfig("fedavg", tau=4, q=1, pi=3, lr=0.1, rounds=8, batch_size=2, seed=seed)
        a = run(ce, layout, mix, model, data).state.device_params
        b = run(fa, layout, None, model, data).state.device_params
        if not np.array_equal(a, b):
            worst = max(worst, float(np.max(np.abs(a - b))), np.finfo(float).tiny)
        direct = reference.local_sgd(ce, model, data, model.init_params(seed), period=4)
        direct_gap = max(direct_gap, float(np.max(np.abs(a - direct))))
    ok = worst == 0.0 and direct_gap <= 1e-12
    return CheckResult("fedavg_reduction", ok, worst, 0.0,
                       f"(bit-exact); vs directly coded local SGD {direct_gap:.3e} (tol 1e-12)")


def check_decentralized_reduction(seeds=(0, 1, 2)) -> CheckResult:
    """One device per server, tau = 1: CE-FedAvg must equal decentralized local SGD."""
    worst = 0.0
    n = 8
    mix = topology.metropolis_weights(topology.build_graph("ring", n))
    for seed, (model, data) in _beds(n, seeds):
        cfg = RunConfig("ce_fedavg", tau=1, q=4, pi=2, lr=0.1, rounds=16, batch_size=2, seed=seed)
        a = run(cfg, ClusterLayout.even(n, n), mix, model, data).state.device_params
        b = reference.decentralized_local_sgd(cfg, model, data, model.init_params(seed), mix.entries)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("decentralized_reduction", worst <= 1e-12, worst, 1e-12)


def check_hsgd_reduction(seeds=(0, 1, 2)) -> CheckResult:
    """Complete backhaul graph: CE-FedAvg must equal hierarchical SGD."""
    worst = 0.0
    layout = ClusterLayout.even(8, 4)
    mix = topology.metropolis_weights(topology.build_graph("complete", 4))
    for seed, (model, data) in _beds(8, seeds):
        cfg = RunConfig("ce_fedavg", tau=2, q=4, pi=1, lr=0.1, rounds=8, batch_size=2, seed=seed)
        a = run(cfg, layout, mix, model, data).state.device_params
        b = reference.hierarchical_sgd(cfg, model, data, model.init_params(seed), layout.members)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("hsgd_reduction", worst <= 1e-12, worst, 1e-12)


def oracle_deviation(cfg: RunConfig, layout, mixing, model, data) -> tuple[float, float]:
    """Max engine-vs-oracle parameter gap over all t, and max averaged-model recursion residual."""
    snaps = []
    run(cfg, layout, mixing, model, data, on_step=lambda t, x: snaps.append(x.copy()))
    trace = run_matrix_oracle(cfg, layout, mixing, model, data)
    gap = max(float(np.max(np.abs(a - b))) for a, b in zip(snaps, trace.params))
    if len(snaps) != len(trace.params):
        gap = float("inf")
    resid = 0.0
    for t, g in enumerate(trace.grads):
        u0, u1 = trace.params[t].mean(axis=0), trace.params[t + 1].mean(axis=0)
        resid = max(resid, float(np.max(np.abs(u1 - u0 + cfg.lr * g.mean(axis=0)))))
    return gap, resid


def random_oracle_configs(count: int = 5, seed: int = 0):
    """Small random equal-cluster configurations for oracle checks."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        m = int(rng.choice([2, 3, 4]))
        per = int(rng.choice([1, 2, 3]))
        n = m * per
        kind = ["ring", "complete", "path"][i % 3]
        graph = topology.build_graph(kind, m)
        cfg = RunConfig("ce_fedavg", tau=int(rng.integers(1, 4)), q=int(rng.integers(1, 4)),
                        pi=int(rng.integers(1, 4)), lr=0.1, rounds=int(rng.integers(2, 4)),
                        batch_size=int(rng.integers(1, 4)), seed=int(rng.integers(0, 2**31)),
                        grad_noise=float(rng.choice([0.0, 0.1])))
        model, data = quadratic_bed(n, 6, cfg.seed) if i % 2 == 0 else logistic_bed(n, cfg.seed)
        out.append((cfg, ClusterLayout.even(n, m), topology.metropolis_weights(graph), model, data))
    return out


def check_matrix_oracle(count: int = 5) -> CheckResult:
    worst_gap = worst_res = 0.0
    for cfg, layout, mixing, model, data in random_oracle_configs(count):
        gap, res = oracle_deviation(cfg, layout, mixing, model, data)
        worst_gap, worst_res = max(worst_gap, gap), max(worst_res, res)
    ok = worst_gap <= 1e-10 and worst_res <= 1e-12
    return CheckResult("matrix_oracle", ok, worst_gap, 1e-10, f"averaged-model residual {worst_res:.3e} (tol 1e-12)")


def check_mixing(h=None, graph=None) -> CheckResult:
    if h is None:
        graph = topology.build_graph("ring", 8)
        h = topology.metropolis_weights(graph).entries
    try:
        zeta = topology.validate_mixing(h, graph)
    except InvariantError as exc:
        return CheckResult("mixing_matrix", False, float("nan"), 1e-12, str(exc))
    return CheckResult("mixing_matrix", True, 0.0, 1e-12, f"zeta={zeta:.10f}")


def run_all(h=None, graph=None) -> list[CheckResult]:
    return [check_mixing(h, graph), check_fedavg_reduction(), check_decentralized_reduction(),
            check_hsgd_reduction(), check_matrix_oracle()]
