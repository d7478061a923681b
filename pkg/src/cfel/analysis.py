"""Empirical constants of the convergence analysis and the bound itself."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import global_objective
from .errors import DomainError
from .layout import ClusterLayout
from .numerics import full_gradient, stoch_gradient
from .topology import omega_constants


# -- divergences -------------------------------------------------------------

@dataclass
class DivergenceReport:
    eps_sq: float
    eps_i_sq: list[float]
    eps_hat_sq: float
    probe_points: np.ndarray
    per_probe: list[dict] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(p["residual"] for p in self.per_probe)

    def as_dict(self) -> dict:
        return {
            "eps_sq": self.eps_sq,
            "eps_i_sq": list(self.eps_i_sq),
            "eps_hat_sq": self.eps_hat_sq,
            "n_probes": int(len(self.probe_points)),
            "max_decomposition_residual": self.max_residual,
            "per_probe": self.per_probe,
        }


def divergences_at(model, data, layout: ClusterLayout, x) -> dict:
    """Inter-cluster, per-cluster intra and global gradient divergence at one point."""
    grads = np.stack([full_gradient(model, x, d) for d in data])
    n = layout.n
    g_all = grads.mean(axis=0)
    eps_sq = 0.0
    eps_i = []
    for members in layout.members:
        g_cluster = grads[list(members)].mean(axis=0)
        diff = g_cluster - g_all
        eps_sq += len(members) / n * float(diff @ diff)
        dev = grads[list(members)] - g_cluster
        eps_i.append(float(np.mean(np.sum(dev * dev, axis=1))))
    dev = grads - g_all
    eps_hat = float(np.mean(np.sum(dev * dev, axis=1)))
    weighted = sum(s / n * e for s, e in zip(layout.sizes, eps_i))
    return {"eps_sq": eps_sq, "eps_i_sq": eps_i, "eps_hat_sq": eps_hat,
            "residual": abs(eps_hat - eps_sq - weighted)}


def estimate_divergences(model, data, layout: ClusterLayout, probe_points) -> DivergenceReport:
    """Maxima over the probe set of each divergence, from full-batch gradients.

    The maxima are lower estimates of the suprema the analysis assumes.
    """
    probes = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    if len(probes) == 0:
        raise ValueError("need at least one probe point")
    per = [divergences_at(model, data, layout, x) for x in probes]
    return DivergenceReport(
        eps_sq=max(p["eps_sq"] for p in per),
        eps_i_sq=[max(p["eps_i_sq"][i] for p in per) for i in range(layout.m)],
        eps_hat_sq=max(p["eps_hat_sq"] for p in per),
        probe_points=probes,
        per_probe=per,
    )


def default_probes(model, trajectory=None, count: int = 16, seed: int = 0) -> np.ndarray:
    """The origin plus up to ``count`` points taken evenly along a trajectory (or random)."""
    pts = [np.zeros(model.dim)]
    if trajectory is not None and len(trajectory):
        idx = np.unique(np.linspace(0, len(trajectory) - 1, count).round().astype(int))
        pts.extend(np.asarray(trajectory[i], dtype=np.float64) for i in idx)
    else:
        pts.extend(np.random.default_rng(seed).standard_normal((count, model.dim)))
    return np.stack(pts)


# -- variance and smoothness -------------------------------------------------

def estimate_sigma_sq(model, params, data, batch_size: Optional[int], trials: int, seed: int = 0) -> float:
    """Mean of ``||g - grad F_k||^2`` over devices and sampled with-replacement batches.

    ``batch_size=None`` means full-batch gradients, whose variance is zero.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    rng = np.random.default_rng(seed)
    points = [np.asarray(params, dtype=np.float64)] * len(data) if np.ndim(params) == 1 else list(params)
    total = 0.0
    for x, d in zip(points, data):
        exact = full_gradient(model, x, d)
        for _ in range(trials):
            batch = np.arange(len(d)) if batch_size is None else rng.integers(0, len(d), batch_size)
            diff = stoch_gradient(model, x, d, batch).gradient - exact
            total += float(diff @ diff)
    return total / (trials * len(data))


def estimate_smoothness(model, data, pairs) -> float:
    """Largest observed ``||grad F_k(x) - grad F_k(x')|| / ||x - x'||`` over devices and pairs."""
    best = 0.0
    for x, xp in pairs:
        dist = np.linalg.norm(x - xp)
        if dist == 0:
            continue
        for d in data:
            ratio = np.linalg.norm(full_gradient(model, x, d) - full_gradient(model, xp, d)) / dist
            best = max(best, float(ratio))
    return best


def reference_minimum(model, data, x0, lr: float = 0.5, iters: int = 2000) -> tuple[float, np.ndarray]:
    """Loss at a long full-batch gradient-descent run, used as the lower bound of F."""
    x = np.asarray(x0, dtype=np.float64).copy()
    best = global_objective(model, x, data)[0]
    for _ in range(iters):
        loss, g = global_objective(model, x, data)
        best = min(best, loss)
        x = x - lr * g
    return min(best, global_objective(model, x, data)[0]), x


# -- convergence bound -------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    L: float
    sigma_sq: float
    eps_sq: float
    eps_i_sq: Sequence[float]
    zeta: float
    pi: int
    tau: int
    q: int
    n: int
    m: int
    lr: float
    T: int
    f_gap: float                         # F(x_1) - F_inf
    cluster_sizes: Optional[Sequence[int]] = None

    def weights(self) -> np.ndarray:
        sizes = np.full(self.m, self.n / self.m) if self.cluster_sizes is None else np.asarray(self.cluster_sizes, float)
        return sizes / self.n


@dataclass(frozen=True)
class BoundResult:
    terms: tuple
    lr_ok: bool
    lr_cap: float

    NAMES = ("optimization", "sgd_noise", "inter_noise", "inter_divergence", "intra_noise", "intra_divergence")

    @property
    def total(self) -> float:
        return float(sum(self.terms))

    def as_dict(self) -> dict:
        return {"total": self.total, "lr_ok": self.lr_ok, "lr_cap": self.lr_cap,
                "terms": dict(zip(self.NAMES, self.terms))}


def lr_cap(L: float, tau: int, q: int, omega2: float) -> float:
    return min(1.0 / (2 * L * tau), 1.0 / (2 * math.sqrt(2 * omega2) * L * q * tau))


def theorem1_bound(inp: BoundInputs) -> BoundResult:
    """Upper bound on ``(1/T) sum_t E||grad F(u_t)||^2`` and its six addends.

    A learning rate above the admissible cap still produces a value, with
    ``lr_ok=False`` and a warning.
    """
    if not 0 <= inp.zeta < 1:
        raise DomainError(f"zeta must lie in [0, 1), got {inp.zeta}")
    o1, o2 = omega_constants(inp.zeta, inp.pi)
    cap = lr_cap(inp.L, inp.tau, inp.q, o2)
    ok = inp.lr <= cap * (1 + 1e-12)
    if not ok:
        warnings.warn(f"learning rate {inp.lr} exceeds the admissible cap {cap}", stacklevel=2)
    eta, L, s2, n, m, tau, q = inp.lr, inp.L, inp.sigma_sq, inp.n, inp.m, inp.tau, inp.q
    e2 = eta * eta * L * L
    intra = float(np.dot(inp.weights(), np.asarray(inp.eps_i_sq, dtype=float)))
    terms = (
        2 * inp.f_gap / (eta * inp.T),
        eta * L * s2 / n,
        8 * e2 * (o1 * q * tau + (m - 1) / n * q * tau) * s2,
        16 * e2 * q * q * tau * tau * o2 * inp.eps_sq,
        4 * (n - m) / n * e2 * tau * s2,
        8 * e2 * tau * tau * intra,
    )
    return BoundResult(terms, ok, cap)


def theorem1_bound_unsimplified(inp: BoundInputs) -> float:
    """The bound before the learning-rate condition collapses its denominators."""
    o1, o2 = omega_constants(inp.zeta, inp.pi)
    eta, L, s2, n, m, tau, q = inp.lr, inp.L, inp.sigma_sq, inp.n, inp.m, inp.tau, inp.q
    e2 = eta * eta * L * L
    d_inter = 1 - 4 * e2 * q * q * tau * tau * o2
    d_intra = 1 - 2 * e2 * tau * tau
    if d_inter <= 0 or d_intra <= 0:
        return math.inf
    intra = float(np.dot(inp.weights(), np.asarray(inp.eps_i_sq, dtype=float)))
    return (2 * inp.f_gap / (eta * inp.T) + eta * L * s2 / n
            + 4 * e2 * (o1 * q * tau + (m - 1) / n * q * tau) * s2 / d_inter
            + 8 * e2 * q * q * tau * tau * o2 * inp.eps_sq / d_inter
            + (4 * e2 * q * q * tau * tau * o2 / d_inter + 1)
            * (2 * (n - m) / n * e2 * tau * s2 / d_intra + 4 * e2 * tau * tau * intra / d_intra))


def corollary_rate_table(base: BoundInputs, grid) -> list[dict]:
    """Bound values along ``(tau, q, T)`` with ``lr = sqrt(n/T) / L``.

    Rows whose learning rate violates the admissible cap are kept but
    flagged ``feasible=False`` with no bound value; ``rate_regime`` marks
    ``T > (q*tau)**4``.
    """
    rows = []
    for tau, q, T in grid:
        lr = math.sqrt(base.n / T) / base.L
        _, o2 = omega_constants(base.zeta, base.pi)
        cap = lr_cap(base.L, tau, q, o2)
        row = {"tau": tau, "q": q, "T": T, "lr": lr, "feasible": lr <= cap,
               "rate_regime": T > (q * tau) ** 4, "bound": math.nan, "leading": math.nan}
        if row["feasible"]:
            inp = BoundInputs(**{**base.__dict__, "tau": tau, "q": q, "T": T, "lr": lr})
            res = theorem1_bound(inp)
            row["bound"] = res.total
            row["leading"] = res.terms[0]
        rows.append(row)
    return rows


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def mean_grad_norm_sq(model, data, snapshots) -> float:
    """``(1/T) sum_t ||grad F(u_t)||^2`` with ``u_t`` the device average of each snapshot."""
    vals = []
    for x in snapshots:
        _, g = global_objective(model, np.asarray(x).mean(axis=0), data)
        vals.append(float(g @ g))
    return float(np.mean(vals))
