"""Experiment configuration, testbed assembly and artifact emission.

Configs are TOML files with the sections ``run``, ``data``, ``partition``,
``topology``, ``system``, ``output`` and ``analysis``.  A preset supplies a
complete base config; the file only needs to override what differs.
"""
from __future__ import annotations

import copy
import csv
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import analysis, costmodel, datagen, io, topology
from .engine import RunConfig, RunResult, global_objective, run
from .errors import ConfigError
from .layout import ClusterLayout
from .numerics import LogisticModel, MLPModel, QuadraticModel

REQUIRED = object()

SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "algorithm": (str, REQUIRED), "tau": (int, REQUIRED), "q": (int, REQUIRED),
        "pi": (int, 10), "lr": (float, REQUIRED), "rounds": (int, REQUIRED),
        "batch_size": (int, 10), "momentum": (float, 0.0), "weighting": (str, "uniform"),
        "tau_unit": (str, "iterations"), "grad_noise": (float, 0.0),
    },
    "data": {
        "kind": (str, REQUIRED), "n_devices": (int, REQUIRED),
        "n_train": (int, 3200), "n_test": (int, 1000), "n_features": (int, 20),
        "n_classes": (int, 10), "hidden": (int, 16), "separation": (float, 3.0),
        "noise": (float, 1.0), "dim": (int, 10), "spread": (float, 1.0),
        "samples_per_device": (int, 8), "sample_spread": (float, 0.5),
        "images": (str, ""), "labels": (str, ""), "max_samples": (int, 6000),
        "train_frac": (float, 0.9),
    },
    "partition": {
        "scheme": (str, "iid"), "alpha": (float, 0.5),
        "shards_per_device": (int, 2), "shards_per_cluster": (int, 5),
    },
    "topology": {
        "m": (int, REQUIRED), "graph": (str, "ring"), "p_edge": (float, 0.5),
        "weights": (str, "metropolis"), "edge_list": (str, ""),
    },
    "system": {
        "preset": (str, "femnist-paper"), "flops_per_iter": (float, 0.0),
        "device_flops": (float, 0.0), "b_d2e": (float, 0.0), "b_e2e": (float, 0.0),
        "b_d2c": (float, 0.0), "bits_per_param": (int, 32), "model_params": (int, 0),
    },
    "output": {"dir": (str, "runs"), "seeds": (list, [0]), "threads": (int, 1)},
    "analysis": {"enabled": (bool, True), "probes": (int, 16), "sigma_trials": (int, 8)},
}

PRESETS: dict[str, dict] = {
    "desk-quadratic": {
        "run": {"algorithm": "ce_fedavg", "tau": 2, "q": 4, "pi": 2, "lr": 0.02, "rounds": 20, "batch_size": 2},
        "data": {"kind": "quadratic", "n_devices": 16, "dim": 10},
        "topology": {"m": 4, "graph": "ring"},
        "system": {"preset": "desk"},
    },
    "desk-logistic": {
        "run": {"algorithm": "ce_fedavg", "tau": 2, "q": 8, "pi": 10, "lr": 0.1, "rounds": 10, "batch_size": 10},
        "data": {"kind": "logistic", "n_devices": 64},
        "partition": {"scheme": "dirichlet", "alpha": 0.5},
        "topology": {"m": 8, "graph": "ring"},
        "system": {"preset": "desk"},
    },
    "femnist-paper": {
        "run": {"algorithm": "ce_fedavg", "tau": 2, "q": 8, "pi": 10, "lr": 0.1, "rounds": 10, "batch_size": 10},
        "data": {"kind": "logistic", "n_devices": 64},
        "partition": {"scheme": "dirichlet", "alpha": 0.5},
        "topology": {"m": 8, "graph": "ring"},
        "system": {"preset": "femnist-paper"},
    },
    "cifar-paper": {
        "run": {"algorithm": "ce_fedavg", "tau": 2, "q": 8, "pi": 10, "lr": 0.1, "rounds": 10, "batch_size": 10},
        "data": {"kind": "mlp", "n_devices": 64},
        "partition": {"scheme": "dirichlet", "alpha": 0.5},
        "topology": {"m": 8, "graph": "ring"},
        "system": {"preset": "cifar-paper"},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in over.items():
        if not isinstance(values, dict):
            raise ConfigError(f"top-level key {section!r} must be a section")
        out.setdefault(section, {}).update(values)
    return out


def validate(raw: dict) -> dict:
    """Type-check against the schema, fill defaults, reject unknown keys."""
    out = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
    for section, fields in SCHEMA.items():
        given = raw.get(section, {})
        for key in given:
            if key not in fields:
                raise ConfigError(f"unknown config key {section}.{key}")
        sec = {}
        for key, (typ, default) in fields.items():
            if key not in given:
                if default is REQUIRED:
                    raise ConfigError(f"missing required config key {section}.{key}")
                sec[key] = copy.deepcopy(default)
                continue
            value = given[key]
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
                raise ConfigError(f"config key {section}.{key} must be {typ.__name__}")
            sec[key] = value
        out[section] = sec
    return out


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    raw: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        raw = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                text = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
        raw = _merge(raw, text)
    if overrides:
        raw = _merge(raw, overrides)
    return validate(raw)


# -- testbed assembly --------------------------------------------------------

@dataclass
class ExperimentSetup:
    config: RunConfig
    layout: ClusterLayout
    mixing: topology.MixingMatrix
    model: object
    data: list
    test: object
    profile: costmodel.SystemProfile
    init: np.ndarray
    f_inf: float | None = None


def _profile(cfg, n_params: int, n_devices: int) -> costmodel.SystemProfile:
    s = cfg["system"]
    if s["preset"] in costmodel.PRESETS:
        return costmodel.PRESETS[s["preset"]]
    if s["preset"] != "desk":
        raise ConfigError(f"unknown system preset {s['preset']!r}")
    base = costmodel.PRESETS["femnist-paper"]
    params = s["model_params"] or n_params
    return costmodel.SystemProfile(
        s["flops_per_iter"] or 6.0 * params * (cfg["run"]["batch_size"] or 1),
        [s["device_flops"] or base.device_flops[0]] * n_devices,
        params * s["bits_per_param"],
        s["b_d2e"] or base.b_d2e, s["b_e2e"] or base.b_e2e, s["b_d2c"] or base.b_d2c)


def build_testbed(cfg: dict, seed: int) -> ExperimentSetup:
    r, d, t = cfg["run"], cfg["data"], cfg["topology"]
    n, m = d["n_devices"], t["m"]
    run_cfg = RunConfig(algorithm=r["algorithm"], tau=r["tau"], q=r["q"], pi=r["pi"], lr=r["lr"],
                        rounds=r["rounds"], batch_size=r["batch_size"] or None, momentum=r["momentum"],
                        weighting=r["weighting"], tau_unit=r["tau_unit"], seed=seed,
                        grad_noise=r["grad_noise"])
    layout = ClusterLayout.even(n, m)
    if t["edge_list"]:
        graph = topology.read_edge_list(t["edge_list"], m)
    else:
        graph = topology.build_graph(t["graph"], m, seed=seed, p_edge=t["p_edge"])
    if t["weights"] == "metropolis":
        mixing = topology.metropolis_weights(graph)
    elif t["weights"] == "uniform":
        mixing = topology.uniform_weights(graph)
    else:
        raise ConfigError(f"unknown mixing weights {t['weights']!r}")

    test = None
    f_inf = None
    if d["kind"] == "quadratic":
        fleet = datagen.make_quadratic_fleet(n, d["dim"], d["spread"], seed,
                                             d["samples_per_device"], d["sample_spread"])
        model = QuadraticModel(d["dim"])
        data = fleet.datasets
        f_inf = global_objective(model, fleet.minimizer, data)[0]
    else:
        spec = datagen.PartitionSpec(cfg["partition"]["scheme"], cfg["partition"]["alpha"],
                                     cfg["partition"]["shards_per_device"], cfg["partition"]["shards_per_cluster"])
        if d["kind"] == "idx":
            pool = datagen.load_idx_subset(d["images"], d["labels"], d["max_samples"])
            devices = datagen.partition(pool, layout, spec, seed)
            data, test = datagen.split_train_test(devices, d["train_frac"], seed)
        else:
            pool, test = datagen.make_classification(d["n_train"], d["n_test"], d["n_features"],
                                                     d["n_classes"], seed, d["separation"], d["noise"])
            data = datagen.partition(pool, layout, spec, seed)
        if d["kind"] == "mlp":
            model = MLPModel(pool.features.shape[1], d["hidden"], pool.n_classes)
        else:
            model = LogisticModel(pool.features.shape[1], pool.n_classes)
    init = model.init_params(seed)
    profile = _profile(cfg, model.dim, n)
    return ExperimentSetup(run_cfg, layout, mixing, model, data, test, profile, init, f_inf)


def execute(bed: ExperimentSetup, threads: int = 1) -> RunResult:
    return run(bed.config, bed.layout, bed.mixing, bed.model, bed.data, init=bed.init,
               test=bed.test, profile=bed.profile, threads=threads)


def analyse(bed: ExperimentSetup, result: RunResult, cfg: dict) -> tuple[dict, dict]:
    """Divergence report and bound breakdown for a finished run."""
    a = cfg["analysis"]
    model, data = bed.model, bed.data
    probes = analysis.default_probes(model, [bed.init] + result.round_models, a["probes"])
    report = analysis.estimate_divergences(model, data, bed.layout, probes)
    if isinstance(model, QuadraticModel):
        L = model.smoothness
        f_inf = bed.f_inf
    else:
        pairs = list(zip(probes[:-1], probes[1:]))
        L = max(analysis.estimate_smoothness(model, data, pairs), 1e-12)
        f_inf = analysis.reference_minimum(model, data, result.averaged_model, lr=0.5, iters=300)[0]
    sigma = max(analysis.estimate_sigma_sq(model, x, data, bed.config.batch_size, a["sigma_trials"], seed=i)
                for i, x in enumerate(probes[: min(4, len(probes))])) + bed.config.grad_noise
    f_gap = max(global_objective(model, bed.init, data)[0] - f_inf, 0.0)
    c = bed.config
    inputs = analysis.BoundInputs(L, sigma, report.eps_sq, report.eps_i_sq, bed.mixing.zeta, c.pi, c.tau,
                                  c.q, bed.layout.n, bed.layout.m, c.lr, c.total_steps, f_gap,
                                  bed.layout.sizes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bound = analysis.theorem1_bound(inputs)
    rounds = [rec.grad_norm_sq for rec in result.records]
    bound_doc = {**bound.as_dict(), "inputs": {k: v for k, v in inputs.__dict__.items()},
                 "mean_round_grad_norm_sq": float(np.mean(rounds))}
    return report.as_dict(), bound_doc


def write_run(out: Path, bed: ExperimentSetup, result: RunResult, cfg: dict, with_analysis: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(result.records, out / "metrics.csv")
    io.write_jsonl(result.records, out / "metrics.jsonl")
    io.write_checkpoint(result.averaged_model, out / "checkpoint.bin")
    if with_analysis:
        div, bound = analyse(bed, result, cfg)
        io.write_json(div, out / "divergence.json")
        io.write_json(bound, out / "bound.json")


# -- sweeps ------------------------------------------------------------------

SWEEP_AXES = ("tau_fixed_qtau", "m", "partition")


def sweep_cells(cfg: dict, axis: str) -> list[tuple[str, dict]]:
    """(label, override) per cell of a sweep axis."""
    if axis == "tau_fixed_qtau":
        budget = cfg["run"]["tau"] * cfg["run"]["q"]
        return [(f"tau{tau}", {"run": {"tau": tau, "q": budget // tau}})
                for tau in (2, 4, 8) if budget % tau == 0 and budget // tau >= 1]
    if axis == "m":
        return [(f"m{m}", {"topology": {"m": m}}) for m in (4, 8, 16)]
    if axis == "partition":
        return [(s, {"partition": {"scheme": s}}) for s in ("cluster_iid_shards", "cluster_noniid_shards")]
    raise ConfigError(f"unknown sweep axis {axis!r}")


def run_sweep(cfg: dict, axis: str, out: Path, seeds, threads: int = 1, parallel: bool = False) -> list[dict]:
    cells = sweep_cells(cfg, axis)

    def one(cell):
        label, override = cell
        cell_cfg = validate(_merge(cfg, override))
        finals = []
        for seed in seeds:
            bed = build_testbed(cell_cfg, seed)
            result = execute(bed, threads)
            write_run(out / axis / label / f"seed_{seed}", bed, result, cell_cfg, with_analysis=False)
            finals.append(result.records[-1])
        return label, finals

    if parallel:
        with ThreadPoolExecutor(max_workers=len(cells)) as pool:
            outcomes = list(pool.map(one, cells))
    else:
        outcomes = [one(c) for c in cells]

    summary = []
    for label, finals in outcomes:
        loss = np.array([f.global_loss for f in finals])
        acc = np.array([f.test_accuracy for f in finals])
        k = len(finals)
        summary.append({
            "cell": label, "seeds": k,
            "mean_final_loss": float(loss.mean()),
            "se_final_loss": float(loss.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
            "mean_final_accuracy": float(acc.mean()),
            "se_final_accuracy": float(acc.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
        })
    _write_summary(summary, out / axis / "summary.csv")
    return summary


def _write_summary(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
