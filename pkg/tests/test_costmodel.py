from dataclasses import replace

import numpy as np
import pytest

from cfel.costmodel import PRESETS, SystemProfile, round_breakdown, round_time, total_time
from cfel.errors import DomainError

# FEMNIST preset by hand: 16 iterations x 13.30e6 x 50 FLOPs on a 691.2e9 FLOPS device,
# 8 uploads and 10 gossip hops of 893342 x 32 = 28586944 bits at 10 and 50 Mb/s.
FEMNIST_COMPUTE = 16 * 665e6 / 691.2e9          # 0.015393518518...
FEMNIST_UPLINK = 8 * 28586944 / 10e6            # 22.8695552
FEMNIST_GOSSIP = 10 * 28586944 / 50e6           # 5.7173888
FEMNIST_ROUND = 28.602337518518518


def test_femnist_preset_worked_example():
    cost = round_breakdown("ce_fedavg", PRESETS["femnist-paper"], 2, 8, 10)
    assert cost.compute == pytest.approx(FEMNIST_COMPUTE, rel=1e-12)
    assert cost.uplink == pytest.approx(FEMNIST_UPLINK, rel=1e-12)
    assert cost.backhaul == pytest.approx(FEMNIST_GOSSIP, rel=1e-12)
    assert FEMNIST_COMPUTE + FEMNIST_UPLINK + FEMNIST_GOSSIP == pytest.approx(FEMNIST_ROUND, rel=1e-15)
    assert round_time("ce_fedavg", PRESETS["femnist-paper"], 2, 8, 10) == pytest.approx(FEMNIST_ROUND, rel=1e-9)


def test_total_time():
    r = round_time("ce_fedavg", PRESETS["femnist-paper"], 2, 8, 10)
    assert total_time(r, 1) == r
    assert total_time(r, 100) == pytest.approx(2860.2337518518518, rel=1e-9)
    with pytest.raises(DomainError):
        total_time(r, 0)


def test_formula_collapse_without_gossip():
    prof = SystemProfile(5e6, 1e9, 3e6, 2e6, 4e6)
    assert round_time("ce_fedavg", prof, 3, 1, 0) == pytest.approx(3 * 5e6 / 1e9 + 3e6 / 2e6, rel=1e-15)


def test_slowest_device_sets_the_compute_term():
    prof = SystemProfile(1e9, (1e9, 2e9), 1.0, 1.0, 1.0)
    assert round_breakdown("ce_fedavg", prof, 1, 1, 1).compute == 1.0


def test_baseline_formulas():
    prof = SystemProfile(1e6, 1e9, 1e6, 10e6, 50e6, 1e6)
    compute = 4 * 3 * 1e6 / 1e9
    assert round_time("fedavg", prof, 3, 4, 2) == pytest.approx(compute + 1.0)
    assert round_time("hier_favg", prof, 3, 4, 2) == pytest.approx(compute + 0.3 + 1.0)
    assert round_time("local_edge", prof, 3, 4, 2) == pytest.approx(compute + 0.4)
    assert round_time("ce_fedavg", prof, 3, 4, 2) == pytest.approx(compute + 0.4 + 0.04)


def test_rejects_nonpositive_rates():
    for bad in ({"b_d2e": 0.0}, {"b_e2e": -1.0}, {"model_bits": 0.0}, {"device_flops": (1e9, 0.0)}):
        with pytest.raises(DomainError):
            replace(PRESETS["femnist-paper"], **bad)
    with pytest.raises(DomainError):
        round_time("gossip_only", PRESETS["femnist-paper"], 1, 1, 1)


def random_profiles(count=100, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n_dev = int(rng.integers(1, 6))
        yield (SystemProfile(10 ** rng.uniform(5, 10), tuple(10 ** rng.uniform(8, 12, n_dev)),
                             10 ** rng.uniform(5, 9), 10 ** rng.uniform(5, 8), 10 ** rng.uniform(5, 8),
                             10 ** rng.uniform(5, 8)),
               int(rng.integers(1, 8)), int(rng.integers(1, 10)), int(rng.integers(1, 12)))


def test_monotone_in_schedule_and_model_size():
    for prof, tau, q, pi in random_profiles():
        base = round_time("ce_fedavg", prof, tau, q, pi)
        assert round_time("ce_fedavg", prof, tau + 1, q, pi) > base
        assert round_time("ce_fedavg", prof, tau, q + 1, pi) > base
        assert round_time("ce_fedavg", prof, tau, q, pi + 1) > base
        assert round_time("ce_fedavg", replace(prof, model_bits=prof.model_bits * 1.5), tau, q, pi) > base
        for alg in ("fedavg", "hier_favg", "local_edge"):
            b = round_time(alg, prof, tau, q, pi)
            assert round_time(alg, prof, tau + 1, q, pi) > b
            assert round_time(alg, replace(prof, model_bits=prof.model_bits * 1.5), tau, q, pi) > b


def test_monotone_in_bandwidths_and_capabilities():
    for prof, tau, q, pi in random_profiles(seed=1):
        base = round_time("ce_fedavg", prof, tau, q, pi)
        assert round_time("ce_fedavg", replace(prof, b_d2e=prof.b_d2e * 2), tau, q, pi) < base
        assert round_time("ce_fedavg", replace(prof, b_e2e=prof.b_e2e * 2), tau, q, pi) < base
        assert round_time("fedavg", replace(prof, b_d2c=prof.b_d2c * 2), tau, q, pi) < round_time("fedavg", prof, tau, q, pi)
        flops = list(prof.device_flops)
        slow = int(np.argmin(flops))
        if flops.count(flops[slow]) == 1:
            flops[slow] *= 1.01
            assert round_time("ce_fedavg", replace(prof, device_flops=tuple(flops)), tau, q, pi) < base


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_cloud_links_dominate_with_preset_rates(name):
    prof = PRESETS[name]
    assert prof.b_d2c < prof.b_d2e
    for tau, q in ((1, 16), (2, 8), (4, 4), (8, 2)):
        local = round_time("local_edge", prof, tau, q, 10)
        ce = round_time("ce_fedavg", prof, tau, q, 10)
        hier = round_time("hier_favg", prof, tau, q, 10)
        assert local <= ce <= hier
