import math

import numpy as np
import pytest

from tactile_placement.experiments import (
    ExperimentSpec,
    SamplerError,
    SensorConfiguration,
    experiment_e5_configs,
    experiment_preset,
    fingertip_mask,
    latitude_groups,
    region_appearances,
    sample_configurations,
    structured_families,
)
from tactile_placement.regions import DISTAL_REGIONS, REGIONS, mask_of, regions_of


def brute_force_counts(configs):
    counts = {r.name: 0 for r in REGIONS}
    for c in configs:
        for r in regions_of(c.mask):
            counts[r.name] += 1
    return counts


# --- structured families ---------------------------------------------------------


def test_latitude_groups_exact_sets():
    groups = {g.label: set(g.region_names()) for g in latitude_groups()}
    assert groups["distal"] == {"THdis", "FFdis", "MFdis", "RFdis", "LFdis"}
    assert groups["palm"] == {"THpalm", "FFpalm", "MFpalm", "RFpalm", "LFpalm"}
    assert groups["proximal"] == {"THprox", "FFprox", "MFprox", "RFprox", "LFprox"}
    assert groups["middle+THprox"] == {"THprox", "FFmid", "MFmid", "RFmid", "LFmid"}
    assert all(len(s) == 5 for s in groups.values())
    # thumb substitution is visible in the label
    assert any("THprox" in g.label for g in latitude_groups())


def test_structured_families_all_size5_and_valid():
    fams = structured_families()
    assert len({c.label for c in fams}) == len(fams)
    for c in fams:
        assert c.size == 5, c.label
    by_family = {}
    for c in fams:
        by_family.setdefault(c.family, []).append(c)
    assert set(by_family) == {"same-phalanx", "same-finger", "quadrant", "diagonal"}
    assert len(by_family["same-finger"]) == 5
    assert len(by_family["diagonal"]) == 4


def test_diagonals_no_two_share_finger_and_level():
    for c in structured_families():
        if c.family != "diagonal":
            continue
        seen = set()
        for r in c.regions:
            key = (r.finger, r.level)
            assert key not in seen
            seen.add(key)
        assert len({r.finger for r in c.regions}) == 5


def test_e5_configs_match_named_sets():
    cfgs = experiment_e5_configs()
    assert cfgs[0].mask == 0  # B1
    assert cfgs[1].mask == fingertip_mask()  # B2
    assert set(cfgs[2].region_names()) == {"THdis", "THprox", "THpalm", "RFdis", "MFdis"}
    assert set(cfgs[3].region_names()) == {"THdis", "THpalm", "FFprox", "MFpalm", "RFdis"}
    inter = set(cfgs[2].regions) & set(cfgs[3].regions)
    assert {r.name for r in inter} == {"THdis", "THpalm", "RFdis"}


def test_b2_mask_is_exactly_the_distal_level():
    assert fingertip_mask() == mask_of(DISTAL_REGIONS)
    assert bin(fingertip_mask()).count("1") == 5


# --- sampler ----------------------------------------------------------------------


def test_sampler_k5_count38_exactly_balanced():
    cfgs = sample_configurations(5, 38, seed=11)
    counts = brute_force_counts(cfgs)
    assert set(counts.values()) == {10}  # 38*5/19
    assert len({c.mask for c in cfgs}) == 38
    assert all(c.size == 5 for c in cfgs)


def test_sampler_pigeonhole_error():
    with pytest.raises(SamplerError):
        sample_configurations(5, 4, seed=0)


def test_sampler_k3_of_14_count14():
    pool = tuple(r for r in REGIONS if r.level != "dis")
    cfgs = sample_configurations(3, 14, seed=4, pool=pool)
    counts = region_appearances(cfgs, pool)
    assert set(counts.values()) == {3}  # 14*3/14
    for c in cfgs:
        assert all(r.level != "dis" for r in c.regions)


def test_sampler_deterministic_pure_function():
    a = sample_configurations(5, 38, seed=77)
    b = sample_configurations(5, 38, seed=77)
    assert [c.mask for c in a] == [c.mask for c in b]
    assert [c.label for c in a] == [c.label for c in b]
    c = sample_configurations(5, 38, seed=78)
    assert [x.mask for x in a] != [x.mask for x in c]


def test_sampler_random_feasible_balance():
    rng = np.random.default_rng(0)
    done = 0
    while done < 100:
        k = int(rng.integers(1, 12))
        min_count = math.ceil(19 / k) + 1
        count = int(rng.integers(min_count, min_count + 40))
        if math.comb(19, k) < count:
            continue
        cfgs = sample_configurations(k, count, seed=int(rng.integers(1 << 30)))
        counts = brute_force_counts(cfgs)
        vals = list(counts.values())
        assert max(vals) - min(vals) <= 1, (k, count)
        assert min(vals) >= 1
        assert len({c.mask for c in cfgs}) == count
        done += 1


def test_sampler_cooccurrence_diversity():
    # every region meets at least 8 distinct partners in a 38-config sweep
    cfgs = sample_configurations(5, 38, seed=5)
    partners = {r.index: set() for r in REGIONS}
    for c in cfgs:
        idx = [r.index for r in c.regions]
        for i in idx:
            partners[i].update(j for j in idx if j != i)
    assert min(len(v) for v in partners.values()) >= 8


def test_sampler_structured_prefix_present():
    cfgs = sample_configurations(5, 38, seed=3)
    families = [c.family for c in cfgs]
    assert families[:4] == ["same-phalanx"] * 4
    assert "custom" in families


def test_sampler_rejects_impossible_distinct_count():
    with pytest.raises(SamplerError):
        sample_configurations(19, 2, seed=0)  # only one distinct subset exists


# --- presets ----------------------------------------------------------------------


def test_presets_well_formed():
    e1 = experiment_preset("E1")
    assert [c.label for c in e1.configurations] == ["distal", "middle+THprox", "proximal", "palm"]
    b1 = experiment_preset("B1")
    assert len(b1.configurations) == 1 and b1.configurations[0].mask == 0
    b2 = experiment_preset("B2")
    assert b2.configurations[0].mask == fingertip_mask()
    e2 = experiment_preset("E2")
    assert len(e2.configurations) == 38
    e3 = experiment_preset("E3")
    assert len(e3.configurations) == 28
    fp = fingertip_mask()
    for c in e3.configurations:
        assert c.mask & fp == fp  # fingertips always included
        assert c.size == 8
        assert c.family == "fingertips-plus"
    for exp in ("E4-large", "E4-small", "E5-ellipsoid", "E5-cube"):
        spec = experiment_preset(exp)
        assert spec.configurations
    assert experiment_preset("E4-large").object.principal_dimensions[0] == pytest.approx(0.10)
    assert experiment_preset("E5-cube").object.shape == "cube"
    with pytest.raises(ValueError):
        experiment_preset("E9")


def test_e3_varied_pool_is_nonfingertip():
    e3 = experiment_preset("E3")
    assert e3.varied_pool is not None
    assert all(r.level != "dis" for r in e3.varied_pool)
    counts = region_appearances(e3.configurations, e3.varied_pool)
    vals = list(counts.values())
    assert max(vals) - min(vals) <= 1


def test_sensor_configuration_validation():
    with pytest.raises(ValueError):
        SensorConfiguration(1 << 19, "bad")
    with pytest.raises(ValueError):
        SensorConfiguration(1, "x", family="nope")
