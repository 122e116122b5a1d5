"""Sensor-configuration generation and the built-in experiment presets.

Sweeps sample k-region subsets under three constraints: every region appears
a near-equal number of times (max-min appearance count <= 1), no
configuration repeats, and each configuration belongs to a declared family
(geometric/categorical sets first, balanced random fills after).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .objects import ObjectSpec
from .regions import DISTAL_REGIONS, FINGERS, LEVELS, N_REGIONS, REGIONS, mask_of, regions_of

FAMILIES = (
    "latitude-group",
    "same-phalanx",
    "same-finger",
    "quadrant",
    "diagonal",
    "fingertips-plus",
    "custom",
)


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SensorConfiguration:
    mask: int
    label: str
    family: str = "custom"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not (0 <= self.mask < 1 << N_REGIONS):
            raise ValueError(f"mask {self.mask:#x} out of range")

    @property
    def regions(self):
        return regions_of(self.mask)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    def region_names(self):
        return tuple(r.name for r in self.regions)


def _cfg(names, label, family) -> SensorConfiguration:
    return SensorConfiguration(mask_of(names), label, family)


def latitude_groups() -> list:
    """The four same-phalanx-level groups of Experiment 1 (the thumb lends
    THprox to the middle group since it has no middle phalanx)."""
    groups = [
        _cfg([f"{f}dis" for f in FINGERS], "distal", "latitude-group"),
        _cfg(["THprox"] + [f"{f}mid" for f in FINGERS if f != "TH"],
             "middle+THprox", "latitude-group"),
        _cfg([f"{f}prox" for f in FINGERS], "proximal", "latitude-group"),
        _cfg([f"{f}palm" for f in FINGERS], "palm", "latitude-group"),
    ]
    return groups


def structured_families() -> list:
    """Named k=5 configuration sets: same-phalanx rows, same-finger columns
    (with a declared anchor region), quadrant blocks and diagonals."""
    out = []
    for g in latitude_groups():
        out.append(replace(g, label=f"phalanx-{g.label}", family="same-phalanx"))

    # same-finger columns: the four finger columns anchored by the thumb tip;
    # the thumb column (3 regions) is anchored by the MF and RF tips
    for f in ("FF", "MF", "RF", "LF"):
        names = [f"{f}{lvl}" for lvl in LEVELS] + ["THdis"]
        out.append(_cfg(names, f"finger-{f}+THdis", "same-finger"))
    out.append(_cfg(["THdis", "THprox", "THpalm", "MFdis", "RFdis"],
                    "finger-TH+MFdis+RFdis", "same-finger"))

    # quadrants: {radial, ulnar} x {distal-half, proximal-half}; the middle
    # finger belongs to both halves of the hand; blocks truncate to k=5 in
    # canonical order
    radial, ulnar = ("TH", "FF", "MF"), ("MF", "RF", "LF")
    half_levels = {"distal": ("dis", "mid"), "proximal": ("prox", "palm")}
    for side, fingers in (("radial", radial), ("ulnar", ulnar)):
        for half, levels in half_levels.items():
            names = [
                r.name for r in REGIONS if r.finger in fingers and r.level in levels
            ][:5]
            out.append(_cfg(names, f"quadrant-{side}-{half}", "quadrant"))

    # diagonals: step the level as the finger advances, so no two regions
    # share both finger and level; the thumb substitutes prox for mid
    for offset in range(4):
        names = []
        for fi, f in enumerate(FINGERS):
            lvl = LEVELS[(fi + offset) % 4]
            if f == "TH" and lvl == "mid":
                lvl = "prox"
            names.append(f"{f}{lvl}")
        out.append(_cfg(names, f"diagonal-{offset}", "diagonal"))
    return out


def fingertip_mask() -> int:
    return mask_of(DISTAL_REGIONS)


def experiment_e5_configs() -> list:
    """The four shape-variation configurations: both baselines, the best
    5-sensor set from the tennis-ball sweep, and the five best individual
    regions from the same sweep."""
    return [
        SensorConfiguration(0, "B1", "custom"),
        SensorConfiguration(fingertip_mask(), "B2", "custom"),
        _cfg(["THdis", "THprox", "THpalm", "RFdis", "MFdis"], "best-tennis", "custom"),
        _cfg(["THdis", "THpalm", "FFprox", "MFpalm", "RFdis"], "top5-individual", "custom"),
    ]


def sample_configurations(k, count, seed, pool=None) -> list:
    """Draw `count` distinct k-region configurations with balanced region
    usage: appearance counts differ by at most one, deterministically per
    seed.

    For the full 19-region pool at k=5 the structured families lead the list
    (as many as keep exact balance achievable); remaining slots are balanced
    random fills labeled custom. `pool` restricts sampling to a region
    subset (e.g. the 14 non-fingertip regions).
    """
    pool = tuple(pool) if pool is not None else REGIONS
    P = len(pool)
    if not 1 <= k <= P:
        raise SamplerError(f"k={k} out of range for a {P}-region pool")
    min_count = math.ceil(P / k) + 1
    if count < min_count:
        raise SamplerError(
            f"count={count} too small: {P} regions cannot all appear with "
            f"balance headroom (need at least {min_count} configurations of size {k})"
        )
    if math.comb(P, k) < count:
        raise SamplerError(f"only {math.comb(P, k)} distinct size-{k} subsets exist")

    rng = np.random.default_rng(seed)
    pool_idx = np.array([r.index for r in pool])
    pos_of = {int(r.index): i for i, r in enumerate(pool)}

    structured = []
    if P == N_REGIONS and k == 5:
        structured = structured_families()

    total = count * k
    base, extras = divmod(total, P)

    def targets_for(counts):
        """Per-region totals (base or base+1) that minimize overflow, or
        None if `counts` already exceeds any achievable target."""
        order = sorted(range(P), key=lambda i: (-counts[i], i))
        tgt = np.full(P, base, dtype=np.int64)
        tgt[order[:extras]] = base + 1
        if (counts > tgt).any():
            return None
        return tgt

    chosen = []
    counts = np.zeros(P, dtype=np.int64)
    for n_struct in range(min(len(structured), count), -1, -1):
        counts[:] = 0
        for cfgn in structured[:n_struct]:
            for r in cfgn.regions:
                counts[pos_of[r.index]] += 1
        tgt = targets_for(counts)
        if tgt is None:
            continue
        needs = tgt - counts
        remaining = count - n_struct
        if needs.max() <= remaining and needs.sum() == k * remaining:
            chosen = list(structured[:n_struct])
            break
    else:
        raise SamplerError("no balanced arrangement found")  # pragma: no cover

    needs = (targets_for(counts) - counts).astype(np.int64)
    seen = {c.mask for c in chosen}
    fill_idx = 0
    rounds = count - len(chosen)
    for rnd in range(rounds):
        for _attempt in range(200):
            # k regions of highest remaining need, ties shuffled
            jitter = rng.permutation(P)
            order = sorted(range(P), key=lambda i: (-needs[i], jitter[i]))
            pick = sorted(order[:k])
            mask = 0
            for i in pick:
                mask |= 1 << int(pool_idx[i])
            if mask not in seen:
                break
        else:
            raise SamplerError("could not find a distinct balanced configuration")
        seen.add(mask)
        for i in pick:
            needs[i] -= 1
        fill_idx += 1
        names = "+".join(REGIONS[int(pool_idx[i])].name for i in pick)
        chosen.append(SensorConfiguration(mask, f"custom-{fill_idx:02d}-{names}", "custom"))

    appearances = region_appearances(chosen, pool)
    vals = list(appearances.values())
    if max(vals) - min(vals) > 1 or min(vals) < 1:
        raise SamplerError("internal error: balance violated")  # pragma: no cover
    return chosen


def region_appearances(configs, pool=None) -> dict:
    pool = tuple(pool) if pool is not None else REGIONS
    counts = {r: 0 for r in pool}
    for c in configs:
        for r in c.regions:
            if r in counts:
                counts[r] += 1
    return counts


# ---------------------------------------------------------------------------
# experiment presets


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    object: ObjectSpec
    configurations: list
    seeds_per_config: int = 3
    varied_pool: tuple | None = None  # regions varied by the sweep, if restricted
    baseline_label: str | None = None  # convergence anchor within the sweep
    description: str = ""


TENNIS = ObjectSpec.from_density("sphere", (0.07,), 330.0)
SOFTBALL = ObjectSpec.from_density("sphere", (0.10,), 330.0)
GOLF = ObjectSpec.from_density("sphere", (0.04,), 330.0)
ELLIPSOID = ObjectSpec.from_density("ellipsoid", (0.045, 0.035, 0.02722), 330.0)
CUBE = ObjectSpec.from_density("cube", (0.05642,), 330.0)

EXPERIMENT_IDS = (
    "B1", "B2", "E1", "E2", "E3", "E4-large", "E4-small", "E5-ellipsoid", "E5-cube",
)


def experiment_preset(
    exp_id: str,
    seeds_per_config: int = 3,
    sweep_count: int = None,
    sweep_seed: int = 20240,
) -> ExperimentSpec:
    """Built-in experiment definitions. Counts default to the balance-exact
    sizes (38 for k=5 over 19 regions, 28 for k=3 over the 14 non-fingertip
    regions) and are configurable."""
    non_distal = tuple(r for r in REGIONS if r.level != "dis")
    if exp_id == "B1":
        return ExperimentSpec(
            "B1", TENNIS, [SensorConfiguration(0, "B1", "custom")],
            seeds_per_config, description="no-tactile baseline (zero-padded)",
        )
    if exp_id == "B2":
        return ExperimentSpec(
            "B2", TENNIS, [SensorConfiguration(fingertip_mask(), "B2", "custom")],
            seeds_per_config, description="fingertip-sensor baseline",
        )
    if exp_id == "E1":
        return ExperimentSpec(
            "E1", TENNIS, latitude_groups(), seeds_per_config,
            baseline_label="distal",
            description="sensor placement latitude: distal/middle/proximal/palm rows",
        )
    if exp_id == "E2":
        cfgs = sample_configurations(5, sweep_count or 38, sweep_seed)
        return ExperimentSpec(
            "E2", TENNIS, cfgs, seeds_per_config,
            description="balanced 5-of-19 sweep, tennis-ball sphere",
        )
    if exp_id == "E3":
        subs = sample_configurations(3, sweep_count or 28, sweep_seed, pool=non_distal)
        fp = fingertip_mask()
        cfgs = [
            SensorConfiguration(fp | s.mask, f"fp+{'+'.join(s.region_names())}",
                                "fingertips-plus")
            for s in subs
        ]
        return ExperimentSpec(
            "E3", TENNIS, cfgs, seeds_per_config, varied_pool=non_distal,
            description="fingertips plus 3-of-14 sweep",
        )
    if exp_id == "E4-large":
        cfgs = sample_configurations(5, sweep_count or 38, sweep_seed + 1)
        return ExperimentSpec(
            "E4-large", SOFTBALL, cfgs, seeds_per_config,
            description="balanced 5-of-19 sweep, 10 cm sphere",
        )
    if exp_id == "E4-small":
        cfgs = sample_configurations(5, sweep_count or 38, sweep_seed + 2)
        return ExperimentSpec(
            "E4-small", GOLF, cfgs, seeds_per_config,
            description="balanced 5-of-19 sweep, 4 cm sphere",
        )
    if exp_id == "E5-ellipsoid":
        return ExperimentSpec(
            "E5-ellipsoid", ELLIPSOID, experiment_e5_configs(), seeds_per_config,
            baseline_label="B1", description="shape variation: ellipsoid",
        )
    if exp_id == "E5-cube":
        return ExperimentSpec(
            "E5-cube", CUBE, experiment_e5_configs(), seeds_per_config,
            baseline_label="B1", description="shape variation: cube",
        )
    raise ValueError(f"unknown experiment id {exp_id!r}; expected one of {EXPERIMENT_IDS}")
