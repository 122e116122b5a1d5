"""The 19 sensing regions of the hand and their canonical ordering.

Every observation layout, sweep mask, importance table and report row uses
the same canonical order, so it is defined exactly once, here: fingers in
the order TH, FF, MF, RF, LF, and within each finger from the tip inward
(dis, mid, prox, palm). The thumb has no middle phalanx, giving
3 + 4*4 = 19 regions.
"""

from dataclasses import dataclass

FINGERS = ("TH", "FF", "MF", "RF", "LF")
LEVELS = ("dis", "mid", "prox", "palm")


@dataclass(frozen=True)
class Region:
    index: int
    name: str
    finger: str
    level: str

    def __str__(self) -> str:
        return self.name


def _build_regions():
    regions = []
    for finger in FINGERS:
        for level in LEVELS:
            if finger == "TH" and level == "mid":
                continue
            regions.append(Region(len(regions), f"{finger}{level}", finger, level))
    return tuple(regions)


REGIONS = _build_regions()
N_REGIONS = len(REGIONS)
REGION_NAMES = tuple(r.name for r in REGIONS)
DISTAL_REGIONS = tuple(r for r in REGIONS if r.level == "dis")
WRENCH_DIM = 6  # force xyz + torque xyz per region

_LOOKUP = {r.name.lower(): r for r in REGIONS}
# long spelling of the distal level is accepted too (both appear in the wild)
for _r in REGIONS:
    if _r.level == "dis":
        _LOOKUP[f"{_r.finger}dist".lower()] = _r


def region_by_name(name: str) -> Region:
    """Look up a region by name, accepting both 'XXdis' and 'XXdist'."""
    try:
        return _LOOKUP[name.strip().lower()]
    except KeyError:
        raise KeyError(
            f"unknown region {name!r}; expected one of {', '.join(REGION_NAMES)}"
        ) from None


def mask_of(regions) -> int:
    """Bitmask over canonical region order; bit i set = region i active."""
    mask = 0
    for r in regions:
        if isinstance(r, str):
            r = region_by_name(r)
        mask |= 1 << r.index
    return mask


def regions_of(mask: int):
    """Regions contained in a bitmask, in canonical order."""
    return tuple(r for r in REGIONS if mask >> r.index & 1)
