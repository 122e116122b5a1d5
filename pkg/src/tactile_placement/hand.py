"""Articulated hand model: joints, coupling, region geometry, kinematics.

The model is loaded from a versioned key-value description file (see
``data/hand_shadowlike.cfg``) and packed into flat arrays consumed by the
jitted kernels. Instances are immutable after construction and safe to share
across parallel environment workers.
"""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kvfile import KVError, load_kv, parse_kv
from .regions import N_REGIONS, REGIONS, region_by_name

DEFAULT_HAND = "hand_shadowlike.cfg"


class HandSpecError(ValueError):
    """Raised when a hand description file is malformed or incomplete."""


@dataclass(frozen=True)
class Joint:
    name: str
    index: int
    parent: int  # parent link index, -1 = fixed base
    origin: np.ndarray
    origin_rot: np.ndarray
    axis: np.ndarray
    lo: float
    hi: float
    coupled_to: int  # driving joint index, -1 if actuated


@dataclass(frozen=True)
class Link:
    name: str
    index: int
    geom_type: int
    cap_len: float
    cap_rad: float
    box_center: np.ndarray
    box_half: np.ndarray
    region: int  # region index covered by this capsule, -1 if none
    tip: np.ndarray | None


@dataclass(frozen=True)
class JointState:
    positions: np.ndarray
    velocities: np.ndarray

    def copy(self) -> "JointState":
        return JointState(self.positions.copy(), self.velocities.copy())


def _rpy_matrix(r, p, y):
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


@dataclass
class HandModel:
    """Kinematic tree with 19 sensing regions, packed for the kernels."""

    name: str
    joints: list = field(default_factory=list)
    links: list = field(default_factory=list)

    # packed arrays (float64/int64), filled by _pack()
    parent: np.ndarray = None
    org_pos: np.ndarray = None
    org_rot: np.ndarray = None
    axis: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    geom_type: np.ndarray = None
    cap_len: np.ndarray = None
    cap_rad: np.ndarray = None
    box_center: np.ndarray = None
    box_half: np.ndarray = None
    link_region: np.ndarray = None
    link_bound: np.ndarray = None
    patch_rect: np.ndarray = None
    patch_region: np.ndarray = None
    region_link: np.ndarray = None
    region_center: np.ndarray = None
    actuated: np.ndarray = None
    coupled_src: np.ndarray = None
    tip_link: np.ndarray = None
    tip_local: np.ndarray = None
    reference_tips: np.ndarray = None
    palm_link: int = -1

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def actuated_count(self) -> int:
        return len(self.actuated)

    def joint_index(self, name: str) -> int:
        for j in self.joints:
            if j.name == name:
                return j.index
        raise KeyError(name)

    def rest_pose(self) -> JointState:
        n = self.n_joints
        return JointState(np.zeros(n), np.zeros(n))

    def regions_per_finger(self) -> dict:
        counts = {}
        for r in REGIONS:
            counts[r.finger] = counts.get(r.finger, 0) + 1
        return counts

    def palm_top_z(self) -> float:
        pl = self.links[self.palm_link]
        return float(pl.box_center[2] + pl.box_half[2])

    def _pack(self):
        n = len(self.joints)
        self.parent = np.array([j.parent for j in self.joints], dtype=np.int64)
        self.org_pos = np.array([j.origin for j in self.joints], dtype=np.float64)
        self.org_rot = np.array([j.origin_rot for j in self.joints], dtype=np.float64)
        self.axis = np.array([j.axis for j in self.joints], dtype=np.float64)
        self.lo = np.array([j.lo for j in self.joints], dtype=np.float64)
        self.hi = np.array([j.hi for j in self.joints], dtype=np.float64)
        self.geom_type = np.array([l.geom_type for l in self.links], dtype=np.int64)
        self.cap_len = np.array([l.cap_len for l in self.links], dtype=np.float64)
        self.cap_rad = np.array([l.cap_rad for l in self.links], dtype=np.float64)
        self.box_center = np.array([l.box_center for l in self.links], dtype=np.float64)
        self.box_half = np.array([l.box_half for l in self.links], dtype=np.float64)
        self.link_region = np.array([l.region for l in self.links], dtype=np.int64)
        bounds = np.zeros(n)
        for i, l in enumerate(self.links):
            if l.geom_type == kernels.GEOM_CAPSULE:
                bounds[i] = 0.5 * l.cap_len + l.cap_rad
            elif l.geom_type == kernels.GEOM_BOX:
                bounds[i] = float(np.linalg.norm(l.box_half))
        self.link_bound = bounds
        self.actuated = np.array(
            [j.index for j in self.joints if j.coupled_to < 0], dtype=np.int64
        )
        self.coupled_src = np.array([j.coupled_to for j in self.joints], dtype=np.int64)

        # region sensor frames: capsule midpoints, or palm patch centers
        region_link = np.full(N_REGIONS, -1, dtype=np.int64)
        region_center = np.zeros((N_REGIONS, 3))
        for l in self.links:
            if l.region >= 0:
                region_link[l.region] = l.index
                region_center[l.region] = (0.0, 0.5 * l.cap_len, 0.0)
        patches = []
        patch_region = []
        for reg_idx, (rect, link_idx) in self._palm_patches.items():
            region_link[reg_idx] = link_idx
            top_z = self.links[link_idx].box_center[2] + self.links[link_idx].box_half[2]
            region_center[reg_idx] = (
                0.5 * (rect[0] + rect[1]),
                0.5 * (rect[2] + rect[3]),
                top_z,
            )
            patches.append(rect)
            patch_region.append(reg_idx)
        self.patch_rect = np.array(patches, dtype=np.float64)
        self.patch_region = np.array(patch_region, dtype=np.int64)
        self.region_link = region_link
        self.region_center = region_center

        tips = [(l.region, l.index, l.tip) for l in self.links if l.tip is not None]
        # canonical finger order TH, FF, MF, RF, LF via the distal regions
        tips.sort(key=lambda t: REGIONS[t[0]].index)
        self.tip_link = np.array([t[1] for t in tips], dtype=np.int64)
        self.tip_local = np.array([t[2] for t in tips], dtype=np.float64)


def _load_text(spec):
    if spec is None:
        ref = importlib.resources.files("tactile_placement").joinpath("data", DEFAULT_HAND)
        return ref.read_text(encoding="utf-8"), f"package:{DEFAULT_HAND}"
    spec = str(spec)
    return None, spec


def build_hand(spec=None) -> HandModel:
    """Build a HandModel from a description file path (default packaged hand).

    Raises HandSpecError with file/line/field context on malformed input,
    and after parsing validates the full region set, tree ordering, limits,
    couplings and patch disjointness.
    """
    text, path = _load_text(spec)
    try:
        kv = parse_kv(text, path) if text is not None else load_kv(path)
    except KVError as e:
        raise HandSpecError(str(e)) from None
    try:
        return _build_from_kv(kv)
    except KVError as e:
        raise HandSpecError(str(e)) from None


def _build_from_kv(kv) -> HandModel:
    head = kv.require("hand")
    model = HandModel(name=head.get_str("name", "hand"))

    joint_secs = kv.sections_with_prefix("joint")
    if not joint_secs:
        raise HandSpecError(f"{kv.path}: no [joint ...] sections found")

    link_index = {}
    couplings = []
    for sec in joint_secs:
        jname = sec.name.split(None, 1)[1]
        lname = sec.get_str("link", jname)
        parent_name = sec.get_str("parent")
        if parent_name == "root":
            parent = -1
        elif parent_name in link_index:
            parent = link_index[parent_name]
        else:
            raise KVError(
                f"parent link {parent_name!r} not defined before this joint "
                "(sections must be ordered parent-first)",
                kv.path,
                sec.line_of("parent"),
                "parent",
            )
        origin = np.array(sec.get_vec("origin", 3))
        rpy = sec.get_vec("rpy", 3, default=None)
        origin_rot = _rpy_matrix(*rpy) if rpy is not None else np.eye(3)
        ax = np.array(sec.get_vec("axis", 3))
        nrm = np.linalg.norm(ax)
        if nrm < 1e-12:
            raise KVError("axis must be non-zero", kv.path, sec.line_of("axis"), "axis")
        ax = ax / nrm
        limits = sec.get_vec("limits", 2)
        if not (np.isfinite(limits).all() and limits[0] < limits[1]):
            raise KVError(
                f"limits must be finite and ordered lo < hi, got {limits}",
                kv.path,
                sec.line_of("limits"),
                "limits",
            )

        idx = len(model.joints)
        coupled = sec.get_str("coupled_to", None)
        model.joints.append(
            Joint(jname, idx, parent, origin, origin_rot, ax, limits[0], limits[1], -1)
        )
        if coupled is not None:
            couplings.append((idx, coupled))

        geom_type = kernels.GEOM_NONE
        cap_len = cap_rad = 0.0
        box_center = np.zeros(3)
        box_half = np.zeros(3)
        region = -1
        if sec.has("capsule"):
            geom_type = kernels.GEOM_CAPSULE
            cap_len, cap_rad = sec.get_vec("capsule", 2)
            if cap_len <= 0 or cap_rad <= 0:
                raise KVError("capsule length/radius must be > 0", kv.path, sec.line_of("capsule"), "capsule")
        if sec.has("box"):
            if geom_type != kernels.GEOM_NONE:
                raise KVError("link cannot have both capsule and box", kv.path, sec.line, "box")
            geom_type = kernels.GEOM_BOX
            vals = sec.get_vec("box", 6)
            box_center = np.array(vals[:3])
            box_half = np.array(vals[3:])
            if (box_half <= 0).any():
                raise KVError("box half extents must be > 0", kv.path, sec.line_of("box"), "box")
            model.palm_link = idx
        if sec.has("region"):
            if geom_type != kernels.GEOM_CAPSULE:
                raise KVError("region on a joint section requires a capsule", kv.path, sec.line_of("region"), "region")
            try:
                region = region_by_name(sec.get_str("region")).index
            except KeyError as e:
                raise KVError(str(e), kv.path, sec.line_of("region"), "region") from None
        tip = sec.get_vec("tip", 3, default=None)
        if tip is not None and region < 0:
            raise KVError("tip requires a sensing region on the same link", kv.path, sec.line_of("tip"), "tip")
        model.links.append(
            Link(lname, idx, geom_type, cap_len, cap_rad, box_center, box_half, region,
                 np.array(tip) if tip is not None else None)
        )
        if lname in link_index:
            raise KVError(f"duplicate link name {lname!r}", kv.path, sec.line, "link")
        link_index[lname] = idx

    # resolve couplings
    name_to_idx = {j.name: j.index for j in model.joints}
    for idx, drv in couplings:
        if drv not in name_to_idx:
            raise HandSpecError(f"{kv.path}: coupled_to references unknown joint {drv!r}")
        j = model.joints[idx]
        model.joints[idx] = Joint(
            j.name, j.index, j.parent, j.origin, j.origin_rot, j.axis, j.lo, j.hi,
            name_to_idx[drv],
        )

    # palm patches
    model._palm_patches = {}
    for sec in kv.sections_with_prefix("region"):
        rname = sec.name.split(None, 1)[1]
        try:
            reg = region_by_name(rname)
        except KeyError as e:
            raise KVError(str(e), kv.path, sec.line) from None
        lname = sec.get_str("link")
        if lname not in link_index:
            raise KVError(f"unknown link {lname!r}", kv.path, sec.line_of("link"), "link")
        li = link_index[lname]
        if model.links[li].geom_type != kernels.GEOM_BOX:
            raise KVError("palm patch sections must reference the box link", kv.path, sec.line_of("link"), "link")
        rect = sec.get_vec("rect", 4)
        if not (rect[0] < rect[1] and rect[2] < rect[3]):
            raise KVError("rect must be xmin xmax ymin ymax with min < max", kv.path, sec.line_of("rect"), "rect")
        model._palm_patches[reg.index] = (rect, li)

    _validate(model, kv.path)

    ref = kv.section("reference")
    model._pack()
    if ref is not None:
        tips = [ref.get_vec(f"tip_{i}", 3) for i in range(len(model.tip_link))]
        model.reference_tips = np.array(tips)
    return model


def _validate(model: HandModel, path: str):
    covered = {}
    for l in model.links:
        if l.region >= 0:
            if l.region in covered:
                raise HandSpecError(f"{path}: region {REGIONS[l.region].name} mapped to two links")
            covered[l.region] = l.name
    for reg_idx, (rect, li) in model._palm_patches.items():
        if reg_idx in covered:
            raise HandSpecError(f"{path}: region {REGIONS[reg_idx].name} mapped to two links")
        covered[reg_idx] = model.links[li].name
    missing = [r.name for r in REGIONS if r.index not in covered]
    if missing:
        raise HandSpecError(f"{path}: missing sensing regions: {', '.join(missing)}")

    # palm patches must not overlap
    patches = sorted(model._palm_patches.items())
    for i in range(len(patches)):
        for j in range(i + 1, len(patches)):
            a, b = patches[i][1][0], patches[j][1][0]
            if a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]:
                raise HandSpecError(
                    f"{path}: palm patches {REGIONS[patches[i][0]].name} and "
                    f"{REGIONS[patches[j][0]].name} overlap"
                )

    if model.palm_link < 0:
        raise HandSpecError(f"{path}: no palm box link defined")

    for j in model.joints:
        if j.coupled_to >= 0 and model.joints[j.coupled_to].coupled_to >= 0:
            raise HandSpecError(f"{path}: joint {j.name} coupled to a passive joint")

    tips = [l for l in model.links if l.tip is not None]
    if len(tips) != 5:
        raise HandSpecError(f"{path}: expected 5 fingertip links, found {len(tips)}")


def apply_coupling(commanded: np.ndarray, model: HandModel) -> np.ndarray:
    """Expand actuated targets to per-joint targets; each passive distal
    joint tracks its driving joint's target clamped into its own limits."""
    commanded = np.asarray(commanded, dtype=np.float64)
    if commanded.shape != (model.actuated_count,):
        raise ValueError(
            f"expected {model.actuated_count} actuated targets, got shape {commanded.shape}"
        )
    full = np.zeros(model.n_joints)
    full[model.actuated] = commanded
    passive = np.where(model.coupled_src >= 0)[0]
    full[passive] = np.clip(
        full[model.coupled_src[passive]], model.lo[passive], model.hi[passive]
    )
    return full


def forward_kinematics(model: HandModel, state: JointState):
    """World link poses plus derived quantities for a joint state.

    Returns (R, p, fingertips, region_R, region_p): link rotations (n,3,3)
    and origins (n,3), fingertip positions (5,3) ordered TH, FF, MF, RF, LF,
    and the 19 region sensor frames.
    """
    q = np.asarray(state.positions, dtype=np.float64)
    qd = np.asarray(state.velocities, dtype=np.float64)
    if q.shape != (model.n_joints,) or qd.shape != (model.n_joints,):
        raise ValueError(f"expected {model.n_joints} joint positions/velocities")
    n = model.n_joints
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    kernels.fk_links(model.parent, model.org_pos, model.org_rot, model.axis, q, qd, R, p, w, v)
    tips = np.empty((5, 3))
    for i in range(5):
        li = model.tip_link[i]
        tips[i] = p[li] + R[li] @ model.tip_local[i]
    region_R = R[model.region_link]
    region_p = np.einsum("nij,nj->ni", region_R, model.region_center) + p[model.region_link]
    return R, p, tips, region_R, region_p
