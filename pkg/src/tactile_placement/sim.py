"""Rigid-body simulation of hand + object with per-region wrench sensing.

A Simulation instance is single-threaded state machinery: one per
environment worker. The hand model it references is immutable and shared.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .hand import HandModel, JointState
from .objects import RigidObject
from .regions import N_REGIONS, REGIONS, Region


class SimulationDiverged(RuntimeError):
    """Non-finite state after a step; carries the last stable state."""

    def __init__(self, last_state):
        super().__init__("simulation produced a non-finite state")
        self.last_state = last_state


@dataclass(frozen=True)
class PhysicsParams:
    dt: float = 0.002
    substeps: int = 10
    contact_kn: float = 5000.0  # N/m penetration stiffness
    contact_cn: float = 50.0  # N*s/m normal damping (capped per contact)
    contact_ct: float = 50.0  # N*s/m tangential viscous gain
    joint_kp: float = 900.0  # inertia-normalized PD gains: qdd = kp*e - kd*qd
    joint_kd: float = 60.0
    gravity: float = 9.81
    unstable_depth_frac: float = 0.10

    def __post_init__(self):
        if not (0.0 < self.dt <= 0.01):
            raise ValueError(f"dt must be in (0, 0.01], got {self.dt}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class SimState:
    """Hand joint state plus object pose/twist at the geometric center."""

    hand: JointState
    object_pos: np.ndarray  # geometric center, world (3,)
    object_quat: np.ndarray  # unit quaternion (w, x, y, z)
    object_linvel: np.ndarray  # velocity of the geometric-center point (3,)
    object_angvel: np.ndarray  # world angular velocity (3,)
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            self.hand.copy(),
            self.object_pos.copy(),
            self.object_quat.copy(),
            self.object_linvel.copy(),
            self.object_angvel.copy(),
            self.time,
        )


@dataclass(frozen=True)
class Contact:
    point: np.ndarray  # world, on the object surface
    normal: np.ndarray  # push direction on the object (unit)
    depth: float
    link: str
    region: Region | None
    force: np.ndarray | None = None  # world; filled by step(), not detect


@dataclass(frozen=True)
class RegionWrench:
    region: Region
    force: np.ndarray  # sensor frame, N
    torque: np.ndarray  # about the region center, sensor frame, N*m


@dataclass
class StepDiagnostics:
    min_normal_force: float = 0.0
    max_cone_residual: float = 0.0
    max_depth: float = 0.0
    max_depth_fraction: float = 0.0
    contact_count: int = 0
    unstable: bool = False


def _quat_to_mat(q):
    out = np.empty((3, 3))
    kernels._quat_to_mat(np.asarray(q, dtype=np.float64), out)
    return out


class Simulation:
    """Steps one hand + one object; exposes contacts and region wrenches."""

    def __init__(self, model: HandModel, body: RigidObject, params: PhysicsParams = None):
        self.model = model
        self.body = body
        self.params = params or PhysicsParams()
        m = model
        self._mc = kernels.MAX_CONTACTS
        self._c_point = np.zeros((self._mc, 3))
        self._c_normal = np.zeros((self._mc, 3))
        self._c_depth = np.zeros(self._mc)
        self._c_link = np.zeros(self._mc, dtype=np.int64)
        self._c_region = np.zeros(self._mc, dtype=np.int64)
        self._c_force = np.zeros((self._mc, 3))
        self._diag = np.zeros(6)
        self._n_links = m.n_joints

    # -- state helpers ------------------------------------------------------

    def initial_state(self, object_pos, object_quat=None, hand: JointState = None) -> SimState:
        q = np.asarray(object_quat if object_quat is not None else (1.0, 0, 0, 0), dtype=np.float64)
        q = q / np.linalg.norm(q)
        return SimState(
            hand=(hand.copy() if hand is not None else self.model.rest_pose()),
            object_pos=np.asarray(object_pos, dtype=np.float64).copy(),
            object_quat=q,
            object_linvel=np.zeros(3),
            object_angvel=np.zeros(3),
            time=0.0,
        )

    def _com_state(self, state: SimState):
        rot = _quat_to_mat(state.object_quat)
        rc = rot @ self.body.com_offset
        x_com = state.object_pos + rc
        v_com = state.object_linvel + np.cross(state.object_angvel, rc)
        return x_com, v_com, rot

    # -- queries ------------------------------------------------------------

    def detect_contacts(self, state: SimState) -> list:
        """Contacts at a state without stepping (no forces attached)."""
        self._validate(state)
        m = self.model
        n = self._n_links
        R = np.empty((n, 3, 3))
        p = np.empty((n, 3))
        w = np.empty((n, 3))
        v = np.empty((n, 3))
        kernels.fk_links(
            m.parent, m.org_pos, m.org_rot, m.axis,
            state.hand.positions.astype(np.float64),
            state.hand.velocities.astype(np.float64),
            R, p, w, v,
        )
        rot = _quat_to_mat(state.object_quat)
        nc = kernels.collide(
            self.body.type_code, self.body.dims,
            np.asarray(state.object_pos, dtype=np.float64), rot,
            m.parent, m.geom_type, m.cap_len, m.cap_rad,
            m.box_center, m.box_half, m.link_region, m.link_bound,
            m.patch_rect, m.patch_region,
            R, p,
            self._c_point, self._c_normal, self._c_depth, self._c_link, self._c_region,
        )
        return self._contacts(nc, with_force=False)

    def _contacts(self, nc, with_force) -> list:
        out = []
        for i in range(nc):
            reg = int(self._c_region[i])
            out.append(
                Contact(
                    point=self._c_point[i].copy(),
                    normal=self._c_normal[i].copy(),
                    depth=float(self._c_depth[i]),
                    link=self.model.links[int(self._c_link[i])].name,
                    region=REGIONS[reg] if reg >= 0 else None,
                    force=self._c_force[i].copy() if with_force else None,
                )
            )
        return out

    # -- stepping -----------------------------------------------------------

    def step(self, state: SimState, joint_targets, n_substeps=None):
        """Advance by n_substeps (default params.substeps) of params.dt under
        fixed joint targets.

        Returns (state', wrenches, contacts, diagnostics) where wrenches is
        the list of 19 RegionWrench (mean over the substeps, canonical
        order) and contacts are the final substep's contacts with forces.
        Deterministic for fixed inputs. Raises SimulationDiverged keeping
        the last stable state if the integrator produces non-finite values.
        """
        self._validate(state)
        m, b, pp = self.model, self.body, self.params
        n_sub = int(n_substeps if n_substeps is not None else pp.substeps)
        targets = np.asarray(joint_targets, dtype=np.float64)
        if targets.shape != (m.n_joints,):
            raise ValueError(f"expected {m.n_joints} joint targets, got {targets.shape}")
        targets = np.clip(targets, m.lo, m.hi)

        q = state.hand.positions.astype(np.float64).copy()
        qd = state.hand.velocities.astype(np.float64).copy()
        x_com, v_com, rot = self._com_state(state)
        quat = state.object_quat.astype(np.float64).copy()
        omega = state.object_angvel.astype(np.float64).copy()

        tactile = np.zeros((N_REGIONS, 6))
        region_fw = np.zeros((N_REGIONS, 3))
        self._diag[:] = 0.0

        nc = kernels.run_substeps(
            n_sub, pp.dt,
            m.parent, m.org_pos, m.org_rot, m.axis, m.lo, m.hi,
            m.geom_type, m.cap_len, m.cap_rad, m.box_center, m.box_half,
            m.link_region, m.link_bound, m.patch_rect, m.patch_region,
            m.region_link, m.region_center,
            pp.joint_kp, pp.joint_kd, pp.contact_kn, pp.contact_cn,
            pp.contact_ct, b.spec.friction, pp.gravity,
            q, qd, targets,
            b.type_code, b.dims, b.min_dim, b.mass, b.inertia_com_inv, b.com_offset,
            x_com, quat, v_com, omega,
            tactile, region_fw,
            self._c_point, self._c_normal, self._c_depth, self._c_link,
            self._c_region, self._c_force,
            self._diag,
        )

        diag = StepDiagnostics(
            min_normal_force=float(self._diag[0]),
            max_cone_residual=float(self._diag[1]),
            max_depth=float(self._diag[2]),
            max_depth_fraction=float(self._diag[5]),
            contact_count=int(self._diag[3]),
            unstable=bool(self._diag[5] > pp.unstable_depth_frac),
        )
        if self._diag[4] != 0.0:
            raise SimulationDiverged(state.copy())

        rot_new = _quat_to_mat(quat)
        rc = rot_new @ b.com_offset
        new_state = SimState(
            hand=JointState(q, qd),
            object_pos=x_com - rc,
            object_quat=quat,
            object_linvel=v_com + np.cross(omega, -rc),
            object_angvel=omega,
            time=state.time + n_sub * pp.dt,
        )
        tactile /= n_sub
        wrenches = [
            RegionWrench(REGIONS[i], tactile[i, :3].copy(), tactile[i, 3:].copy())
            for i in range(N_REGIONS)
        ]
        contacts = self._contacts(nc, with_force=True)
        self._last_tactile = tactile
        self._last_region_fworld = region_fw
        return new_state, wrenches, contacts, diag

    @staticmethod
    def _validate(state: SimState):
        if abs(np.linalg.norm(state.object_quat) - 1.0) > 1e-6:
            raise ValueError("object quaternion must be unit norm")


def aggregate_region_wrench(contacts, region_R, region_p) -> list:
    """Reference aggregation of contact forces into 19 per-region wrenches.

    Forces are expressed in the sensor frame; torques are taken about the
    region center. Regions without contacts report exact zeros. This is the
    plain-numpy twin of the kernel-side accumulation, used by tests and the
    trace tooling.
    """
    force = np.zeros((N_REGIONS, 3))
    torque = np.zeros((N_REGIONS, 3))
    for c in contacts:
        if c.region is None or c.force is None:
            continue
        i = c.region.index
        rot = region_R[i]
        force[i] += rot.T @ c.force
        torque[i] += rot.T @ np.cross(c.point - region_p[i], c.force)
    return [RegionWrench(REGIONS[i], force[i], torque[i]) for i in range(N_REGIONS)]
