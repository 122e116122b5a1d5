"""Manipulated object primitives and their rigid-body properties."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

SHAPES = ("sphere", "ellipsoid", "cube")

_SHAPE_CODE = {
    "sphere": kernels.OBJ_SPHERE,
    "ellipsoid": kernels.OBJ_ELLIPSOID,
    "cube": kernels.OBJ_CUBE,
}


class ObjectSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    """Shape primitive with mass properties.

    principal_dimensions: sphere -> (diameter,); ellipsoid -> 3 semi-axes;
    cube -> (edge,). com_offset is measured from the geometric center in the
    body frame and must stay strictly inside the smallest semi-dimension.
    """

    shape: str
    principal_dimensions: tuple
    mass: float
    com_offset: tuple = (0.0, 0.0, 0.0)
    friction: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ObjectSpecError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        dims = tuple(float(d) for d in self.principal_dimensions)
        want = 3 if self.shape == "ellipsoid" else 1
        if len(dims) != want:
            raise ObjectSpecError(f"{self.shape} takes {want} dimension(s), got {len(dims)}")
        if any(d <= 0 for d in dims):
            raise ObjectSpecError(f"dimensions must be > 0, got {dims}")
        if self.mass <= 0:
            raise ObjectSpecError(f"mass must be > 0, got {self.mass}")
        if len(self.com_offset) != 3:
            raise ObjectSpecError("com_offset must have 3 components")
        if np.linalg.norm(self.com_offset) >= self.min_semi_dimension():
            raise ObjectSpecError(
                f"|com_offset|={np.linalg.norm(self.com_offset):.4f} must be smaller "
                f"than the smallest semi-dimension {self.min_semi_dimension():.4f}"
            )
        if self.friction < 0:
            raise ObjectSpecError("friction must be >= 0")
        object.__setattr__(self, "principal_dimensions", dims)
        object.__setattr__(self, "com_offset", tuple(float(c) for c in self.com_offset))

    def min_semi_dimension(self) -> float:
        if self.shape == "sphere":
            return 0.5 * self.principal_dimensions[0]
        if self.shape == "cube":
            return 0.5 * self.principal_dimensions[0]
        return min(self.principal_dimensions)

    def volume(self) -> float:
        if self.shape == "sphere":
            return math.pi / 6.0 * self.principal_dimensions[0] ** 3
        if self.shape == "cube":
            return self.principal_dimensions[0] ** 3
        a, b, c = self.principal_dimensions
        return 4.0 / 3.0 * math.pi * a * b * c

    @classmethod
    def from_density(cls, shape, principal_dimensions, density, **kw) -> "ObjectSpec":
        probe = cls(shape, principal_dimensions, mass=1.0,
                    com_offset=(0, 0, 0), friction=kw.pop("friction", 1.0))
        return cls(shape, principal_dimensions, mass=density * probe.volume(), **kw)

    def with_randomization(self, mass_scale: float, com_offset) -> "ObjectSpec":
        return ObjectSpec(self.shape, self.principal_dimensions,
                          self.mass * mass_scale, tuple(com_offset), self.friction)


@dataclass(frozen=True)
class RigidObject:
    """Packed mass/geometry data for the kernels."""

    spec: ObjectSpec
    type_code: int
    dims: np.ndarray  # sphere: (r,0,0); ellipsoid: semi-axes; cube: (half,0,0)
    min_dim: float
    mass: float
    com_offset: np.ndarray
    inertia_com: np.ndarray
    inertia_com_inv: np.ndarray


def _uniform_inertia_about_center(spec: ObjectSpec) -> np.ndarray:
    m = spec.mass
    if spec.shape == "sphere":
        r = 0.5 * spec.principal_dimensions[0]
        return np.eye(3) * (2.0 / 5.0 * m * r * r)
    if spec.shape == "cube":
        e = spec.principal_dimensions[0]
        return np.eye(3) * (m * e * e / 6.0)
    a, b, c = spec.principal_dimensions
    return np.diag([
        m / 5.0 * (b * b + c * c),
        m / 5.0 * (a * a + c * c),
        m / 5.0 * (a * a + b * b),
    ])


def make_object(spec: ObjectSpec) -> RigidObject:
    """Build the rigid body: inertia about the (possibly offset) center of
    mass via the inverse parallel-axis shift from the uniform-body inertia
    about the geometric center."""
    i_center = _uniform_inertia_about_center(spec)
    r = np.asarray(spec.com_offset, dtype=np.float64)
    shift = spec.mass * (np.dot(r, r) * np.eye(3) - np.outer(r, r))
    i_com = i_center - shift
    eig = np.linalg.eigvalsh(i_com)
    if eig.min() <= 0:
        raise ObjectSpecError(
            f"com_offset {spec.com_offset} makes the inertia tensor non-positive-definite"
        )
    if spec.shape == "sphere":
        dims = np.array([0.5 * spec.principal_dimensions[0], 0.0, 0.0])
        min_dim = dims[0]
    elif spec.shape == "cube":
        dims = np.array([0.5 * spec.principal_dimensions[0], 0.0, 0.0])
        min_dim = dims[0]
    else:
        dims = np.array(spec.principal_dimensions, dtype=np.float64)
        min_dim = dims.min()
    return RigidObject(
        spec=spec,
        type_code=_SHAPE_CODE[spec.shape],
        dims=dims,
        min_dim=float(min_dim),
        mass=float(spec.mass),
        com_offset=r,
        inertia_com=i_com,
        inertia_com_inv=np.linalg.inv(i_com),
    )
