"""Hot numeric kernels: forward kinematics, analytic contacts, and the
physics substep loop.

Everything here is loop-style code over plain float64/int64 arrays so the
same source runs jitted under numba (default) or as plain Python when
``TPL_BACKEND=numpy`` is set. See :mod:`tactile_placement.backend`.

Conventions:
  * quaternions are scalar-first (w, x, y, z), unit norm
  * capsules run from their link origin along local +y, length L, radius r
  * contact normals are the push direction on the object (equal to the
    outward normal of the hand surface at the witness point)
  * the object state integrated here lives at the center of mass; the
    geometric center used for collision is x_com - R @ com_off
"""

import numpy as np

from .backend import njit

MAX_CONTACTS = 32

GEOM_NONE = 0
GEOM_CAPSULE = 1
GEOM_BOX = 2

OBJ_SPHERE = 0
OBJ_ELLIPSOID = 1
OBJ_CUBE = 2


# ---------------------------------------------------------------------------
# small 3D helpers


@njit(cache=True)
def _mat_mul3(a, b, out):
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True)
def _mat_vec3(a, v, out):
    for i in range(3):
        out[i] = a[i, 0] * v[0] + a[i, 1] * v[1] + a[i, 2] * v[2]


@njit(cache=True)
def _mat_t_vec3(a, v, out):
    for i in range(3):
        out[i] = a[0, i] * v[0] + a[1, i] * v[1] + a[2, i] * v[2]


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _axis_angle_mat(axis, angle, out):
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out[0, 0] = c + x * x * t
    out[0, 1] = x * y * t - z * s
    out[0, 2] = x * z * t + y * s
    out[1, 0] = x * y * t + z * s
    out[1, 1] = c + y * y * t
    out[1, 2] = y * z * t - x * s
    out[2, 0] = x * z * t - y * s
    out[2, 1] = y * z * t + x * s
    out[2, 2] = c + z * z * t


@njit(cache=True)
def _quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def _quat_mul(a, b, out):
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


@njit(cache=True)
def _norm3(v):
    return np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


# ---------------------------------------------------------------------------
# forward kinematics (positions, orientations, spatial velocities)


@njit(cache=True)
def fk_links(parent, org_pos, org_rot, axis, q, qd, R, p, w, v):
    """Fill world rotation R[n,3,3], origin p[n,3], angular velocity w[n,3]
    and origin linear velocity v[n,3] for every link. Links must be ordered
    parent-before-child; parent[i] < 0 means child of the fixed base."""
    n = parent.shape[0]
    rj = np.empty((3, 3))
    ra = np.empty((3, 3))
    tmp = np.empty(3)
    wax = np.empty(3)
    for i in range(n):
        pa = parent[i]
        if pa < 0:
            # fixed base: identity frame, zero twist
            for r_ in range(3):
                for c_ in range(3):
                    rj[r_, c_] = org_rot[i, r_, c_]
            p[i, 0] = org_pos[i, 0]
            p[i, 1] = org_pos[i, 1]
            p[i, 2] = org_pos[i, 2]
            w[i, 0] = 0.0
            w[i, 1] = 0.0
            w[i, 2] = 0.0
            v[i, 0] = 0.0
            v[i, 1] = 0.0
            v[i, 2] = 0.0
        else:
            _mat_mul3(R[pa], org_rot[i], rj)
            _mat_vec3(R[pa], org_pos[i], tmp)
            p[i, 0] = p[pa, 0] + tmp[0]
            p[i, 1] = p[pa, 1] + tmp[1]
            p[i, 2] = p[pa, 2] + tmp[2]
            # origin velocity: parent origin velocity + w_parent x offset
            v[i, 0] = v[pa, 0] + w[pa, 1] * tmp[2] - w[pa, 2] * tmp[1]
            v[i, 1] = v[pa, 1] + w[pa, 2] * tmp[0] - w[pa, 0] * tmp[2]
            v[i, 2] = v[pa, 2] + w[pa, 0] * tmp[1] - w[pa, 1] * tmp[0]
            w[i, 0] = w[pa, 0]
            w[i, 1] = w[pa, 1]
            w[i, 2] = w[pa, 2]
        _mat_vec3(rj, axis[i], wax)
        w[i, 0] += wax[0] * qd[i]
        w[i, 1] += wax[1] * qd[i]
        w[i, 2] += wax[2] * qd[i]
        _axis_angle_mat(axis[i], q[i], ra)
        _mat_mul3(rj, ra, R[i])


# ---------------------------------------------------------------------------
# closest-point primitives


@njit(cache=True)
def _closest_t_on_segment(a, b, pnt):
    abx = b[0] - a[0]
    aby = b[1] - a[1]
    abz = b[2] - a[2]
    denom = abx * abx + aby * aby + abz * abz
    if denom < 1e-18:
        return 0.0
    t = ((pnt[0] - a[0]) * abx + (pnt[1] - a[1]) * aby + (pnt[2] - a[2]) * abz) / denom
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return t


@njit(cache=True)
def _ellipsoid_closest(semi, y, s_out):
    """Closest point on the ellipsoid surface to y (ellipsoid frame).

    Returns (distance, inside) where inside=1.0 when y lies inside the
    surface. Bisection on the standard rational root function; robust for
    interior and exterior queries."""
    a0, a1, a2 = semi[0], semi[1], semi[2]
    u0, u1, u2 = abs(y[0]), abs(y[1]), abs(y[2])
    lvl = (y[0] / a0) ** 2 + (y[1] / a1) ** 2 + (y[2] / a2) ** 2
    inside = 1.0 if lvl < 1.0 else 0.0
    if u0 < 1e-14 and u1 < 1e-14 and u2 < 1e-14:
        # center query: nearest surface lies along the smallest semi-axis
        k = 0
        if a1 < semi[k]:
            k = 1
        if a2 < semi[k]:
            k = 2
        s_out[0] = 0.0
        s_out[1] = 0.0
        s_out[2] = 0.0
        s_out[k] = semi[k]
        return semi[k], inside
    amin2 = a0 * a0
    if a1 * a1 < amin2:
        amin2 = a1 * a1
    if a2 * a2 < amin2:
        amin2 = a2 * a2
    amax = a0
    if a1 > amax:
        amax = a1
    if a2 > amax:
        amax = a2
    lo = -amin2 + 1e-14
    hi = amax * np.sqrt(u0 * u0 + u1 * u1 + u2 * u2) + amax * amax
    for _ in range(90):
        t = 0.5 * (lo + hi)
        f = (
            (a0 * u0 / (t + a0 * a0)) ** 2
            + (a1 * u1 / (t + a1 * a1)) ** 2
            + (a2 * u2 / (t + a2 * a2)) ** 2
            - 1.0
        )
        if f > 0.0:
            lo = t
        else:
            hi = t
    t = 0.5 * (lo + hi)
    s_out[0] = a0 * a0 * y[0] / (t + a0 * a0)
    s_out[1] = a1 * a1 * y[1] / (t + a1 * a1)
    s_out[2] = a2 * a2 * y[2] / (t + a2 * a2)
    d0 = y[0] - s_out[0]
    d1 = y[1] - s_out[1]
    d2 = y[2] - s_out[2]
    return np.sqrt(d0 * d0 + d1 * d1 + d2 * d2), inside


@njit(cache=True)
def _clamp_box(p, half, out):
    for i in range(3):
        x = p[i]
        if x > half[i]:
            x = half[i]
        elif x < -half[i]:
            x = -half[i]
        out[i] = x


# ---------------------------------------------------------------------------
# collision: object primitive vs hand capsules / palm box


@njit(cache=True)
def _palm_patch_region(patch_rect, patch_region, box_center, box_half, wl):
    """Region of a palm-box witness point in link coordinates, -1 if the
    point is not on a sensorized patch of the top face."""
    top_z = box_center[2] + box_half[2]
    if wl[2] < top_z - 1e-6:
        return -1
    for k in range(patch_rect.shape[0]):
        if (
            patch_rect[k, 0] <= wl[0] <= patch_rect[k, 1]
            and patch_rect[k, 2] <= wl[1] <= patch_rect[k, 3]
        ):
            return patch_region[k]
    return -1


@njit(cache=True)
def collide(
    obj_type,
    dims,
    obj_pos,
    obj_R,
    parent,
    geom_type,
    cap_len,
    cap_rad,
    box_center,
    box_half,
    link_region,
    link_bound,
    patch_rect,
    patch_region,
    R,
    p,
    c_point,
    c_normal,
    c_depth,
    c_link,
    c_region,
):
    """Analytic narrow phase. Fills the contact arrays, returns the count.

    One contact per (link, object) pair, except a cube on the palm box which
    may report up to 4 penetrating vertices for a stable face rest."""
    n = parent.shape[0]
    nc = 0
    if obj_type == OBJ_SPHERE:
        obj_bound = dims[0]
    elif obj_type == OBJ_ELLIPSOID:
        obj_bound = max(dims[0], max(dims[1], dims[2]))
    else:
        obj_bound = dims[0] * 1.7320508075688772

    a = np.empty(3)
    b = np.empty(3)
    tmp = np.empty(3)
    loc = np.empty(3)
    loc2 = np.empty(3)
    s = np.empty(3)
    nrm = np.empty(3)
    wl = np.empty(3)
    corner = np.empty(3)

    for l in range(n):
        gt = geom_type[l]
        if gt == GEOM_NONE:
            continue
        if nc >= MAX_CONTACTS - 4:
            break
        # broad phase: bounding spheres
        if gt == GEOM_CAPSULE:
            a[0] = p[l, 0]
            a[1] = p[l, 1]
            a[2] = p[l, 2]
            b[0] = a[0] + cap_len[l] * R[l, 0, 1]
            b[1] = a[1] + cap_len[l] * R[l, 1, 1]
            b[2] = a[2] + cap_len[l] * R[l, 2, 1]
            cx = 0.5 * (a[0] + b[0])
            cy = 0.5 * (a[1] + b[1])
            cz = 0.5 * (a[2] + b[2])
        else:
            _mat_vec3(R[l], box_center[l], tmp)
            cx = p[l, 0] + tmp[0]
            cy = p[l, 1] + tmp[1]
            cz = p[l, 2] + tmp[2]
        dx = obj_pos[0] - cx
        dy = obj_pos[1] - cy
        dz = obj_pos[2] - cz
        if np.sqrt(dx * dx + dy * dy + dz * dz) > obj_bound + link_bound[l] + 0.005:
            continue

        if gt == GEOM_CAPSULE:
            if obj_type == OBJ_SPHERE:
                t = _closest_t_on_segment(a, b, obj_pos)
                qx = a[0] + t * (b[0] - a[0])
                qy = a[1] + t * (b[1] - a[1])
                qz = a[2] + t * (b[2] - a[2])
                dx = obj_pos[0] - qx
                dy = obj_pos[1] - qy
                dz = obj_pos[2] - qz
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                depth = dims[0] + cap_rad[l] - d
                if depth <= 0.0:
                    continue
                if d < 1e-12:
                    nx, ny, nz = 0.0, 0.0, 1.0
                else:
                    nx, ny, nz = dx / d, dy / d, dz / d
                c_point[nc, 0] = obj_pos[0] - nx * dims[0]
                c_point[nc, 1] = obj_pos[1] - ny * dims[0]
                c_point[nc, 2] = obj_pos[2] - nz * dims[0]
                c_normal[nc, 0] = nx
                c_normal[nc, 1] = ny
                c_normal[nc, 2] = nz
                c_depth[nc] = depth
                c_link[nc] = l
                c_region[nc] = link_region[l]
                nc += 1
            else:
                # ellipsoid/cube vs capsule: work in the object frame
                tmp[0] = a[0] - obj_pos[0]
                tmp[1] = a[1] - obj_pos[1]
                tmp[2] = a[2] - obj_pos[2]
                _mat_t_vec3(obj_R, tmp, loc)
                tmp[0] = b[0] - obj_pos[0]
                tmp[1] = b[1] - obj_pos[1]
                tmp[2] = b[2] - obj_pos[2]
                _mat_t_vec3(obj_R, tmp, loc2)
                if obj_type == OBJ_ELLIPSOID:
                    t = 0.5
                    dist = 0.0
                    inside = 0.0
                    for _ in range(8):
                        qx = loc[0] + t * (loc2[0] - loc[0])
                        qy = loc[1] + t * (loc2[1] - loc[1])
                        qz = loc[2] + t * (loc2[2] - loc[2])
                        tmp[0] = qx
                        tmp[1] = qy
                        tmp[2] = qz
                        dist, inside = _ellipsoid_closest(dims, tmp, s)
                        t = _closest_t_on_segment(loc, loc2, s)
                    qx = loc[0] + t * (loc2[0] - loc[0])
                    qy = loc[1] + t * (loc2[1] - loc[1])
                    qz = loc[2] + t * (loc2[2] - loc[2])
                    tmp[0] = qx
                    tmp[1] = qy
                    tmp[2] = qz
                    dist, inside = _ellipsoid_closest(dims, tmp, s)
                    if inside > 0.5:
                        depth = cap_rad[l] + dist
                    else:
                        depth = cap_rad[l] - dist
                    if depth <= 0.0:
                        continue
                    # push direction = inward normal of the object surface
                    nrm[0] = s[0] / (dims[0] * dims[0])
                    nrm[1] = s[1] / (dims[1] * dims[1])
                    nrm[2] = s[2] / (dims[2] * dims[2])
                    nn = _norm3(nrm)
                    if nn < 1e-12:
                        continue
                    nrm[0] = -nrm[0] / nn
                    nrm[1] = -nrm[1] / nn
                    nrm[2] = -nrm[2] / nn
                    _mat_vec3(obj_R, nrm, tmp)
                    c_normal[nc, 0] = tmp[0]
                    c_normal[nc, 1] = tmp[1]
                    c_normal[nc, 2] = tmp[2]
                    _mat_vec3(obj_R, s, tmp)
                    c_point[nc, 0] = obj_pos[0] + tmp[0]
                    c_point[nc, 1] = obj_pos[1] + tmp[1]
                    c_point[nc, 2] = obj_pos[2] + tmp[2]
                    c_depth[nc] = depth
                    c_link[nc] = l
                    c_region[nc] = link_region[l]
                    nc += 1
                else:  # cube
                    half = dims[0]
                    s[0] = 0.5 * (loc[0] + loc2[0])
                    s[1] = 0.5 * (loc[1] + loc2[1])
                    s[2] = 0.5 * (loc[2] + loc2[2])
                    for _ in range(8):
                        for i in range(3):
                            x = s[i]
                            if x > half:
                                x = half
                            elif x < -half:
                                x = -half
                            tmp[i] = x
                        t = _closest_t_on_segment(loc, loc2, tmp)
                        s[0] = loc[0] + t * (loc2[0] - loc[0])
                        s[1] = loc[1] + t * (loc2[1] - loc[1])
                        s[2] = loc[2] + t * (loc2[2] - loc[2])
                    # s = segment point, tmp = box point
                    dx = s[0] - tmp[0]
                    dy = s[1] - tmp[1]
                    dz = s[2] - tmp[2]
                    d = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if d > 1e-12:
                        depth = cap_rad[l] - d
                        if depth <= 0.0:
                            continue
                        nrm[0] = -dx / d
                        nrm[1] = -dy / d
                        nrm[2] = -dz / d
                    else:
                        # segment point inside the cube: escape along the
                        # shallowest face
                        best = 1e30
                        m = 0
                        for i in range(3):
                            pen = half - abs(s[i])
                            if pen < best:
                                best = pen
                                m = i
                        depth = cap_rad[l] + best
                        nrm[0] = 0.0
                        nrm[1] = 0.0
                        nrm[2] = 0.0
                        nrm[m] = -1.0 if s[m] > 0.0 else 1.0
                        tmp[0] = s[0]
                        tmp[1] = s[1]
                        tmp[2] = s[2]
                        tmp[m] = half if s[m] > 0.0 else -half
                    _mat_vec3(obj_R, nrm, loc)
                    c_normal[nc, 0] = loc[0]
                    c_normal[nc, 1] = loc[1]
                    c_normal[nc, 2] = loc[2]
                    _mat_vec3(obj_R, tmp, loc)
                    c_point[nc, 0] = obj_pos[0] + loc[0]
                    c_point[nc, 1] = obj_pos[1] + loc[1]
                    c_point[nc, 2] = obj_pos[2] + loc[2]
                    c_depth[nc] = depth
                    c_link[nc] = l
                    c_region[nc] = link_region[l]
                    nc += 1
        else:  # palm box
            if obj_type == OBJ_SPHERE:
                tmp[0] = obj_pos[0] - p[l, 0]
                tmp[1] = obj_pos[1] - p[l, 1]
                tmp[2] = obj_pos[2] - p[l, 2]
                _mat_t_vec3(R[l], tmp, loc)
                loc[0] -= box_center[l, 0]
                loc[1] -= box_center[l, 1]
                loc[2] -= box_center[l, 2]
                _clamp_box(loc, box_half[l], loc2)
                dx = loc[0] - loc2[0]
                dy = loc[1] - loc2[1]
                dz = loc[2] - loc2[2]
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                if d > 1e-12:
                    depth = dims[0] - d
                    if depth <= 0.0:
                        continue
                    nrm[0] = dx / d
                    nrm[1] = dy / d
                    nrm[2] = dz / d
                else:
                    best = 1e30
                    m = 0
                    for i in range(3):
                        pen = box_half[l, i] - abs(loc[i])
                        if pen < best:
                            best = pen
                            m = i
                    depth = dims[0] + best
                    nrm[0] = 0.0
                    nrm[1] = 0.0
                    nrm[2] = 0.0
                    nrm[m] = 1.0 if loc[m] > 0.0 else -1.0
                    loc2[0] = loc[0]
                    loc2[1] = loc[1]
                    loc2[2] = loc[2]
                    loc2[m] = box_half[l, m] if loc[m] > 0.0 else -box_half[l, m]
                wl[0] = loc2[0] + box_center[l, 0]
                wl[1] = loc2[1] + box_center[l, 1]
                wl[2] = loc2[2] + box_center[l, 2]
                reg = _palm_patch_region(patch_rect, patch_region, box_center[l], box_half[l], wl)
                _mat_vec3(R[l], nrm, tmp)
                c_normal[nc, 0] = tmp[0]
                c_normal[nc, 1] = tmp[1]
                c_normal[nc, 2] = tmp[2]
                c_point[nc, 0] = obj_pos[0] - tmp[0] * dims[0]
                c_point[nc, 1] = obj_pos[1] - tmp[1] * dims[0]
                c_point[nc, 2] = obj_pos[2] - tmp[2] * dims[0]
                c_depth[nc] = depth
                c_link[nc] = l
                c_region[nc] = reg
                nc += 1
            elif obj_type == OBJ_ELLIPSOID:
                # support-function test: depth along the center-to-box
                # direction equals the ellipsoid's directional extent minus
                # the center clearance (exact for face contacts)
                tmp[0] = obj_pos[0] - p[l, 0]
                tmp[1] = obj_pos[1] - p[l, 1]
                tmp[2] = obj_pos[2] - p[l, 2]
                _mat_t_vec3(R[l], tmp, loc)
                loc[0] -= box_center[l, 0]
                loc[1] -= box_center[l, 1]
                loc[2] -= box_center[l, 2]
                _clamp_box(loc, box_half[l], loc2)
                dx = loc[0] - loc2[0]
                dy = loc[1] - loc2[1]
                dz = loc[2] - loc2[2]
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                if d > 1e-12:
                    nrm[0] = dx / d
                    nrm[1] = dy / d
                    nrm[2] = dz / d
                    clearance = d
                else:
                    # center inside the box: escape along the shallowest face
                    best = 1e30
                    m = 0
                    for i in range(3):
                        pen = box_half[l, i] - abs(loc[i])
                        if pen < best:
                            best = pen
                            m = i
                    nrm[0] = 0.0
                    nrm[1] = 0.0
                    nrm[2] = 0.0
                    nrm[m] = 1.0 if loc[m] > 0.0 else -1.0
                    clearance = -best
                    loc2[0] = loc[0]
                    loc2[1] = loc[1]
                    loc2[2] = loc[2]
                    loc2[m] = box_half[l, m] if loc[m] > 0.0 else -box_half[l, m]
                # direction in the object frame; extent h(n) = |diag(a,b,c) n|
                _mat_vec3(R[l], nrm, tmp)  # world push direction
                _mat_t_vec3(obj_R, tmp, b)
                ext = np.sqrt(
                    (dims[0] * b[0]) ** 2 + (dims[1] * b[1]) ** 2 + (dims[2] * b[2]) ** 2
                )
                depth = ext - clearance
                if depth <= 0.0 or ext < 1e-12:
                    continue
                # support point of the ellipsoid along -n (deepest point)
                s[0] = -dims[0] * dims[0] * b[0] / ext
                s[1] = -dims[1] * dims[1] * b[1] / ext
                s[2] = -dims[2] * dims[2] * b[2] / ext
                _mat_vec3(obj_R, s, a)
                c_point[nc, 0] = obj_pos[0] + a[0]
                c_point[nc, 1] = obj_pos[1] + a[1]
                c_point[nc, 2] = obj_pos[2] + a[2]
                c_normal[nc, 0] = tmp[0]
                c_normal[nc, 1] = tmp[1]
                c_normal[nc, 2] = tmp[2]
                # witness for the patch lookup: the contact point projected
                # onto the contacted face along the dominant normal axis
                a[0] = c_point[nc, 0] - p[l, 0]
                a[1] = c_point[nc, 1] - p[l, 1]
                a[2] = c_point[nc, 2] - p[l, 2]
                _mat_t_vec3(R[l], a, loc)
                loc[0] -= box_center[l, 0]
                loc[1] -= box_center[l, 1]
                loc[2] -= box_center[l, 2]
                m = 0
                if abs(nrm[1]) > abs(nrm[m]):
                    m = 1
                if abs(nrm[2]) > abs(nrm[m]):
                    m = 2
                loc[m] = box_half[l, m] if nrm[m] > 0.0 else -box_half[l, m]
                _clamp_box(loc, box_half[l], loc2)
                wl[0] = loc2[0] + box_center[l, 0]
                wl[1] = loc2[1] + box_center[l, 1]
                wl[2] = loc2[2] + box_center[l, 2]
                reg = _palm_patch_region(patch_rect, patch_region, box_center[l], box_half[l], wl)
                c_depth[nc] = depth
                c_link[nc] = l
                c_region[nc] = reg
                nc += 1
            else:  # cube vs palm box: test the 8 object vertices
                half = dims[0]
                # pick up to 4 deepest penetrating vertices
                best_depth = np.zeros(4)
                best_vert = np.full(4, -1, dtype=np.int64)
                best_axis = np.zeros(4, dtype=np.int64)
                for vi in range(8):
                    corner[0] = half if (vi & 1) else -half
                    corner[1] = half if (vi & 2) else -half
                    corner[2] = half if (vi & 4) else -half
                    _mat_vec3(obj_R, corner, tmp)
                    a[0] = obj_pos[0] + tmp[0] - p[l, 0]
                    a[1] = obj_pos[1] + tmp[1] - p[l, 1]
                    a[2] = obj_pos[2] + tmp[2] - p[l, 2]
                    _mat_t_vec3(R[l], a, loc)
                    loc[0] -= box_center[l, 0]
                    loc[1] -= box_center[l, 1]
                    loc[2] -= box_center[l, 2]
                    pen = 1e30
                    m = 0
                    ok = True
                    for i in range(3):
                        pi = box_half[l, i] - abs(loc[i])
                        if pi <= 0.0:
                            ok = False
                            break
                        if pi < pen:
                            pen = pi
                            m = i
                    if not ok:
                        continue
                    # keep the 4 deepest, stable by vertex index
                    for slot in range(4):
                        if pen > best_depth[slot]:
                            for back in range(3, slot, -1):
                                best_depth[back] = best_depth[back - 1]
                                best_vert[back] = best_vert[back - 1]
                                best_axis[back] = best_axis[back - 1]
                            best_depth[slot] = pen
                            best_vert[slot] = vi
                            best_axis[slot] = m
                            break
                for slot in range(4):
                    vi = best_vert[slot]
                    if vi < 0:
                        continue
                    corner[0] = half if (vi & 1) else -half
                    corner[1] = half if (vi & 2) else -half
                    corner[2] = half if (vi & 4) else -half
                    _mat_vec3(obj_R, corner, tmp)
                    c_point[nc, 0] = obj_pos[0] + tmp[0]
                    c_point[nc, 1] = obj_pos[1] + tmp[1]
                    c_point[nc, 2] = obj_pos[2] + tmp[2]
                    a[0] = c_point[nc, 0] - p[l, 0]
                    a[1] = c_point[nc, 1] - p[l, 1]
                    a[2] = c_point[nc, 2] - p[l, 2]
                    _mat_t_vec3(R[l], a, loc)
                    loc[0] -= box_center[l, 0]
                    loc[1] -= box_center[l, 1]
                    loc[2] -= box_center[l, 2]
                    m = best_axis[slot]
                    nrm[0] = 0.0
                    nrm[1] = 0.0
                    nrm[2] = 0.0
                    nrm[m] = 1.0 if loc[m] > 0.0 else -1.0
                    wl[0] = loc[0] + box_center[l, 0]
                    wl[1] = loc[1] + box_center[l, 1]
                    wl[2] = loc[2] + box_center[l, 2]
                    wl[m] = box_center[l, m] + (box_half[l, m] if loc[m] > 0.0 else -box_half[l, m])
                    reg = _palm_patch_region(patch_rect, patch_region, box_center[l], box_half[l], wl)
                    _mat_vec3(R[l], nrm, tmp)
                    c_normal[nc, 0] = tmp[0]
                    c_normal[nc, 1] = tmp[1]
                    c_normal[nc, 2] = tmp[2]
                    c_depth[nc] = best_depth[slot]
                    c_link[nc] = l
                    c_region[nc] = reg
                    nc += 1
    return nc


# ---------------------------------------------------------------------------
# the substep loop


@njit(cache=True)
def run_substeps(
    n_sub,
    dt,
    # hand model
    parent,
    org_pos,
    org_rot,
    axis,
    lo,
    hi,
    geom_type,
    cap_len,
    cap_rad,
    box_center,
    box_half,
    link_region,
    link_bound,
    patch_rect,
    patch_region,
    region_link,
    region_center,
    # gains and contact material
    kp,
    kd,
    kn,
    cn,
    ct,
    mu,
    gravity,
    # hand state (mutated in place)
    q,
    qd,
    targets,
    # object description
    obj_type,
    dims,
    min_dim,
    mass,
    I_body_inv,
    com_off,
    # object state (mutated in place)
    x_com,
    quat,
    v_com,
    omega,
    # outputs
    tactile_sum,
    region_fworld,
    c_point,
    c_normal,
    c_depth,
    c_link,
    c_region,
    c_force,
    diag,
):
    """Advance hand + object by n_sub substeps of dt under PD joint control
    and penalty contacts. Contact arrays hold the final substep's contacts;
    tactile_sum accumulates per-region wrenches (sensor frame) over all
    substeps; diag = [min_fn, max_cone_residual, max_depth, n_contacts_total,
    nonfinite_flag, max_depth_frac]."""
    n = parent.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    obj_R = np.empty((3, 3))
    tmp = np.empty(3)
    tmp2 = np.empty(3)
    arm = np.empty(3)
    fvec = np.empty(3)
    torque = np.empty(3)
    force = np.empty(3)
    obj_geo = np.empty(3)
    dq = np.empty(4)
    qn = np.empty(4)
    iw = np.empty((3, 3))
    iw2 = np.empty((3, 3))
    rot_t = np.empty((3, 3))

    diag[0] = 1e30
    nc = 0

    for _ in range(n_sub):
        # --- joints: PD with implicit damping, then limit clamp
        for j in range(n):
            vel = (qd[j] + dt * kp * (targets[j] - q[j])) / (1.0 + dt * kd)
            pos = q[j] + dt * vel
            if pos < lo[j]:
                pos = lo[j]
                if vel < 0.0:
                    vel = 0.0
            elif pos > hi[j]:
                pos = hi[j]
                if vel > 0.0:
                    vel = 0.0
            q[j] = pos
            qd[j] = vel

        fk_links(parent, org_pos, org_rot, axis, q, qd, R, p, w, v)

        _quat_to_mat(quat, obj_R)
        _mat_vec3(obj_R, com_off, tmp)
        obj_geo[0] = x_com[0] - tmp[0]
        obj_geo[1] = x_com[1] - tmp[1]
        obj_geo[2] = x_com[2] - tmp[2]

        nc = collide(
            obj_type,
            dims,
            obj_geo,
            obj_R,
            parent,
            geom_type,
            cap_len,
            cap_rad,
            box_center,
            box_half,
            link_region,
            link_bound,
            patch_rect,
            patch_region,
            R,
            p,
            c_point,
            c_normal,
            c_depth,
            c_link,
            c_region,
        )

        force[0] = 0.0
        force[1] = 0.0
        force[2] = -mass * gravity
        torque[0] = 0.0
        torque[1] = 0.0
        torque[2] = 0.0

        # damping caps scale with the simultaneous contact count so the
        # summed damping impulse cannot reverse the relative velocity in one
        # explicit step (a light cube resting on 4 vertices would otherwise
        # pump energy every bounce)
        if nc > 0:
            cap = 0.5 * mass / (dt * nc)
            cn_eff = cn if cn < cap else cap
            ct_eff = ct if ct < cap else cap
        else:
            cn_eff = cn
            ct_eff = ct

        for ci in range(nc):
            l = c_link[ci]
            # relative velocity of the object w.r.t. the hand at the contact
            vx = v_com[0] + omega[1] * (c_point[ci, 2] - x_com[2]) - omega[2] * (c_point[ci, 1] - x_com[1])
            vy = v_com[1] + omega[2] * (c_point[ci, 0] - x_com[0]) - omega[0] * (c_point[ci, 2] - x_com[2])
            vz = v_com[2] + omega[0] * (c_point[ci, 1] - x_com[1]) - omega[1] * (c_point[ci, 0] - x_com[0])
            vx -= v[l, 0] + w[l, 1] * (c_point[ci, 2] - p[l, 2]) - w[l, 2] * (c_point[ci, 1] - p[l, 1])
            vy -= v[l, 1] + w[l, 2] * (c_point[ci, 0] - p[l, 0]) - w[l, 0] * (c_point[ci, 2] - p[l, 2])
            vz -= v[l, 2] + w[l, 0] * (c_point[ci, 1] - p[l, 1]) - w[l, 1] * (c_point[ci, 0] - p[l, 0])
            nx = c_normal[ci, 0]
            ny = c_normal[ci, 1]
            nz = c_normal[ci, 2]
            vn = vx * nx + vy * ny + vz * nz
            fn = kn * c_depth[ci] - cn_eff * vn
            if fn < 0.0:
                fn = 0.0
            ftx = -ct_eff * (vx - vn * nx)
            fty = -ct_eff * (vy - vn * ny)
            ftz = -ct_eff * (vz - vn * nz)
            ft = np.sqrt(ftx * ftx + fty * fty + ftz * ftz)
            fcap = mu * fn
            if ft > fcap:
                if ft > 1e-12:
                    sc = fcap / ft
                else:
                    sc = 0.0
                ftx *= sc
                fty *= sc
                ftz *= sc
                ft = fcap
            fvec[0] = fn * nx + ftx
            fvec[1] = fn * ny + fty
            fvec[2] = fn * nz + ftz
            c_force[ci, 0] = fvec[0]
            c_force[ci, 1] = fvec[1]
            c_force[ci, 2] = fvec[2]

            force[0] += fvec[0]
            force[1] += fvec[1]
            force[2] += fvec[2]
            arm[0] = c_point[ci, 0] - x_com[0]
            arm[1] = c_point[ci, 1] - x_com[1]
            arm[2] = c_point[ci, 2] - x_com[2]
            torque[0] += arm[1] * fvec[2] - arm[2] * fvec[1]
            torque[1] += arm[2] * fvec[0] - arm[0] * fvec[2]
            torque[2] += arm[0] * fvec[1] - arm[1] * fvec[0]

            # diagnostics
            if fn < diag[0]:
                diag[0] = fn
            resid = ft - fcap
            if resid > diag[1]:
                diag[1] = resid
            if c_depth[ci] > diag[2]:
                diag[2] = c_depth[ci]
            diag[3] += 1.0

            # per-region sensing
            rg = c_region[ci]
            if rg >= 0:
                rl = region_link[rg]
                _mat_vec3(R[rl], region_center[rg], tmp)
                arm[0] = c_point[ci, 0] - (p[rl, 0] + tmp[0])
                arm[1] = c_point[ci, 1] - (p[rl, 1] + tmp[1])
                arm[2] = c_point[ci, 2] - (p[rl, 2] + tmp[2])
                _cross(arm, fvec, tmp)
                _mat_t_vec3(R[rl], fvec, tmp2)
                tactile_sum[rg, 0] += tmp2[0]
                tactile_sum[rg, 1] += tmp2[1]
                tactile_sum[rg, 2] += tmp2[2]
                _mat_t_vec3(R[rl], tmp, tmp2)
                tactile_sum[rg, 3] += tmp2[0]
                tactile_sum[rg, 4] += tmp2[1]
                tactile_sum[rg, 5] += tmp2[2]
                region_fworld[rg, 0] += fvec[0]
                region_fworld[rg, 1] += fvec[1]
                region_fworld[rg, 2] += fvec[2]

        # --- integrate object (semi-implicit Euler, COM frame)
        v_com[0] += dt * force[0] / mass
        v_com[1] += dt * force[1] / mass
        v_com[2] += dt * force[2] / mass

        # world inertia inverse = R Ib^-1 R^T
        _mat_mul3(obj_R, I_body_inv, iw2)
        for r_ in range(3):
            for c_ in range(3):
                rot_t[r_, c_] = obj_R[c_, r_]
        _mat_mul3(iw2, rot_t, iw)
        # gyroscopic torque: -omega x (Iw omega); Iw = (Ib^-1)^-1 world — use
        # angular momentum L = Iw^-1^-1 ... compute L = R Ib (R^T omega)
        _mat_t_vec3(obj_R, omega, tmp)
        # Ib = inverse of I_body_inv; avoid inverting: store I_body implicitly
        # by noting Ib tmp = solve(I_body_inv, tmp). I_body_inv is symmetric
        # PD 3x3; do a tiny Cramer solve.
        a00 = I_body_inv[0, 0]
        a01 = I_body_inv[0, 1]
        a02 = I_body_inv[0, 2]
        a11 = I_body_inv[1, 1]
        a12 = I_body_inv[1, 2]
        a22 = I_body_inv[2, 2]
        det = (
            a00 * (a11 * a22 - a12 * a12)
            - a01 * (a01 * a22 - a12 * a02)
            + a02 * (a01 * a12 - a11 * a02)
        )
        b0 = tmp[0]
        b1 = tmp[1]
        b2 = tmp[2]
        l0 = (b0 * (a11 * a22 - a12 * a12) - a01 * (b1 * a22 - a12 * b2) + a02 * (b1 * a12 - a11 * b2)) / det
        l1 = (a00 * (b1 * a22 - b2 * a12) - b0 * (a01 * a22 - a12 * a02) + a02 * (a01 * b2 - b1 * a02)) / det
        l2 = (a00 * (a11 * b2 - b1 * a12) - a01 * (a01 * b2 - b1 * a02) + b0 * (a01 * a12 - a11 * a02)) / det
        tmp2[0] = l0
        tmp2[1] = l1
        tmp2[2] = l2
        _mat_vec3(obj_R, tmp2, arm)  # arm = L world
        _cross(omega, arm, tmp)
        torque[0] -= tmp[0]
        torque[1] -= tmp[1]
        torque[2] -= tmp[2]
        _mat_vec3(iw, torque, tmp)
        omega[0] += dt * tmp[0]
        omega[1] += dt * tmp[1]
        omega[2] += dt * tmp[2]

        x_com[0] += dt * v_com[0]
        x_com[1] += dt * v_com[1]
        x_com[2] += dt * v_com[2]

        wdt0 = omega[0] * dt
        wdt1 = omega[1] * dt
        wdt2 = omega[2] * dt
        theta = np.sqrt(wdt0 * wdt0 + wdt1 * wdt1 + wdt2 * wdt2)
        if theta > 1e-12:
            half_ = 0.5 * theta
            sfac = np.sin(half_) / theta
            dq[0] = np.cos(half_)
            dq[1] = wdt0 * sfac
            dq[2] = wdt1 * sfac
            dq[3] = wdt2 * sfac
        else:
            dq[0] = 1.0
            dq[1] = 0.5 * wdt0
            dq[2] = 0.5 * wdt1
            dq[3] = 0.5 * wdt2
        _quat_mul(dq, quat, qn)
        qnorm = np.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2 + qn[3] ** 2)
        quat[0] = qn[0] / qnorm
        quat[1] = qn[1] / qnorm
        quat[2] = qn[2] / qnorm
        quat[3] = qn[3] / qnorm

    if diag[0] > 1e29:
        diag[0] = 0.0
    if min_dim > 0.0:
        diag[5] = diag[2] / min_dim
    ok = 1.0
    for j in range(n):
        if not (np.isfinite(q[j]) and np.isfinite(qd[j])):
            ok = 0.0
    for i in range(3):
        if not (np.isfinite(x_com[i]) and np.isfinite(v_com[i]) and np.isfinite(omega[i])):
            ok = 0.0
    for i in range(4):
        if not np.isfinite(quat[i]):
            ok = 0.0
    diag[4] = 0.0 if ok == 1.0 else 1.0
    return nc
