"""Rigid transforms, quaternion algebra, and convex-primitive distance queries.

Conventions used throughout the package: quaternions are [w, x, y, z] with
unit norm, positions are metres, angles are radians, arrays are float64.
Distance to a solid is zero for points inside it; intersection tests are
strict, so exact surface contact does not count as a collision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
# 75 golden-section steps shrink the unit interval below 2e-16, which puts
# the minimised distance at machine precision for convex solids.
_GOLDEN_ITERS = 75


# ---------------------------------------------------------------------------
# quaternions

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, av = a[0], np.asarray(a[1:], dtype=float)
    bw, bv = b[0], np.asarray(b[1:], dtype=float)
    w = aw * bw - av @ bv
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.array([w, v[0], v[1], v[2]])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method; returns the w >= 0 representative."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def rotation_vector_from_matrix(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    q = quat_from_matrix(R)
    w = np.clip(q[0], -1.0, 1.0)
    v = q[1:]
    sn = np.linalg.norm(v)
    if sn < 1e-12:
        return 2.0 * v  # first-order expansion near identity
    angle = 2.0 * np.arctan2(sn, w)
    return (angle / sn) * v


# ---------------------------------------------------------------------------
# poses and shapes

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: world_point = R(quaternion) @ local_point + position."""

    position: np.ndarray
    quaternion: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_xyz_quat(xyz, quat_wxyz) -> "Pose":
        return Pose(np.asarray(xyz, dtype=float), np.asarray(quat_wxyz, dtype=float))

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.position
        return T

    def compose(self, other: "Pose") -> "Pose":
        q = quat_multiply(self.quaternion, other.quaternion)
        p = self.position + self.rotation() @ other.position
        return Pose(p, quat_normalize(q))

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.quaternion)
        return Pose(-(quat_to_matrix(qc) @ self.position), qc)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation() @ np.asarray(p, dtype=float) + self.position

    def transform_points(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return P @ self.rotation().T + self.position

    def quaternion_unit_error(self) -> float:
        return abs(np.linalg.norm(self.quaternion) - 1.0)


@dataclass(frozen=True, eq=False)
class BoxShape:
    """Axis-aligned box in its own frame; ``extents`` are full side lengths."""

    extents: np.ndarray

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.asarray(self.extents, dtype=float)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half))


@dataclass(frozen=True, eq=False)
class CylinderShape:
    """Solid cylinder along the local z axis, centred at the origin."""

    radius: float
    height: float

    @property
    def half_height(self) -> float:
        return 0.5 * self.height

    @property
    def bounding_radius(self) -> float:
        return float(np.hypot(self.radius, self.half_height))


@dataclass(frozen=True, eq=False)
class Capsule:
    """Segment p0 -> p1 inflated by ``radius`` (world frame)."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.asarray(self.p1) - np.asarray(self.p0)))


# ---------------------------------------------------------------------------
# point-to-solid distances (local frames)

def aabb_point_distance(P, half) -> np.ndarray:
    """Distance from points (..., 3) to an origin-centred box; 0 inside."""
    d = np.maximum(np.abs(np.asarray(P, dtype=float)) - half, 0.0)
    return np.sqrt(np.sum(d * d, axis=-1))


def cylinder_point_distance(P, radius: float, half_height: float) -> np.ndarray:
    """Distance from points (..., 3) to an origin-centred z cylinder; 0 inside."""
    P = np.asarray(P, dtype=float)
    rho = np.hypot(P[..., 0], P[..., 1])
    dr = np.maximum(rho - radius, 0.0)
    dz = np.maximum(np.abs(P[..., 2]) - half_height, 0.0)
    return np.hypot(dr, dz)


def _golden_segment_min(A0, A1, point_distance):
    """Minimise point_distance(A0 + t (A1 - A0)) over t in [0, 1].

    The distance from a point to a convex solid is convex along a line, so a
    golden-section scan converges to the global minimum.
    """
    A0 = np.asarray(A0, dtype=float)
    A1 = np.asarray(A1, dtype=float)
    D = A1 - A0
    a = np.zeros(A0.shape[:-1])
    b = np.ones_like(a)
    for _ in range(_GOLDEN_ITERS):
        c = b - _INV_GOLDEN * (b - a)
        d = a + _INV_GOLDEN * (b - a)
        fc = point_distance(A0 + c[..., None] * D)
        fd = point_distance(A0 + d[..., None] * D)
        keep_left = fc <= fd
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
    t = 0.5 * (a + b)
    best = point_distance(A0 + t[..., None] * D)
    return np.minimum(best, np.minimum(point_distance(A0), point_distance(A1)))


def segment_box_distance(p0, p1, pose: Pose, extents) -> float:
    """Exact distance from a segment to a posed solid box (0 if intersecting)."""
    R = pose.rotation()
    half = 0.5 * np.asarray(extents, dtype=float)
    a0 = R.T @ (np.asarray(p0, dtype=float) - pose.position)
    a1 = R.T @ (np.asarray(p1, dtype=float) - pose.position)
    return float(_golden_segment_min(a0, a1, lambda P: aabb_point_distance(P, half)))


def segment_cylinder_distance(p0, p1, pose: Pose, radius: float, height: float) -> float:
    """Exact distance from a segment to a posed solid cylinder."""
    R = pose.rotation()
    a0 = R.T @ (np.asarray(p0, dtype=float) - pose.position)
    a1 = R.T @ (np.asarray(p1, dtype=float) - pose.position)
    return float(
        _golden_segment_min(a0, a1, lambda P: cylinder_point_distance(P, radius, 0.5 * height))
    )


def segment_point_distance(P0, P1, C) -> np.ndarray:
    """Distance from segments (K, 3) to points (broadcastable); closed form."""
    P0 = np.asarray(P0, dtype=float)
    D = np.asarray(P1, dtype=float) - P0
    W = np.asarray(C, dtype=float) - P0
    num = np.sum(W * D, axis=-1)
    dd = np.broadcast_to(np.sum(D * D, axis=-1), num.shape)
    t = np.divide(num, dd, out=np.zeros(num.shape), where=dd > 0)
    t = np.clip(t, 0.0, 1.0)
    closest = P0 + t[..., None] * D
    return np.linalg.norm(np.asarray(C, dtype=float) - closest, axis=-1)


# ---------------------------------------------------------------------------
# batched obstacle queries

@dataclass
class ObstacleSet:
    """Flattened world geometry for vectorised segment queries."""

    box_rot: np.ndarray      # (nb, 3, 3) local->world rotation
    box_center: np.ndarray   # (nb, 3)
    box_half: np.ndarray     # (nb, 3)
    box_bound: np.ndarray    # (nb,) circumscribed sphere radii
    cyl_rot: np.ndarray      # (nc, 3, 3)
    cyl_center: np.ndarray   # (nc, 3)
    cyl_radius: np.ndarray   # (nc,)
    cyl_half: np.ndarray     # (nc,)
    cyl_bound: np.ndarray    # (nc,)

    @staticmethod
    def build(boxes, cylinders) -> "ObstacleSet":
        """boxes: list of (pose, extents); cylinders: list of (pose, radius, height)."""
        if boxes:
            b_rot = np.stack([p.rotation() for p, _ in boxes])
            b_cen = np.stack([p.position for p, _ in boxes])
            b_half = np.stack([0.5 * np.asarray(e, dtype=float) for _, e in boxes])
            b_bound = np.linalg.norm(b_half, axis=-1)
        else:
            b_rot = np.zeros((0, 3, 3))
            b_cen = np.zeros((0, 3))
            b_half = np.zeros((0, 3))
            b_bound = np.zeros(0)
        if cylinders:
            c_rot = np.stack([p.rotation() for p, _, _ in cylinders])
            c_cen = np.stack([p.position for p, _, _ in cylinders])
            c_rad = np.array([r for _, r, _ in cylinders], dtype=float)
            c_half = np.array([0.5 * h for _, _, h in cylinders], dtype=float)
            c_bound = np.hypot(c_rad, c_half)
        else:
            c_rot = np.zeros((0, 3, 3))
            c_cen = np.zeros((0, 3))
            c_rad = np.zeros(0)
            c_half = np.zeros(0)
            c_bound = np.zeros(0)
        return ObstacleSet(
            b_rot, b_cen, b_half, b_bound, c_rot, c_cen, c_rad, c_half, c_bound
        )

    @property
    def is_empty(self) -> bool:
        return self.box_rot.shape[0] == 0 and self.cyl_rot.shape[0] == 0


def _interval_gap(lo, hi, half):
    """Distance of intervals [lo, hi] from [-half, half], elementwise."""
    return np.maximum(np.maximum(lo - half, -half - hi), 0.0)


def _segment_origin_t(A0, D):
    """Parameter of the segment point closest to the local origin."""
    dd = np.sum(D * D, axis=-1)
    t = np.divide(-np.sum(A0 * D, axis=-1), dd, out=np.zeros(dd.shape), where=dd > 0)
    return np.clip(t, 0.0, 1.0)


def _resolve_pairs(lower, upper, point_eval, A0, A1, radii, tight=None):
    """Collision flags from bounds; golden-section only where they straddle r.

    lower/upper are valid bounds on the true segment-solid distance. ``tight``
    is the exact evaluator used for the remaining ambiguous pairs.
    """
    col = upper < radii
    ambiguous = np.nonzero(~col & (lower < radii))[0]
    if ambiguous.size:
        dist = _golden_segment_min(A0[ambiguous], A1[ambiguous], lambda P: point_eval(P, ambiguous))
        col[ambiguous] = dist < radii[ambiguous]
    return col


def _box_phase(P0, P1, radii, obs: "ObstacleSet", hit):
    n = obs.box_center.shape[0]
    if n == 0:
        return
    seg_c = segment_point_distance(P0[:, None, :], P1[:, None, :], obs.box_center[None, :, :])
    ks, js = np.nonzero((seg_c - obs.box_bound[None, :] < radii[:, None]) & ~hit[:, None])
    if ks.size == 0:
        return
    rot = obs.box_rot[js]
    half = obs.box_half[js]
    a0 = np.einsum("nij,ni->nj", rot, P0[ks] - obs.box_center[js])
    a1 = np.einsum("nij,ni->nj", rot, P1[ks] - obs.box_center[js])
    d = a1 - a0
    lo = np.minimum(a0, a1)
    hi = np.maximum(a0, a1)
    lower = np.linalg.norm(_interval_gap(lo, hi, half), axis=-1)
    t_star = _segment_origin_t(a0, d)[..., None]
    upper = np.minimum(
        aabb_point_distance(a0 + t_star * d, half),
        np.minimum(aabb_point_distance(a0, half), aabb_point_distance(a1, half)),
    )
    col = _resolve_pairs(
        lower, upper, lambda P, idx: aabb_point_distance(P, half[idx]), a0, a1, radii[ks]
    )
    hit[ks[col]] = True


def _cylinder_phase(P0, P1, radii, obs: "ObstacleSet", hit):
    n = obs.cyl_center.shape[0]
    if n == 0:
        return
    seg_c = segment_point_distance(P0[:, None, :], P1[:, None, :], obs.cyl_center[None, :, :])
    ks, js = np.nonzero((seg_c - obs.cyl_bound[None, :] < radii[:, None]) & ~hit[:, None])
    if ks.size == 0:
        return
    rot = obs.cyl_rot[js]
    R = obs.cyl_radius[js]
    H = obs.cyl_half[js]
    a0 = np.einsum("nij,ni->nj", rot, P0[ks] - obs.cyl_center[js])
    a1 = np.einsum("nij,ni->nj", rot, P1[ks] - obs.cyl_center[js])
    d = a1 - a0
    lo_z = np.minimum(a0[:, 2], a1[:, 2])
    hi_z = np.maximum(a0[:, 2], a1[:, 2])
    gap_z = _interval_gap(lo_z, hi_z, H)
    # radial: closest approach of the xy-projected segment to the axis
    d_xy = d[:, :2]
    dd = np.sum(d_xy * d_xy, axis=-1)
    t_rho = np.clip(
        np.divide(-np.sum(a0[:, :2] * d_xy, axis=-1), dd, out=np.zeros(dd.shape), where=dd > 0),
        0.0, 1.0,
    )
    rho_min = np.linalg.norm(a0[:, :2] + t_rho[:, None] * d_xy, axis=-1)
    lower = np.hypot(np.maximum(rho_min - R, 0.0), gap_z)
    t_star = _segment_origin_t(a0, d)[..., None]
    upper = np.minimum(
        cylinder_point_distance_batch(a0 + t_star * d, R, H),
        np.minimum(
            cylinder_point_distance_batch(a0, R, H), cylinder_point_distance_batch(a1, R, H)
        ),
    )
    col = _resolve_pairs(
        lower, upper, lambda P, idx: cylinder_point_distance_batch(P, R[idx], H[idx]),
        a0, a1, radii[ks],
    )
    hit[ks[col]] = True


def segments_hit_obstacles(P0, P1, radii, obs: ObstacleSet) -> np.ndarray:
    """Strict intersection flags for K capsules (segments + radii) vs. the set."""
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    hit = np.zeros(P0.shape[0], dtype=bool)
    if obs.is_empty:
        return hit
    _box_phase(P0, P1, radii, obs, hit)
    _cylinder_phase(P0, P1, radii, obs, hit)
    return hit


def cylinder_point_distance_batch(P, radius, half_height) -> np.ndarray:
    """Same as cylinder_point_distance with per-row radii/heights."""
    P = np.asarray(P, dtype=float)
    rho = np.hypot(P[..., 0], P[..., 1])
    dr = np.maximum(rho - radius, 0.0)
    dz = np.maximum(np.abs(P[..., 2]) - half_height, 0.0)
    return np.hypot(dr, dz)


def point_in_box(point, pose: Pose, extents) -> bool:
    """Inclusive containment test against a posed box."""
    local = pose.rotation().T @ (np.asarray(point, dtype=float) - pose.position)
    return bool(np.all(np.abs(local) <= 0.5 * np.asarray(extents, dtype=float) + 1e-12))
