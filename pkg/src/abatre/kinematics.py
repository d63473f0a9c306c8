"""Forward/inverse kinematics and collision skeleton for a 6-axis arm.

The default arm is a UR10-class manipulator described by standard
Denavit-Hartenberg parameters (the widely published values for that arm).
Each link carries one capsule spanning consecutive joint-frame origins, which
gives a rigid, configuration-independent skeleton for collision checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Capsule, Pose, rotation_vector_from_matrix

JOINT_LIMIT = 2.0 * np.pi

UR10_A = np.array([0.0, -0.612, -0.5723, 0.0, 0.0, 0.0])
UR10_D = np.array([0.1273, 0.0, 0.0, 0.163941, 0.1157, 0.0922])
UR10_ALPHA = np.array([np.pi / 2, 0.0, 0.0, np.pi / 2, -np.pi / 2, 0.0])
UR10_THETA_OFFSET = np.zeros(6)
UR10_CAPSULE_RADII = np.array([0.08, 0.07, 0.06, 0.045, 0.045, 0.04])

DEFAULT_VELOCITY_LIMIT = 2.0      # rad/s per joint
DEFAULT_ACCELERATION_LIMIT = 4.0  # rad/s^2 per joint


class JointLimitError(ValueError):
    """A joint angle lies outside the allowed [-2pi, 2pi] box."""


@dataclass(frozen=True, eq=False)
class ArmModel:
    dh_a: np.ndarray
    dh_d: np.ndarray
    dh_alpha: np.ndarray
    dh_theta_offset: np.ndarray
    base_pose: Pose
    capsule_local: np.ndarray  # (6, 2, 3) endpoints in each link frame
    capsule_radii: np.ndarray  # (6,)
    velocity_limits: np.ndarray = field(default_factory=lambda: np.full(6, DEFAULT_VELOCITY_LIMIT))
    acceleration_limits: np.ndarray = field(
        default_factory=lambda: np.full(6, DEFAULT_ACCELERATION_LIMIT)
    )

    @property
    def n_joints(self) -> int:
        return len(self.dh_a)


def _link_capsule_endpoints(a, d, alpha) -> np.ndarray:
    """Endpoints (in link frame i) of capsules spanning frame i-1 -> frame i.

    The previous frame origin expressed in frame i is Rx(-alpha) @ (-a, 0, -d),
    which is independent of the joint angle, so the endpoints are constants.
    """
    n = len(a)
    caps = np.zeros((n, 2, 3))
    for i in range(n):
        ca, sa = np.cos(-alpha[i]), np.sin(-alpha[i])
        rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
        caps[i, 0] = rx @ np.array([-a[i], 0.0, -d[i]])
        caps[i, 1] = np.zeros(3)
    return caps


def default_arm(base_pose: Pose | None = None) -> ArmModel:
    if base_pose is None:
        base_pose = Pose.identity()
    return ArmModel(
        dh_a=UR10_A.copy(),
        dh_d=UR10_D.copy(),
        dh_alpha=UR10_ALPHA.copy(),
        dh_theta_offset=UR10_THETA_OFFSET.copy(),
        base_pose=base_pose,
        capsule_local=_link_capsule_endpoints(UR10_A, UR10_D, UR10_ALPHA),
        capsule_radii=UR10_CAPSULE_RADII.copy(),
    )


def within_limits(q) -> bool:
    q = np.asarray(q, dtype=float)
    return bool(np.all(np.abs(q) <= JOINT_LIMIT + 1e-12))


def check_limits(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (6,):
        raise ValueError(f"expected 6 joint angles, got shape {q.shape}")
    if not within_limits(q):
        raise JointLimitError(f"joint configuration outside limits: {q}")
    return q


def dh_transform(a: float, d: float, alpha: float, theta: float) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def link_transforms(arm: ArmModel, q) -> np.ndarray:
    """World transforms (7, 4, 4): base frame, then after each of joints 1..6."""
    q = np.asarray(q, dtype=float)
    out = np.empty((7, 4, 4))
    out[0] = arm.base_pose.matrix()
    for i in range(arm.n_joints):
        Ti = dh_transform(
            arm.dh_a[i], arm.dh_d[i], arm.dh_alpha[i], q[i] + arm.dh_theta_offset[i]
        )
        out[i + 1] = out[i] @ Ti
    return out


def link_transforms_batch(arm: ArmModel, Q) -> np.ndarray:
    """Vectorised link_transforms for Q of shape (B, 6) -> (B, 7, 4, 4)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B = Q.shape[0]
    out = np.empty((B, 7, 4, 4))
    out[:, 0] = arm.base_pose.matrix()
    for i in range(arm.n_joints):
        th = Q[:, i] + arm.dh_theta_offset[i]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(arm.dh_alpha[i]), np.sin(arm.dh_alpha[i])
        Ti = np.zeros((B, 4, 4))
        Ti[:, 0, 0] = ct
        Ti[:, 0, 1] = -st * ca
        Ti[:, 0, 2] = st * sa
        Ti[:, 0, 3] = arm.dh_a[i] * ct
        Ti[:, 1, 0] = st
        Ti[:, 1, 1] = ct * ca
        Ti[:, 1, 2] = -ct * sa
        Ti[:, 1, 3] = arm.dh_a[i] * st
        Ti[:, 2, 1] = sa
        Ti[:, 2, 2] = ca
        Ti[:, 2, 3] = arm.dh_d[i]
        Ti[:, 3, 3] = 1.0
        out[:, i + 1] = out[:, i] @ Ti
    return out


def forward_kinematics(arm: ArmModel, q) -> Pose:
    """Tool-flange pose in the world frame."""
    q = check_limits(q)
    T = link_transforms(arm, q)[-1]
    return Pose.from_matrix(T)


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Geometric Jacobian at the tool flange: rows (vx vy vz wx wy wz)."""
    q = check_limits(q)
    frames = link_transforms(arm, q)
    p_end = frames[-1][:3, 3]
    J = np.zeros((6, 6))
    for i in range(arm.n_joints):
        axis = frames[i][:3, 2]
        origin = frames[i][:3, 3]
        J[:3, i] = np.cross(axis, p_end - origin)
        J[3:, i] = axis
    return J


def _wrap_into_limits(q) -> np.ndarray:
    """Shift each joint by multiples of 2pi until inside the limit box."""
    q = np.asarray(q, dtype=float).copy()
    q[q > JOINT_LIMIT] -= 2.0 * np.pi * np.ceil((q[q > JOINT_LIMIT] - JOINT_LIMIT) / (2.0 * np.pi))
    q[q < -JOINT_LIMIT] += 2.0 * np.pi * np.ceil((-JOINT_LIMIT - q[q < -JOINT_LIMIT]) / (2.0 * np.pi))
    return q


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """6-vector [position error; rotation-vector error] in the world frame."""
    e_p = target.position - current.position
    R_err = target.rotation() @ current.rotation().T
    return np.concatenate([e_p, rotation_vector_from_matrix(R_err)])


def inverse_kinematics(
    arm: ArmModel,
    target: Pose,
    q_seed,
    rng: np.random.Generator | None = None,
    *,
    max_iters: int = 200,
    restarts: int = 8,
    damping: float = 0.05,
    pos_tol: float = 1e-7,
    ori_tol: float = 1e-6,
    step_limit: float = 0.5,
    posture_bias: float = 0.0,
) -> np.ndarray | None:
    """Damped-least-squares IK for the flange pose; None when unreachable.

    Runs from ``q_seed`` first, then from up to ``restarts`` random seeds.
    A positive ``posture_bias`` adds a nullspace pull toward ``q_seed`` so the
    solve stays in the seed's solution branch where the task allows it.
    Returned configurations are wrapped into the joint-limit box.
    """
    if rng is None:
        rng = np.random.default_rng(0x1C5EED)
    q_ref = np.asarray(q_seed, dtype=float)
    seeds = [q_ref]
    for attempt in range(restarts + 1):
        if attempt > 0:
            seeds.append(rng.uniform(-np.pi, np.pi, size=6))
        q = _wrap_into_limits(seeds[attempt])
        err = pose_error(target, forward_kinematics(arm, q))
        lam = damping
        for _ in range(max_iters):
            if np.linalg.norm(err[:3]) < pos_tol and np.linalg.norm(err[3:]) < ori_tol:
                return q
            J = jacobian(arm, q)
            # damping grows until a step reduces the error (stability near
            # singularities) and decays on success (fast tail convergence)
            improved = False
            for _ in range(10):
                JT_inv = J.T @ np.linalg.inv(J @ J.T + lam * lam * np.eye(6))
                dq = JT_inv @ err
                if posture_bias > 0.0:
                    nullspace = np.eye(6) - JT_inv @ J
                    dq = dq + nullspace @ np.clip(
                        posture_bias * (q_ref - q), -step_limit, step_limit
                    )
                step = np.max(np.abs(dq))
                if step > step_limit:
                    dq *= step_limit / step
                q_try = _wrap_into_limits(q + dq)
                err_try = pose_error(target, forward_kinematics(arm, q_try))
                if np.linalg.norm(err_try) < np.linalg.norm(err):
                    q, err = q_try, err_try
                    lam = max(0.5 * lam, 1e-4)
                    improved = True
                    break
                lam *= 4.0
            if not improved:
                # stuck in a local minimum: restart within this attempt budget
                q = _wrap_into_limits(rng.uniform(-np.pi, np.pi, size=6))
                err = pose_error(target, forward_kinematics(arm, q))
                lam = damping
    return None


def arm_capsules(arm: ArmModel, q) -> list[Capsule]:
    """World-frame collision capsules, one per link, at configuration q."""
    q = check_limits(q)
    frames = link_transforms(arm, q)
    caps = []
    for i in range(arm.n_joints):
        T = frames[i + 1]
        e0 = T[:3, :3] @ arm.capsule_local[i, 0] + T[:3, 3]
        e1 = T[:3, :3] @ arm.capsule_local[i, 1] + T[:3, 3]
        caps.append(Capsule(e0, e1, float(arm.capsule_radii[i])))
    return caps


def arm_capsule_segments_batch(arm: ArmModel, Q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Capsule endpoints for B configurations: (B, 6, 3), (B, 6, 3), radii (6,)."""
    frames = link_transforms_batch(arm, Q)  # (B, 7, 4, 4)
    rot = frames[:, 1:, :3, :3]
    trans = frames[:, 1:, :3, 3]
    e0 = np.einsum("blij,lj->bli", rot, arm.capsule_local[:, 0]) + trans
    e1 = np.einsum("blij,lj->bli", rot, arm.capsule_local[:, 1]) + trans
    return e0, e1, arm.capsule_radii
