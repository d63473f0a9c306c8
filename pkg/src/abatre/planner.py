"""Joint-space motion planning: goal-biased RRT with rewiring, plus timing.

The tree search samples the goal configuration with a fixed probability
(0.2 by default) and uniformly otherwise, bounds each extension between a
minimum and maximum step, validates edges by dense interpolation against the
scene, and rewires neighbours through newly inserted nodes whenever that
shortens their cost-to-root and the reconnecting edge is itself valid. A
returned path is then time-parameterized with a clamped cubic spline whose
segment durations are scaled until velocity and acceleration limits hold.

Everything here is deterministic given the parameter seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .geometry import Pose, segments_hit_obstacles
from .kinematics import (
    JOINT_LIMIT,
    ArmModel,
    arm_capsule_segments_batch,
    inverse_kinematics,
    link_transforms_batch,
    within_limits,
)
from .scene import SceneWorld, obstacle_set

GOAL_TOL = 1e-9


@dataclass
class PlannerParams:
    i_max: int = 10_000
    goal_bias: float = 0.2
    steer_min: float = 0.05
    steer_max: float = 0.5
    neighbor_radius: float = 1.0
    edge_resolution: float = 0.05
    rng_seed: int = 0

    def validate(self) -> "PlannerParams":
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be in [0, 1]")
        if not 0.0 < self.steer_min <= self.steer_max:
            raise ValueError("need 0 < steer_min <= steer_max")
        if self.edge_resolution <= 0 or self.neighbor_radius <= 0 or self.i_max < 1:
            raise ValueError("resolution, radius, and i_max must be positive")
        return self


class PlanOutcome(Enum):
    SUCCESS = "success"
    UNREACHABLE_TARGET = "unreachable-target"
    INVALID_GOAL = "invalid-goal"
    ITERATION_LIMIT = "iteration-limit"


@dataclass
class PlanTree:
    """Growable node store: configurations, cost-to-root, parent indices."""

    q: np.ndarray       # (n, 6)
    d: np.ndarray       # (n,)
    parent: np.ndarray  # (n,) int, -1 for the root
    children: list[list[int]] = field(default_factory=list)

    @staticmethod
    def rooted_at(q0) -> "PlanTree":
        return PlanTree(
            q=np.asarray(q0, dtype=float).reshape(1, 6),
            d=np.zeros(1),
            parent=np.array([-1]),
            children=[[]],
        )

    @property
    def size(self) -> int:
        return self.q.shape[0]

    def insert(self, q_new, parent_idx: int) -> int:
        edge = float(np.linalg.norm(q_new - self.q[parent_idx]))
        self.q = np.vstack([self.q, np.asarray(q_new, dtype=float).reshape(1, 6)])
        self.d = np.append(self.d, self.d[parent_idx] + edge)
        self.parent = np.append(self.parent, parent_idx)
        self.children.append([])
        idx = self.size - 1
        self.children[parent_idx].append(idx)
        return idx

    def reparent(self, node: int, new_parent: int, new_cost: float) -> None:
        old_parent = int(self.parent[node])
        self.children[old_parent].remove(node)
        self.children[new_parent].append(node)
        self.parent[node] = new_parent
        delta = new_cost - self.d[node]
        stack = [node]
        while stack:
            n = stack.pop()
            self.d[n] += delta
            stack.extend(self.children[n])

    def path_to(self, node: int) -> np.ndarray:
        idxs = []
        while node != -1:
            idxs.append(node)
            node = int(self.parent[node])
        return self.q[idxs[::-1]].copy()

    def max_cost_inconsistency(self) -> float:
        if self.size == 1:
            return 0.0
        child = np.arange(1, self.size)
        par = self.parent[1:]
        edges = np.linalg.norm(self.q[child] - self.q[par], axis=1)
        return float(np.max(np.abs(self.d[child] - (self.d[par] + edges))))


@dataclass
class PlanResult:
    outcome: PlanOutcome
    path: Optional[np.ndarray]        # (m, 6) root..goal, None on failure
    goal_config: Optional[np.ndarray]
    iterations: int
    tree: Optional[PlanTree] = None
    audit_max_cost_error: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.outcome is PlanOutcome.SUCCESS


# ---------------------------------------------------------------------------
# primitive operations

def sample(params: PlannerParams, q_t, rng: np.random.Generator) -> np.ndarray:
    """Goal configuration with probability goal_bias, else uniform in limits."""
    if rng.random() < params.goal_bias:
        return np.asarray(q_t, dtype=float).copy()
    return rng.uniform(-JOINT_LIMIT, JOINT_LIMIT, size=6)


def find_nearest(Q: np.ndarray, q_s) -> int:
    """Index of the closest configuration; ties go to the lowest index."""
    diffs = Q - np.asarray(q_s, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))


def steer(q_s, q_nearest, params: PlannerParams) -> Optional[np.ndarray]:
    """Bound the extension length; None means the sample is too close to use."""
    q_s = np.asarray(q_s, dtype=float)
    q_nearest = np.asarray(q_nearest, dtype=float)
    delta = float(np.linalg.norm(q_s - q_nearest))
    if delta < params.steer_min:
        return None
    if delta > params.steer_max:
        return q_nearest + (params.steer_max / delta) * (q_s - q_nearest)
    return q_s


class _ValidityChecker:
    """Batched collision/limit checks against a frozen world.

    ``extra_capsules`` are additional moving capsules given in the tool-flange
    frame (endpoint pair + radius), used to carry a grasped component's
    collision geometry along with the arm.
    """

    def __init__(self, world: SceneWorld, arm: ArmModel, extra_capsules=None):
        self.world = world
        self.arm = arm
        self.obstacles = obstacle_set(world)
        if extra_capsules:
            self.extra_e0 = np.stack([np.asarray(e0, dtype=float) for e0, _, _ in extra_capsules])
            self.extra_e1 = np.stack([np.asarray(e1, dtype=float) for _, e1, _ in extra_capsules])
            self.extra_r = np.array([r for _, _, r in extra_capsules], dtype=float)
        else:
            self.extra_e0 = None

    def configs_valid(self, Q) -> bool:
        """True iff every configuration in Q (B, 6) is limit- and collision-free."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if np.any(np.abs(Q) > JOINT_LIMIT + 1e-12):
            return False
        e0, e1, radii = arm_capsule_segments_batch(self.arm, Q)
        B, L = e0.shape[0], e0.shape[1]
        seg0 = [e0.reshape(B * L, 3)]
        seg1 = [e1.reshape(B * L, 3)]
        rads = [np.tile(radii, B)]
        if self.extra_e0 is not None:
            flange = link_transforms_batch(self.arm, Q)[:, -1]
            rot = flange[:, :3, :3]
            tr = flange[:, :3, 3]
            x0 = np.einsum("bij,kj->bki", rot, self.extra_e0) + tr[:, None, :]
            x1 = np.einsum("bij,kj->bki", rot, self.extra_e1) + tr[:, None, :]
            K = self.extra_e0.shape[0]
            seg0.append(x0.reshape(B * K, 3))
            seg1.append(x1.reshape(B * K, 3))
            rads.append(np.tile(self.extra_r, B))
        hits = segments_hit_obstacles(
            np.concatenate(seg0), np.concatenate(seg1), np.concatenate(rads), self.obstacles
        )
        return not bool(np.any(hits))

    def edge_valid(self, q_a, q_b, resolution: float) -> bool:
        q_a = np.asarray(q_a, dtype=float)
        q_b = np.asarray(q_b, dtype=float)
        dist = float(np.linalg.norm(q_b - q_a))
        n_steps = max(1, int(np.ceil(dist / resolution)))
        ts = np.linspace(0.0, 1.0, n_steps + 1)
        Q = q_a[None, :] + ts[:, None] * (q_b - q_a)[None, :]
        return self.configs_valid(Q)


def edge_valid(
    world: SceneWorld,
    arm: ArmModel,
    q_a,
    q_b,
    edge_resolution: float,
    extra_capsules=None,
) -> bool:
    """Densely interpolated straight-segment validity (endpoints included)."""
    return _ValidityChecker(world, arm, extra_capsules).edge_valid(q_a, q_b, edge_resolution)


# ---------------------------------------------------------------------------
# tree search

def plan_to_config(
    world: SceneWorld,
    arm: ArmModel,
    q_0,
    q_t,
    params: PlannerParams,
    extra_capsules=None,
    audit: bool = False,
) -> PlanResult:
    """Grow a goal-biased tree from q_0 until q_t is inserted."""
    params.validate()
    q_0 = np.asarray(q_0, dtype=float)
    q_t = np.asarray(q_t, dtype=float)
    checker = _ValidityChecker(world, arm, extra_capsules)
    if not within_limits(q_0) or not checker.configs_valid(q_0[None, :]):
        raise ValueError("start configuration is out of limits or in collision")
    if not within_limits(q_t) or not checker.configs_valid(q_t[None, :]):
        return PlanResult(PlanOutcome.INVALID_GOAL, None, q_t.copy(), 0)

    rng = np.random.default_rng(params.rng_seed)
    tree = PlanTree.rooted_at(q_0)
    audit_err = 0.0

    if np.linalg.norm(q_0 - q_t) <= GOAL_TOL:
        return PlanResult(PlanOutcome.SUCCESS, q_0.reshape(1, 6), q_t.copy(), 0, tree, 0.0)

    iterations = 0
    while iterations < params.i_max:
        iterations += 1
        q_s = sample(params, q_t, rng)
        near = find_nearest(tree.q, q_s)
        q_new = steer(q_s, tree.q[near], params)
        if q_new is None:
            # a goal draw whose nearest node is already inside the minimum
            # steer band connects directly, otherwise nothing could ever
            # insert the goal once the tree grows that close to it
            if np.array_equal(q_s, q_t):
                q_new = q_t.copy()
            else:
                continue
        if not checker.edge_valid(tree.q[near], q_new, params.edge_resolution):
            continue
        new_idx = tree.insert(q_new, near)

        # rewire: pull neighbours through the new node when that is cheaper
        diffs = tree.q[:new_idx] - q_new
        dists = np.linalg.norm(diffs, axis=1)
        for nb in np.nonzero(dists <= params.neighbor_radius)[0]:
            nb = int(nb)
            cand = tree.d[new_idx] + dists[nb]
            if cand < tree.d[nb] - 1e-12 and checker.edge_valid(
                q_new, tree.q[nb], params.edge_resolution
            ):
                tree.reparent(nb, new_idx, cand)

        if audit:
            audit_err = max(audit_err, tree.max_cost_inconsistency())

        if np.linalg.norm(q_new - q_t) <= GOAL_TOL:
            path = tree.path_to(new_idx)
            return PlanResult(
                PlanOutcome.SUCCESS, path, q_t.copy(), iterations, tree, audit_err
            )

    return PlanResult(PlanOutcome.ITERATION_LIMIT, None, q_t.copy(), iterations, tree, audit_err)


def plan(
    world: SceneWorld,
    arm: ArmModel,
    q_0,
    p_t: Pose,
    params: PlannerParams,
    extra_capsules=None,
    audit: bool = False,
    ik_rng: np.random.Generator | None = None,
    ik_attempts: int = 5,
) -> PlanResult:
    """Plan from q_0 to a Cartesian flange pose: IK for the goal, then search.

    IK has several solution branches; colliding branches are rejected and the
    solve is retried from fresh seeds before the goal is declared invalid.
    """
    params.validate()
    if ik_rng is None:
        ik_rng = np.random.default_rng(params.rng_seed ^ 0x5EED1234)
    checker = _ValidityChecker(world, arm, extra_capsules)
    q_0 = np.asarray(q_0, dtype=float)
    best = None
    best_dist = np.inf
    invalid_only = None
    for attempt in range(ik_attempts):
        seed = q_0 if attempt == 0 else ik_rng.uniform(-np.pi, np.pi, 6)
        q_cand = inverse_kinematics(
            arm, p_t, q_seed=seed, rng=ik_rng, posture_bias=0.3 if attempt == 0 else 0.0
        )
        if q_cand is None:
            if attempt == 0 and best is None:
                return PlanResult(PlanOutcome.UNREACHABLE_TARGET, None, None, 0)
            continue
        q_cand = _wrap_toward(q_cand, q_0)
        if not checker.configs_valid(q_cand[None, :]):
            invalid_only = q_cand
            continue
        dist = float(np.linalg.norm(q_cand - q_0))
        if dist < best_dist:
            best, best_dist = q_cand, dist
    if best is None:
        if invalid_only is not None:
            return PlanResult(PlanOutcome.INVALID_GOAL, None, invalid_only, 0)
        return PlanResult(PlanOutcome.UNREACHABLE_TARGET, None, None, 0)
    return plan_to_config(world, arm, q_0, best, params, extra_capsules, audit)


def _wrap_toward(q, q_ref) -> np.ndarray:
    """Shift joints by 2*pi where that moves them closer to the reference
    while staying inside the limit box; the flange pose is unchanged."""
    q = np.asarray(q, dtype=float).copy()
    for i in range(len(q)):
        for cand in (q[i] - 2.0 * np.pi, q[i] + 2.0 * np.pi):
            if abs(cand) <= JOINT_LIMIT and abs(cand - q_ref[i]) < abs(q[i] - q_ref[i]):
                q[i] = cand
    return q


# ---------------------------------------------------------------------------
# time parameterization

@dataclass(frozen=True, eq=False)
class TimedTrajectory:
    """Per-joint clamped cubic spline through the path waypoints.

    knots: times (n,), positions (n, 6), velocities, accelerations at knots.
    Segment k is a cubic in (t - times[k]) with coefficient rows
    coeffs[k, j] = [a0, a1, a2, a3] for joint j.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    coeffs: np.ndarray  # (n-1, 6, 4)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if len(self.times) == 1:
            return self.positions[0].copy(), np.zeros(6), np.zeros(6)
        t = float(np.clip(t, 0.0, self.duration))
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        k = min(k, len(self.times) - 2)
        s = t - self.times[k]
        c = self.coeffs[k]
        q = c[:, 0] + s * (c[:, 1] + s * (c[:, 2] + s * c[:, 3]))
        qd = c[:, 1] + s * (2 * c[:, 2] + 3 * s * c[:, 3])
        qdd = 2 * c[:, 2] + 6 * s * c[:, 3]
        return q, qd, qdd

    def csv_rows(self) -> list[str]:
        rows = ["t,q1,q2,q3,q4,q5,q6,qd1,qd2,qd3,qd4,qd5,qd6,qdd1,qdd2,qdd3,qdd4,qdd5,qdd6"]
        for i, t in enumerate(self.times):
            vals = np.concatenate(
                [[t], self.positions[i], self.velocities[i], self.accelerations[i]]
            )
            rows.append(",".join(f"{v:.9f}" for v in vals))
        return rows


def _clamped_spline_velocities(times: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Knot velocities of the C2 cubic through pos with zero end velocities."""
    n = len(times)
    v = np.zeros_like(pos)
    if n <= 2:
        return v
    h = np.diff(times)
    A = np.zeros((n - 2, n - 2))
    rhs = np.zeros((n - 2, pos.shape[1]))
    for k in range(1, n - 1):
        i = k - 1
        A[i, i] = 2.0 * (1.0 / h[k - 1] + 1.0 / h[k])
        if i > 0:
            A[i, i - 1] = 1.0 / h[k - 1]
        if i < n - 3:
            A[i, i + 1] = 1.0 / h[k]
        rhs[i] = 3.0 * (
            (pos[k] - pos[k - 1]) / h[k - 1] ** 2 + (pos[k + 1] - pos[k]) / h[k] ** 2
        )
    v[1:-1] = np.linalg.solve(A, rhs)
    return v


def _hermite_coeffs(times, pos, vel) -> np.ndarray:
    n = len(times)
    coeffs = np.zeros((n - 1, pos.shape[1], 4))
    for k in range(n - 1):
        h = times[k + 1] - times[k]
        p0, p1 = pos[k], pos[k + 1]
        v0, v1 = vel[k], vel[k + 1]
        coeffs[k, :, 0] = p0
        coeffs[k, :, 1] = v0
        coeffs[k, :, 2] = (3.0 * (p1 - p0) / h - 2.0 * v0 - v1) / h
        coeffs[k, :, 3] = (2.0 * (p0 - p1) / h + v0 + v1) / h**2
    return coeffs


def _limits_ok(traj: TimedTrajectory, v_lim, a_lim, samples_per_segment: int = 100) -> bool:
    if np.any(np.abs(traj.velocities) > v_lim) or np.any(np.abs(traj.accelerations) > a_lim):
        return False
    for k in range(len(traj.times) - 1):
        h = traj.times[k + 1] - traj.times[k]
        s = np.linspace(0.0, h, samples_per_segment)[:, None]
        c = traj.coeffs[k]
        qd = c[:, 1] + s * (2 * c[:, 2] + 3 * s * c[:, 3])
        qdd = 2 * c[:, 2] + 6 * s * c[:, 3]
        if np.any(np.abs(qd) > v_lim) or np.any(np.abs(qdd) > a_lim):
            return False
    return True


def time_parameterize(path, velocity_limits, acceleration_limits) -> TimedTrajectory:
    """Assign times to a joint path so kinematic limits hold everywhere.

    Initial segment durations come from the largest per-joint displacement
    over its velocity limit; all durations are scaled up by 1.1 together until
    the spline satisfies both limits at knots and dense interior samples.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    v_lim = np.asarray(velocity_limits, dtype=float)
    a_lim = np.asarray(acceleration_limits, dtype=float)
    if path.shape[0] == 1:
        q = path[0:1].copy()
        z = np.zeros_like(q)
        return TimedTrajectory(np.zeros(1), q, z, z, np.zeros((0, path.shape[1], 4)))

    seg = np.abs(np.diff(path, axis=0))
    durations = np.maximum(np.max(seg / v_lim, axis=1), 1e-3)
    for _ in range(500):
        times = np.concatenate([[0.0], np.cumsum(durations)])
        vel = _clamped_spline_velocities(times, path)
        coeffs = _hermite_coeffs(times, path, vel)
        acc = np.zeros_like(path)
        acc[:-1] = 2.0 * coeffs[:, :, 2]
        h_last = times[-1] - times[-2]
        acc[-1] = 2.0 * coeffs[-1, :, 2] + 6.0 * coeffs[-1, :, 3] * h_last
        traj = TimedTrajectory(times, path.copy(), vel, acc, coeffs)
        if _limits_ok(traj, v_lim, a_lim):
            return traj
        durations = durations * 1.1
    raise RuntimeError("time parameterization did not converge")
