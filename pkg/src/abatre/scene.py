"""World model of the battery pack: components, mobility states, grasping.

The world is a value: every transition returns a new ``SceneWorld`` and the
inputs are never mutated, so replaying an operation sequence is exact and the
simulator loop stays deterministic.

Mobility only moves forward along Static -> Movable -> AttachedToGripper ->
Removed. A component may leave Static only once everything in its ``locks``
set has been Removed (bolts pin cables down, cables pin modules down).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .geometry import (
    BoxShape,
    Capsule,
    CylinderShape,
    ObstacleSet,
    Pose,
    point_in_box,
    segments_hit_obstacles,
)

if TYPE_CHECKING:  # avoids a circular import; perception imports scene
    from .perception import CameraModel

ATTACH_THRESHOLD = 0.005  # m between tool point and grasp point
QUATERNION_TOL = 1e-9


class ComponentCategory(Enum):
    BOLT = "Bolt"
    CABLE = "Cable"
    MODULE = "Module"
    MSD = "MSD"
    POSITIVE_BUS_BAR = "PositiveBusBar"
    NEGATIVE_BUS_BAR = "NegativeBusBar"
    CONTACTOR = "Contactor"
    BMS_CONTROLLER = "BMSController"
    PACK_BASE = "PackBase"


#: Categories the executive is allowed to target; everything else is inert.
DISASSEMBLABLE = frozenset(
    {ComponentCategory.BOLT, ComponentCategory.CABLE, ComponentCategory.MODULE}
)


class Mobility(Enum):
    STATIC = "Static"
    MOVABLE = "Movable"
    ATTACHED = "AttachedToGripper"
    REMOVED = "Removed"


_MOBILITY_ORDER = [Mobility.STATIC, Mobility.MOVABLE, Mobility.ATTACHED, Mobility.REMOVED]


class SceneError(ValueError):
    pass


class SceneValidationError(SceneError):
    pass


class ComponentNotFoundError(SceneError, KeyError):
    pass


class WrongStateError(SceneError):
    pass


class PrecedenceError(SceneError):
    pass


class TooFarError(SceneError):
    pass


@dataclass(frozen=True, eq=False)
class SceneComponent:
    id: str
    category: ComponentCategory
    pose: Pose
    geometry: BoxShape | CylinderShape
    mobility: Mobility = Mobility.STATIC
    locks: frozenset[str] = frozenset()
    # tool->component transform recorded at attach time
    grip_transform: Optional[Pose] = None

    @property
    def top_height(self) -> float:
        if isinstance(self.geometry, BoxShape):
            return 0.5 * float(self.geometry.extents[2])
        return 0.5 * self.geometry.height

    def grasp_point(self) -> np.ndarray:
        """Top-face centre in the world frame; where the tool must reach."""
        return self.pose.transform_point(np.array([0.0, 0.0, self.top_height]))


@dataclass(frozen=True, eq=False)
class DropZone:
    pose: Pose
    extent: np.ndarray  # full box side lengths

    def contains(self, point) -> bool:
        return point_in_box(point, self.pose, self.extent)


@dataclass(frozen=True, eq=False)
class SceneWorld:
    components: tuple[SceneComponent, ...]
    drop_zones: dict[ComponentCategory, DropZone]
    camera: "CameraModel"
    rng_seed: int = 0

    def component(self, cid: str) -> SceneComponent:
        for c in self.components:
            if c.id == cid:
                return c
        raise ComponentNotFoundError(f"no component with id {cid!r}")

    def replace_component(self, updated: SceneComponent) -> "SceneWorld":
        comps = tuple(updated if c.id == updated.id else c for c in self.components)
        return replace(self, components=comps)

    def attached_component(self) -> Optional[SceneComponent]:
        for c in self.components:
            if c.mobility is Mobility.ATTACHED:
                return c
        return None

    def active_components(self) -> list[SceneComponent]:
        """Components that act as obstacles: not removed, not gripper-held."""
        return [
            c
            for c in self.components
            if c.mobility not in (Mobility.REMOVED, Mobility.ATTACHED)
        ]


# ---------------------------------------------------------------------------
# validation and loading

def validate_world(world: SceneWorld) -> SceneWorld:
    ids = [c.id for c in world.components]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise SceneValidationError(f"duplicate component ids: {dupes}")
    id_set = set(ids)
    for c in world.components:
        missing = c.locks - id_set
        if missing:
            raise SceneValidationError(
                f"component {c.id!r} locked by unknown ids: {sorted(missing)}"
            )
        if c.pose.quaternion_unit_error() > QUATERNION_TOL:
            raise SceneValidationError(f"component {c.id!r} quaternion is not unit norm")
        if isinstance(c.geometry, BoxShape):
            if np.any(np.asarray(c.geometry.extents) <= 0):
                raise SceneValidationError(f"component {c.id!r} has non-positive box extents")
        elif c.geometry.radius <= 0 or c.geometry.height <= 0:
            raise SceneValidationError(f"component {c.id!r} has non-positive cylinder size")
    present = {c.category for c in world.components if c.category in DISASSEMBLABLE}
    if not present:
        raise SceneValidationError("no disassemblable components in scene")
    for cat in present:
        if cat not in world.drop_zones:
            raise SceneValidationError(f"missing drop zone for category {cat.value}")
    return world


def _pose_from_dict(d) -> Pose:
    return Pose.from_xyz_quat(d["xyz"], d.get("quaternion", [1.0, 0.0, 0.0, 0.0]))


def _geometry_from_dict(d) -> BoxShape | CylinderShape:
    kind = d["type"]
    dims = d["dims"]
    if kind == "box":
        return BoxShape(np.asarray(dims, dtype=float))
    if kind == "cylinder":
        return CylinderShape(float(dims[0]), float(dims[1]))
    raise SceneValidationError(f"unknown geometry type {kind!r}")


def world_from_dict(data: dict) -> SceneWorld:
    from .perception import CameraModel  # deferred: perception imports scene

    try:
        comps = []
        for cd in data["components"]:
            comps.append(
                SceneComponent(
                    id=str(cd["id"]),
                    category=ComponentCategory(cd["category"]),
                    pose=_pose_from_dict(cd["pose"]),
                    geometry=_geometry_from_dict(cd["geometry"]),
                    locks=frozenset(str(x) for x in cd.get("locks", [])),
                )
            )
        zones = {}
        for cat_name, zd in data.get("drop_zones", {}).items():
            zones[ComponentCategory(cat_name)] = DropZone(
                pose=_pose_from_dict(zd), extent=np.asarray(zd["extent"], dtype=float)
            )
        camera = CameraModel.from_dict(data["camera"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneValidationError(f"malformed scene document: {exc}") from exc

    world = SceneWorld(
        components=tuple(comps),
        drop_zones=zones,
        camera=camera,
        rng_seed=int(data.get("seed", 0)),
    )
    return validate_world(world)


def load_scene(path) -> SceneWorld:
    """Parse and validate a scene file (JSON, UTF-8)."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneValidationError(f"cannot read scene file {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneValidationError(f"scene file {p} is not valid JSON: {exc}") from exc
    return world_from_dict(data)


# ---------------------------------------------------------------------------
# mobility transitions

def make_movable(world: SceneWorld, cid: str) -> SceneWorld:
    """Static -> Movable, allowed only once every locking component is Removed."""
    comp = world.component(cid)
    if comp.mobility is not Mobility.STATIC:
        raise WrongStateError(f"{cid} is {comp.mobility.value}, expected Static")
    blockers = [
        l for l in sorted(comp.locks) if world.component(l).mobility is not Mobility.REMOVED
    ]
    if blockers:
        raise PrecedenceError(f"{cid} still locked by {blockers}")
    return world.replace_component(replace(comp, mobility=Mobility.MOVABLE))


def attach(world: SceneWorld, cid: str, gripper_pose: Pose) -> SceneWorld:
    """Movable -> AttachedToGripper when the tool point is close enough."""
    comp = world.component(cid)
    if comp.mobility is not Mobility.MOVABLE:
        raise WrongStateError(f"{cid} is {comp.mobility.value}, expected Movable")
    gap = float(np.linalg.norm(comp.grasp_point() - gripper_pose.position))
    if gap > ATTACH_THRESHOLD:
        raise TooFarError(
            f"tool point {gap * 1000:.1f} mm from grasp point of {cid}; "
            f"threshold {ATTACH_THRESHOLD * 1000:.1f} mm"
        )
    rel = gripper_pose.inverse().compose(comp.pose)
    return world.replace_component(
        replace(comp, mobility=Mobility.ATTACHED, grip_transform=rel)
    )


def move_attached(world: SceneWorld, gripper_pose: Pose) -> SceneWorld:
    """Carry the attached component rigidly to follow the tool pose."""
    comp = world.attached_component()
    if comp is None:
        return world
    new_pose = gripper_pose.compose(comp.grip_transform)
    return world.replace_component(replace(comp, pose=new_pose))


def detach(world: SceneWorld, cid: str) -> tuple[SceneWorld, bool]:
    """AttachedToGripper -> Removed; reports whether it landed in its zone."""
    comp = world.component(cid)
    if comp.mobility is not Mobility.ATTACHED:
        raise WrongStateError(f"{cid} is {comp.mobility.value}, expected AttachedToGripper")
    zone = world.drop_zones.get(comp.category)
    in_zone = zone is not None and zone.contains(comp.pose.position)
    new_world = world.replace_component(
        replace(comp, mobility=Mobility.REMOVED, grip_transform=None)
    )
    return new_world, in_zone


# ---------------------------------------------------------------------------
# collision queries

def obstacle_set(world: SceneWorld) -> ObstacleSet:
    boxes = []
    cylinders = []
    for c in world.active_components():
        if isinstance(c.geometry, BoxShape):
            boxes.append((c.pose, c.geometry.extents))
        else:
            cylinders.append((c.pose, c.geometry.radius, c.geometry.height))
    return ObstacleSet.build(boxes, cylinders)


def collides(world: SceneWorld, arm_shape: Sequence[Capsule]) -> bool:
    """True iff any capsule strictly intersects a non-removed, non-held component."""
    if not arm_shape:
        return False
    obs = obstacle_set(world)
    p0 = np.stack([np.asarray(c.p0, dtype=float) for c in arm_shape])
    p1 = np.stack([np.asarray(c.p1, dtype=float) for c in arm_shape])
    radii = np.array([c.radius for c in arm_shape], dtype=float)
    return bool(np.any(segments_hit_obstacles(p0, p1, radii, obs)))


def mobility_rank(m: Mobility) -> int:
    return _MOBILITY_ORDER.index(m)
