"""Camera model, depth rendering, detection oracle, and stage selection.

The detector is pluggable: anything callable as ``detector(world, camera,
rng) -> list[Detection]`` can drive the executive. The default is a
ground-truth oracle that projects component geometry through the pinhole
model and draws confidence scores from a per-category noise model, which
keeps the whole pipeline deterministic and testable without a trained model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .geometry import BoxShape, Pose
from .imaging import RasterImage
from .scene import DISASSEMBLABLE, ComponentCategory, Mobility, SceneComponent, SceneWorld


class NoDepthError(ValueError):
    """Raised when a pixel has no finite depth to backproject."""


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera: intrinsics in pixels plus world->camera extrinsics."""

    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int
    extrinsics: Pose  # x_cam = R @ x_world + t

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ValueError("principal point must lie inside the image")

    @staticmethod
    def from_dict(d: dict) -> "CameraModel":
        w, h = d["resolution"]
        ext = d["extrinsics"]
        return CameraModel(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            u0=float(d["u0"]),
            v0=float(d["v0"]),
            width=int(w),
            height=int(h),
            extrinsics=Pose.from_xyz_quat(ext["xyz"], ext["quaternion"]),
        )

    def origin_world(self) -> np.ndarray:
        R = self.extrinsics.rotation()
        return -(R.T @ self.extrinsics.position)

    def project_points(self, P) -> tuple[np.ndarray, np.ndarray]:
        """World points (N, 3) -> pixel coords (N, 2) and camera-frame depths."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        C = P @ self.extrinsics.rotation().T + self.extrinsics.position
        z = C[:, 2]
        uv = np.empty((P.shape[0], 2))
        uv[:, 0] = self.fx * C[:, 0] / z + self.u0
        uv[:, 1] = self.fy * C[:, 1] / z + self.v0
        return uv, z

    def pixel_dirs_world(self, u, v) -> np.ndarray:
        """World-frame ray directions scaled so camera-frame z == 1."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        d = np.stack(
            [(u - self.u0) / self.fx, (v - self.v0) / self.fy, np.ones_like(u)], axis=-1
        )
        return d @ self.extrinsics.rotation()  # == (R.T @ d.T).T


class StageFlag(IntEnum):
    """Task-phase indicator: which category the executive is clearing."""

    BOLTS = 1
    CABLES = 2
    MODULES = 3
    DONE = 4


@dataclass(frozen=True, eq=False)
class Detection:
    category: ComponentCategory
    bbox: tuple[float, float, float, float]  # (u_min, v_min, u_max, v_max)
    score: float
    center: tuple[float, float]
    component_id: Optional[str] = None  # populated by the oracle only


@dataclass
class ScoreModel:
    """Per-category confidence score distribution: mean and sigma in [0, 1].

    Draws are normal deviates clipped to +-3 sigma (so the emitted range is
    bounded and reproducible across seeds) and then clamped to [0, 1].
    """

    params: dict[ComponentCategory, tuple[float, float]] = field(
        default_factory=lambda: {
            ComponentCategory.BOLT: (0.463, 0.05),
            ComponentCategory.CABLE: (0.50, 0.05),
            ComponentCategory.MODULE: (1.0, 0.0),
        }
    )

    def draw(self, category: ComponentCategory, rng: np.random.Generator) -> float:
        mean, sigma = self.params.get(category, (0.5, 0.0))
        value = mean + sigma * float(np.clip(rng.standard_normal(), -3.0, 3.0))
        return float(np.clip(value, 0.0, 1.0))


def default_score_model() -> ScoreModel:
    return ScoreModel()


# ---------------------------------------------------------------------------
# ray casting

def _ray_box_hits(origin, dirs, pose: Pose, extents) -> np.ndarray:
    """Entry parameter t (>=0) of rays against a posed box; inf on miss."""
    R = pose.rotation()
    o = R.T @ (np.asarray(origin, dtype=float) - pose.position)
    D = np.asarray(dirs, dtype=float) @ R
    half = 0.5 * np.asarray(extents, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / D
        t2 = (half - o) / D
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    parallel = np.abs(D) < 1e-300
    inside = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    tin = np.max(lo, axis=-1)
    tout = np.min(hi, axis=-1)
    hit = (tout >= tin) & (tout > 0) & (tin > 0)
    return np.where(hit, tin, np.inf)


def _ray_cylinder_hits(origin, dirs, pose: Pose, radius: float, height: float) -> np.ndarray:
    """Entry parameter of rays against a posed solid cylinder; inf on miss."""
    R = pose.rotation()
    o = R.T @ (np.asarray(origin, dtype=float) - pose.position)
    D = np.asarray(dirs, dtype=float) @ R
    hh = 0.5 * height
    best = np.full(D.shape[0], np.inf)

    a = D[:, 0] ** 2 + D[:, 1] ** 2
    b = 2.0 * (o[0] * D[:, 0] + o[1] * D[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-300)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / (2.0 * a)
            z = o[2] + t * D[:, 2]
            valid = ok & (t > 0) & (np.abs(z) <= hh)
            best = np.where(valid & (t < best), t, best)

    with np.errstate(divide="ignore", invalid="ignore"):
        for cap_z in (-hh, hh):
            t = (cap_z - o[2]) / D[:, 2]
            x = o[0] + t * D[:, 0]
            y = o[1] + t * D[:, 1]
            valid = (np.abs(D[:, 2]) > 1e-300) & (t > 0) & (x * x + y * y <= radius * radius)
            best = np.where(valid & (t < best), t, best)
    return best


def _component_ray_hits(comp: SceneComponent, origin, dirs) -> np.ndarray:
    if isinstance(comp.geometry, BoxShape):
        return _ray_box_hits(origin, dirs, comp.pose, comp.geometry.extents)
    return _ray_cylinder_hits(origin, dirs, comp.pose, comp.geometry.radius, comp.geometry.height)


def raycast_depths(world: SceneWorld, camera: CameraModel, u, v) -> np.ndarray:
    """Nearest-hit camera-frame depth along the rays of pixels (u, v)."""
    origin = camera.origin_world()
    dirs = np.atleast_2d(camera.pixel_dirs_world(u, v))
    depth = np.full(dirs.shape[0], np.inf)
    for comp in world.components:
        if comp.mobility is Mobility.REMOVED:
            continue
        t = _component_ray_hits(comp, origin, dirs)
        depth = np.minimum(depth, t)
    return depth


def render_depth(world: SceneWorld, camera: CameraModel) -> np.ndarray:
    """Depth image (h, w): camera-frame Z in metres, +inf where nothing is hit."""
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    depth = raycast_depths(world, camera, us.ravel().astype(float), vs.ravel().astype(float))
    return depth.reshape(camera.height, camera.width)


_PALETTE = {
    ComponentCategory.BOLT: (205, 205, 210),
    ComponentCategory.CABLE: (230, 120, 35),
    ComponentCategory.MODULE: (190, 195, 200),
    ComponentCategory.MSD: (235, 140, 40),
    ComponentCategory.POSITIVE_BUS_BAR: (220, 60, 40),
    ComponentCategory.NEGATIVE_BUS_BAR: (40, 60, 220),
    ComponentCategory.CONTACTOR: (240, 150, 50),
    ComponentCategory.BMS_CONTROLLER: (200, 40, 40),
    ComponentCategory.PACK_BASE: (90, 95, 100),
}
_BACKGROUND = (68, 70, 75)
_LIGHT_DIR = np.array([-0.3, 0.25, -0.9]) / np.linalg.norm([-0.3, 0.25, -0.9])


def _surface_normals(comp: SceneComponent, hits_world: np.ndarray) -> np.ndarray:
    """Outward normals (N, 3) at surface points of one component."""
    R = comp.pose.rotation()
    local = (hits_world - comp.pose.position) @ R
    n_local = np.zeros_like(local)
    if isinstance(comp.geometry, BoxShape):
        ratios = np.abs(local) / comp.geometry.half
        axis = np.argmax(ratios, axis=1)
        rows = np.arange(local.shape[0])
        signs = np.sign(local[rows, axis])
        n_local[rows, axis] = np.where(signs == 0, 1.0, signs)
    else:
        hh = comp.geometry.half_height
        on_cap = np.abs(local[:, 2]) >= hh - 1e-9
        lat = local.copy()
        lat[:, 2] = 0.0
        norms = np.linalg.norm(lat, axis=1, keepdims=True)
        lateral = np.divide(lat, norms, out=np.zeros_like(lat), where=norms > 0)
        n_local = np.where(on_cap[:, None],
                           np.stack([np.zeros(len(local)), np.zeros(len(local)),
                                     np.where(np.sign(local[:, 2]) == 0, 1.0,
                                              np.sign(local[:, 2]))], axis=1),
                           lateral)
    return n_local @ R.T


def render_rgb(world: SceneWorld, camera: CameraModel) -> RasterImage:
    """Flat-shaded snapshot of the scene, used by the CLI for run snapshots."""
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    u = us.ravel().astype(float)
    v = vs.ravel().astype(float)
    origin = camera.origin_world()
    dirs = camera.pixel_dirs_world(u, v)
    n_px = dirs.shape[0]
    depth = np.full(n_px, np.inf)
    winner = np.full(n_px, -1, dtype=int)
    comps = [c for c in world.components if c.mobility is not Mobility.REMOVED]
    for idx, comp in enumerate(comps):
        t = _component_ray_hits(comp, origin, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        winner = np.where(closer, idx, winner)

    img = np.empty((n_px, 3), dtype=np.uint8)
    img[:] = _BACKGROUND
    for idx, comp in enumerate(comps):
        mask = winner == idx
        if not np.any(mask):
            continue
        hits = origin + depth[mask, None] * dirs[mask]
        normals = _surface_normals(comp, hits)
        shade = 0.35 + 0.65 * np.clip(-(normals @ _LIGHT_DIR), 0.0, 1.0)
        base = np.array(_PALETTE[comp.category], dtype=float)
        img[mask] = np.clip(shade[:, None] * base, 0, 255).astype(np.uint8)
    return RasterImage(img.reshape(camera.height, camera.width, 3))


# ---------------------------------------------------------------------------
# detection oracle

def _silhouette_points(comp: SceneComponent) -> np.ndarray:
    """World-frame surface samples whose projection bounds the component."""
    if isinstance(comp.geometry, BoxShape):
        h = comp.geometry.half
        corners = np.array(
            [[sx * h[0], sy * h[1], sz * h[2]] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        return comp.pose.transform_points(corners)
    r = comp.geometry.radius
    hh = comp.geometry.half_height
    ang = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)
    ring = np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros_like(ang)], axis=1)
    rims = np.concatenate([ring + [0, 0, hh], ring + [0, 0, -hh]])
    return comp.pose.transform_points(rims)


def _center_ray_occluded(world: SceneWorld, camera: CameraModel, comp: SceneComponent) -> bool:
    origin = camera.origin_world()
    target = comp.pose.position
    ray = target - origin
    dist = np.linalg.norm(ray)
    dirs = (ray / dist)[None, :]
    for other in world.active_components():
        if other.id == comp.id:
            continue
        t = _component_ray_hits(other, origin, dirs)[0]
        if t < dist - 1e-9:
            return True
    return False


def oracle_detect(
    world: SceneWorld,
    camera: CameraModel,
    score_model: ScoreModel,
    rng: np.random.Generator,
) -> list[Detection]:
    """Ground-truth detections of visible disassemblable components.

    A component is emitted when it is neither removed nor gripper-held and the
    ray to its centre is not blocked by other scene geometry. Results are in
    raster order of their bbox centres (v, then u, ascending); scores are
    drawn in that order so a fixed rng seed fixes the whole output.
    """
    found = []
    for comp in world.components:
        if comp.category not in DISASSEMBLABLE:
            continue
        if comp.mobility in (Mobility.REMOVED, Mobility.ATTACHED):
            continue
        if _center_ray_occluded(world, camera, comp):
            continue
        uv, z = camera.project_points(_silhouette_points(comp))
        if np.any(z <= 0):
            continue
        u_min = max(0.0, float(np.min(uv[:, 0])))
        v_min = max(0.0, float(np.min(uv[:, 1])))
        u_max = min(float(camera.width), float(np.max(uv[:, 0])))
        v_max = min(float(camera.height), float(np.max(uv[:, 1])))
        if u_max <= u_min or v_max <= v_min:
            continue
        center = (0.5 * (u_min + u_max), 0.5 * (v_min + v_max))
        found.append((comp, (u_min, v_min, u_max, v_max), center))

    found.sort(key=lambda item: (item[2][1], item[2][0]))
    detections = []
    for comp, bbox, center in found:
        detections.append(
            Detection(
                category=comp.category,
                bbox=bbox,
                score=score_model.draw(comp.category, rng),
                center=center,
                component_id=comp.id,
            )
        )
    return detections


class OracleDetector:
    """Callable detector wrapper around :func:`oracle_detect`."""

    def __init__(self, score_model: ScoreModel | None = None):
        self.score_model = score_model or default_score_model()

    def __call__(self, world: SceneWorld, camera: CameraModel, rng: np.random.Generator):
        return oracle_detect(world, camera, self.score_model, rng)


def stage_and_target(detections) -> tuple[StageFlag, Optional[Detection]]:
    """Stage flag and next target from per-category detection lists.

    Bolts while any bolt is listed, then cables, then modules, then done;
    the target is the first entry of the active list.
    """
    bolts = [d for d in detections if d.category is ComponentCategory.BOLT]
    cables = [d for d in detections if d.category is ComponentCategory.CABLE]
    modules = [d for d in detections if d.category is ComponentCategory.MODULE]
    if bolts:
        return StageFlag.BOLTS, bolts[0]
    if cables:
        return StageFlag.CABLES, cables[0]
    if modules:
        return StageFlag.MODULES, modules[0]
    return StageFlag.DONE, None


# ---------------------------------------------------------------------------
# frame transformation

def backproject(camera: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    """Pixel (u, v) with camera-frame depth -> world point."""
    if not np.isfinite(depth):
        raise NoDepthError(f"no finite depth at pixel ({u:.1f}, {v:.1f})")
    cam_pt = np.array(
        [depth * (u - camera.u0) / camera.fx, depth * (v - camera.v0) / camera.fy, depth]
    )
    R = camera.extrinsics.rotation()
    return R.T @ (cam_pt - camera.extrinsics.position)


def pixel_to_world(camera: CameraModel, u: float, v: float, depth_image: np.ndarray) -> np.ndarray:
    """Convert an image coordinate to a world point using the depth image.

    Depth is looked up at the nearest integer pixel; raises NoDepthError where
    the depth image has no hit.
    """
    iu = int(np.clip(round(u), 0, camera.width - 1))
    iv = int(np.clip(round(v), 0, camera.height - 1))
    return backproject(camera, u, v, float(depth_image[iv, iu]))


# ---------------------------------------------------------------------------
# exports

def save_depth_pgm(depth: np.ndarray, path) -> None:
    """16-bit PGM in millimetres; pixels with no hit are written as 0."""
    h, w = depth.shape
    mm = np.where(np.isfinite(depth), np.clip(depth * 1000.0, 0, 65535), 0.0)
    data = mm.astype(">u2").tobytes()
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data)


def detections_to_csv_rows(detections) -> list[str]:
    rows = ["category,u_min,v_min,u_max,v_max,score"]
    for d in detections:
        rows.append(
            f"{d.category.value},{d.bbox[0]:.2f},{d.bbox[1]:.2f},"
            f"{d.bbox[2]:.2f},{d.bbox[3]:.2f},{d.score:.4f}"
        )
    return rows
