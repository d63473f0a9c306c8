"""Pack-condition filters and label-preserving dataset augmentation.

Images are 8-bit RGB rasters. Bounding-box labels use integer edge
coordinates (u_min, v_min, u_max, v_max) with 0 <= u <= width so that flips
and quarter-turn rotations map labels exactly, with no interpolation
ambiguity. Every operation is deterministic given its seed, and
zero-strength parameters are exact identities at the bit level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

FLIP_CHOICES = ("none", "horizontal", "vertical")
ROTATION_CHOICES = (0, 90, 180, 270)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Row-major RGB pixel grid, uint8, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be a (h, w, 3) uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "RasterImage":
        return RasterImage(self.pixels.copy())

    def same_pixels(self, other: "RasterImage") -> bool:
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )


@dataclass(frozen=True)
class BoxLabel:
    category: str
    bbox: tuple[int, int, int, int]  # u_min, v_min, u_max, v_max (edge coords)

    @property
    def area(self) -> int:
        u1, v1, u2, v2 = self.bbox
        return max(0, u2 - u1) * max(0, v2 - v1)


@dataclass(frozen=True)
class LabeledImage:
    image: RasterImage
    labels: tuple[BoxLabel, ...]

    def validate(self) -> "LabeledImage":
        w, h = self.image.width, self.image.height
        for lab in self.labels:
            u1, v1, u2, v2 = lab.bbox
            if not (0 <= u1 < u2 <= w and 0 <= v1 < v2 <= h):
                raise ValueError(f"label {lab} outside {w}x{h} image")
        return self


class PackCondition(Enum):
    DEFORMATION = "deformation"
    CONTAMINATION = "contamination"
    DUST = "dust"
    SCRATCHES = "scratches"


@dataclass(frozen=True)
class AugmentSpec:
    """One augmentation draw; neutral defaults reproduce the input exactly."""

    brightness: float = 0.0        # delta in [-1, 1], applied as delta * 255
    contrast: float = 1.0          # scale around mid-grey, > 0
    crop: float = 1.0              # kept fraction of each dimension, (0, 1]
    flip: str = "none"
    noise_sigma: float = 0.0       # gaussian sigma in channel units
    rotation: int = 0              # degrees, multiple of 90
    rng_seed: int = 0

    def validate(self) -> "AugmentSpec":
        if not -1.0 <= self.brightness <= 1.0:
            raise ValueError("brightness delta must be in [-1, 1]")
        if self.contrast <= 0:
            raise ValueError("contrast factor must be positive")
        if not 0.0 < self.crop <= 1.0:
            raise ValueError("crop fraction must be in (0, 1]")
        if self.flip not in FLIP_CHOICES:
            raise ValueError(f"flip must be one of {FLIP_CHOICES}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.rotation % 360 not in ROTATION_CHOICES:
            raise ValueError(f"rotation must be one of {ROTATION_CHOICES}")
        return self


# ---------------------------------------------------------------------------
# condition filters

def _bilinear_upsample(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    ch, cw = coarse.shape
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x1)]
    c = coarse[np.ix_(y1, x0)]
    d = coarse[np.ix_(y1, x1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _condition_dust(px: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    opacity = 0.18 * strength
    jitter = rng.normal(0.0, 8.0 * strength, size=px.shape)
    overlay = 185.0 + jitter
    return _to_u8((1.0 - opacity) * px.astype(float) + opacity * overlay)


def _condition_contamination(px: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    h, w = px.shape[:2]
    coarse = rng.random((6, 8))
    mask = _bilinear_upsample(coarse, h, w)
    weight = np.clip((mask - 0.55) / 0.20, 0.0, 1.0) * 0.55 * strength
    tint = np.array([62.0, 152.0, 74.0])
    out = px.astype(float) * (1.0 - weight[..., None]) + weight[..., None] * tint
    return _to_u8(out)


def _condition_scratches(px: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    h, w = px.shape[:2]
    out = px.astype(float)
    n_lines = max(1, int(round(12 * strength)))
    mark = np.array([226.0, 226.0, 230.0])
    for _ in range(n_lines):
        x0, x1 = rng.uniform(0, w - 1, size=2)
        y0, y1 = rng.uniform(0, h - 1, size=2)
        n = int(max(2, 2 * np.hypot(x1 - x0, y1 - y0)))
        xs = np.clip(np.rint(np.linspace(x0, x1, n)).astype(int), 0, w - 1)
        ys = np.clip(np.rint(np.linspace(y0, y1, n)).astype(int), 0, h - 1)
        out[ys, xs] = 0.25 * out[ys, xs] + 0.75 * mark
    return _to_u8(out)


def _condition_deformation(px: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    h, w = px.shape[:2]
    # dents appear mostly along the right edge of a crushed pack
    edge = rng.choice(4, p=[0.55, 0.15, 0.15, 0.15])  # right, left, top, bottom
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    map_x = xx.astype(float)
    map_y = yy.astype(float)
    center = rng.uniform(0.25, 0.75)
    if edge in (0, 1):
        band = max(2, int(0.18 * w))
        amp = 0.06 * w * strength
        bump = np.exp(-(((yy - center * h) / (0.18 * h)) ** 2))
        if edge == 0:
            t = np.clip((xx - (w - band)) / band, 0.0, 1.0)
            map_x = xx - amp * t * bump
        else:
            t = np.clip((band - xx) / band, 0.0, 1.0)
            map_x = xx + amp * t * bump
    else:
        band = max(2, int(0.18 * h))
        amp = 0.06 * h * strength
        bump = np.exp(-(((xx - center * w) / (0.18 * w)) ** 2))
        if edge == 2:
            t = np.clip((band - yy) / band, 0.0, 1.0)
            map_y = yy + amp * t * bump
        else:
            t = np.clip((yy - (h - band)) / band, 0.0, 1.0)
            map_y = yy - amp * t * bump
    ix = np.clip(np.rint(map_x).astype(int), 0, w - 1)
    iy = np.clip(np.rint(map_y).astype(int), 0, h - 1)
    return px[iy, ix]


_CONDITION_FNS = {
    PackCondition.DUST: _condition_dust,
    PackCondition.CONTAMINATION: _condition_contamination,
    PackCondition.SCRATCHES: _condition_scratches,
    PackCondition.DEFORMATION: _condition_deformation,
}


def apply_condition(
    image: RasterImage,
    condition: PackCondition,
    rng: np.random.Generator,
    strength: float = 1.0,
) -> RasterImage:
    """Simulate an aging/damage condition on a pack image.

    strength scales the effect; 0 returns a bit-identical copy without
    consuming random draws.
    """
    if strength < 0:
        raise ValueError("strength must be >= 0")
    if strength == 0.0:
        return image.copy()
    return RasterImage(_CONDITION_FNS[condition](image.pixels, rng, strength))


# ---------------------------------------------------------------------------
# augmentation

def _rotate90_once(px: np.ndarray) -> np.ndarray:
    # point map (u, v) -> (v, w - u): transpose then flip rows
    return np.flip(px.transpose(1, 0, 2), axis=0).copy()


def _rotate_label_once(bbox, w: int) -> tuple[int, int, int, int]:
    u1, v1, u2, v2 = bbox
    return (v1, w - u2, v2, w - u1)


def augment(labeled: LabeledImage, spec: AugmentSpec) -> LabeledImage:
    """Apply one augmentation draw: crop, flip, rotate, brightness, contrast, noise.

    Geometry ops transform labels exactly; labels clipped away by the crop
    (area under one pixel) are dropped.
    """
    spec.validate()
    labeled.validate()
    rng = np.random.default_rng(spec.rng_seed)
    px = labeled.image.pixels
    labels = list(labeled.labels)

    if spec.crop < 1.0:
        h, w = px.shape[:2]
        cw = max(1, int(round(w * spec.crop)))
        ch = max(1, int(round(h * spec.crop)))
        ox = int(rng.integers(0, w - cw + 1))
        oy = int(rng.integers(0, h - ch + 1))
        px = px[oy : oy + ch, ox : ox + cw].copy()
        clipped = []
        for lab in labels:
            u1, v1, u2, v2 = lab.bbox
            nb = (
                int(np.clip(u1 - ox, 0, cw)),
                int(np.clip(v1 - oy, 0, ch)),
                int(np.clip(u2 - ox, 0, cw)),
                int(np.clip(v2 - oy, 0, ch)),
            )
            lab = replace(lab, bbox=nb)
            if lab.area >= 1:
                clipped.append(lab)
        labels = clipped

    if spec.flip == "horizontal":
        w = px.shape[1]
        px = np.flip(px, axis=1).copy()
        labels = [
            replace(l, bbox=(w - l.bbox[2], l.bbox[1], w - l.bbox[0], l.bbox[3])) for l in labels
        ]
    elif spec.flip == "vertical":
        h = px.shape[0]
        px = np.flip(px, axis=0).copy()
        labels = [
            replace(l, bbox=(l.bbox[0], h - l.bbox[3], l.bbox[2], h - l.bbox[1])) for l in labels
        ]

    for _ in range((spec.rotation % 360) // 90):
        w = px.shape[1]
        labels = [replace(l, bbox=_rotate_label_once(l.bbox, w)) for l in labels]
        px = _rotate90_once(px)

    if spec.brightness != 0.0:
        px = _to_u8(px.astype(float) + spec.brightness * 255.0)
    if spec.contrast != 1.0:
        px = _to_u8(128.0 + spec.contrast * (px.astype(float) - 128.0))
    if spec.noise_sigma > 0.0:
        px = _to_u8(px.astype(float) + rng.normal(0.0, spec.noise_sigma, size=px.shape))

    return LabeledImage(RasterImage(np.ascontiguousarray(px)), tuple(labels)).validate()


def sample_augment_spec(rng: np.random.Generator) -> AugmentSpec:
    """Defaults for dataset expansion; documented sampling ranges."""
    return AugmentSpec(
        brightness=float(rng.uniform(-0.2, 0.2)),
        contrast=float(rng.uniform(0.8, 1.25)),
        crop=float(rng.uniform(0.8, 1.0)),
        flip=str(rng.choice(FLIP_CHOICES)),
        noise_sigma=float(rng.uniform(0.0, 8.0)),
        rotation=int(rng.choice(ROTATION_CHOICES)),
        rng_seed=int(rng.integers(0, 2**31 - 1)),
    )


def expand_dataset(
    labeled: LabeledImage, n_variants: int = 6, rng: np.random.Generator | None = None
) -> list[LabeledImage]:
    """Produce ``n_variants`` independently sampled augmentations of one input."""
    if n_variants < 1:
        raise ValueError("n_variants must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    return [augment(labeled, sample_augment_spec(rng)) for _ in range(n_variants)]


# ---------------------------------------------------------------------------
# file formats

def load_png(path) -> RasterImage:
    with Image.open(path) as im:
        return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())


def save_png(image: RasterImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def load_ppm(path) -> RasterImage:
    raw = Path(path).read_bytes()
    fields = []
    idx = 0
    while len(fields) < 4:
        if raw[idx : idx + 1] == b"#":
            idx = raw.index(b"\n", idx) + 1
            continue
        end = idx
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end > idx:
            fields.append(raw[idx:end])
        idx = end + 1
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError("expected binary P6 PPM with maxval 255")
    w, h = int(fields[1]), int(fields[2])
    px = np.frombuffer(raw[idx : idx + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return RasterImage(px.copy())


def save_ppm(image: RasterImage, path) -> None:
    with open(path, "wb") as f:
        f.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        f.write(image.pixels.tobytes())


def load_image(path) -> RasterImage:
    if str(path).lower().endswith(".ppm"):
        return load_ppm(path)
    return load_png(path)


def save_image(image: RasterImage, path) -> None:
    if str(path).lower().endswith(".ppm"):
        save_ppm(image, path)
    else:
        save_png(image, path)


def labels_to_csv(labels) -> str:
    rows = ["category,u_min,v_min,u_max,v_max"]
    for lab in labels:
        u1, v1, u2, v2 = lab.bbox
        rows.append(f"{lab.category},{u1},{v1},{u2},{v2}")
    return "\n".join(rows) + "\n"


def labels_from_csv(text: str) -> tuple[BoxLabel, ...]:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    out = []
    for ln in lines[1:]:
        cat, *nums = ln.split(",")
        u1, v1, u2, v2 = (int(x) for x in nums)
        out.append(BoxLabel(cat, (u1, v1, u2, v2)))
    return tuple(out)


def write_manifest(pairs, path) -> None:
    doc = {"pairs": [{"image": str(i), "labels": str(l)} for i, l in pairs]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[str, str]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(p["image"], p["labels"]) for p in doc["pairs"]]
