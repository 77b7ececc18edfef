"""Raster images, pose landmarks and the skeleton overlay.

Images are immutable ``uint8`` arrays of shape (height, width, 3). Black
(0, 0, 0) in an overlay is the transparent color for :func:`composite`.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, FormatError

NUM_LANDMARKS = 25
VISIBILITY_FLOOR = 0.5

# Pose-landmark connections of the 33-point BlazePose topology restricted to ids 0-24.
DEFAULT_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 7), (0, 4), (4, 5), (5, 6), (6, 8), (9, 10),
    (11, 12), (11, 13), (13, 15), (15, 17), (15, 19), (15, 21), (17, 19),
    (12, 14), (14, 16), (16, 18), (16, 20), (16, 22), (18, 20),
    (11, 23), (12, 24), (23, 24),
)


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ContractError(f"image must be HxWx3, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ContractError("image samples must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def blank(cls, height: int, width: int) -> "Image":
        return cls(np.zeros((height, width, 3), dtype=np.uint8))

    def to_float(self) -> np.ndarray:
        """Samples scaled to [0, 1] as float64."""
        return self.pixels.astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image({self.height}x{self.width})"


_TOKEN = re.compile(rb"\s*((?:#[^\n]*\n\s*)*)(\S+)")


def read_ppm(data: bytes) -> Image:
    """Decode a binary P6 PPM with maxval 255."""
    data = bytes(data)
    if not data.startswith(b"P6"):
        raise FormatError("missing P6 magic", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"truncated header, expected {name}", len(data))
        if m.start(1) == pos and not data[pos:pos + 1].isspace():
            raise FormatError(f"missing whitespace before {name}", pos)
        token = m.group(2)
        if not token.isdigit():
            raise FormatError(f"{name} is not a decimal integer: {token!r}", m.start(2))
        fields.append(int(token))
        pos = m.end(2)
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", m.start(2))
    if width < 1 or height < 1:
        raise FormatError("zero image dimension", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header", pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(data) - pos}", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return Image(px.reshape(height, width, 3))


def write_ppm(image: Image) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


@dataclass(frozen=True)
class Landmark:
    id: int
    x: float
    y: float
    visibility: float | None = None


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


@dataclass(frozen=True)
class LandmarkSet:
    points: tuple[Landmark, ...] = ()

    def __post_init__(self):
        seen = set()
        clamped = []
        for p in self.points:
            if not 0 <= p.id < NUM_LANDMARKS:
                raise ContractError(f"landmark id {p.id} outside 0..{NUM_LANDMARKS - 1}")
            if p.id in seen:
                raise ContractError(f"duplicate landmark id {p.id}")
            seen.add(p.id)
            vis = None if p.visibility is None else _clamp01(p.visibility)
            clamped.append(Landmark(int(p.id), _clamp01(p.x), _clamp01(p.y), vis))
        object.__setattr__(self, "points", tuple(clamped))

    @classmethod
    def from_array(cls, xy: np.ndarray, visibility: Sequence[float] | None = None) -> "LandmarkSet":
        """Build from a (n, 2) array whose row index is the landmark id."""
        pts = []
        for i, (x, y) in enumerate(np.asarray(xy, dtype=np.float64)):
            vis = None if visibility is None else float(visibility[i])
            pts.append(Landmark(i, float(x), float(y), vis))
        return cls(tuple(pts))

    def visible(self, floor: float = VISIBILITY_FLOOR) -> dict[int, Landmark]:
        return {p.id: p for p in self.points
                if p.visibility is None or p.visibility >= floor}

    def to_json(self, width: int, height: int) -> str:
        doc = {"width": width, "height": height, "landmarks": []}
        for p in self.points:
            rec = {"id": p.id, "x": p.x, "y": p.y}
            if p.visibility is not None:
                rec["visibility"] = p.visibility
            doc["landmarks"].append(rec)
        return json.dumps(doc)


def parse_landmarks(text: str | bytes) -> tuple[LandmarkSet, int, int]:
    """Parse a landmark document; returns (landmarks, width, height).

    Unknown keys (including ``z``) are ignored.
    """
    doc = json.loads(text)
    try:
        width, height = int(doc["width"]), int(doc["height"])
        pts = tuple(
            Landmark(int(r["id"]), float(r["x"]), float(r["y"]),
                     None if r.get("visibility") is None else float(r["visibility"]))
            for r in doc["landmarks"])
    except (KeyError, TypeError) as exc:
        raise ContractError(f"malformed landmark document: {exc}") from exc
    return LandmarkSet(pts), width, height


@dataclass(frozen=True)
class SkeletonStyle:
    line_thickness: int = 2
    joint_radius: int = 4
    bone_color: tuple[int, int, int] = (0, 255, 0)
    joint_color: tuple[int, int, int] = (0, 0, 255)

    def __post_init__(self):
        if self.line_thickness < 1:
            raise ContractError("line_thickness must be >= 1")
        if self.joint_radius < 0:
            raise ContractError("joint_radius must be >= 0")
        for color in (self.bone_color, self.joint_color):
            if len(color) != 3 or any(not 0 <= c <= 255 for c in color):
                raise ContractError(f"bad RGB color {color}")
            if tuple(color) == (0, 0, 0):
                raise ContractError("black is reserved as the transparent color")


@dataclass(frozen=True)
class BoneTopology:
    edges: tuple[tuple[int, int], ...] = field(default=DEFAULT_EDGES)

    def __post_init__(self):
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < NUM_LANDMARKS and 0 <= b < NUM_LANDMARKS):
                raise ContractError(f"edge ({a}, {b}) references an id outside 0..24")
            if a == b:
                raise ContractError(f"self-edge on landmark {a}")
            key = frozenset((a, b))
            if key in seen:
                raise ContractError(f"duplicate edge ({a}, {b})")
            seen.add(key)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _disc_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    keep = dx * dx + dy * dy <= radius * radius
    return np.stack([dy[keep], dx[keep]], axis=1)


def bresenham(r0: int, c0: int, r1: int, c1: int) -> np.ndarray:
    """Integer line pixels from (r0, c0) to (r1, c1) inclusive, as (n, 2) rows/cols."""
    pts = []
    dc, dr = abs(c1 - c0), -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    r, c = r0, c0
    while True:
        pts.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
    return np.array(pts, dtype=np.int64)


def _stamp(mask: np.ndarray, centers: np.ndarray, radius: int) -> None:
    pix = (centers[:, None, :] + _disc_offsets(radius)[None, :, :]).reshape(-1, 2)
    h, w = mask.shape
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < h) & (pix[:, 1] >= 0) & (pix[:, 1] < w)
    pix = pix[ok]
    mask[pix[:, 0], pix[:, 1]] = True


def render_skeleton(landmarks: LandmarkSet, height: int, width: int,
                    style: SkeletonStyle = SkeletonStyle(),
                    topology: BoneTopology = BoneTopology()) -> Image:
    """Draw bones then joints on a black canvas.

    Landmark (x, y) maps to pixel (round(y*(height-1)), round(x*(width-1))).
    Bones are Bresenham lines thickened with a disc of radius
    ``line_thickness // 2``; joints are filled discs of ``joint_radius``
    (radius 0 disables joints).
    """
    if height < 1 or width < 1:
        raise ContractError("canvas dimensions must be >= 1")
    pts = landmarks.visible()
    pos = {i: (_round_half_up(p.y * (height - 1)), _round_half_up(p.x * (width - 1)))
           for i, p in pts.items()}
    out = np.zeros((height, width, 3), dtype=np.uint8)

    bones = np.zeros((height, width), dtype=bool)
    for a, b in topology.edges:
        if a in pos and b in pos:
            line = bresenham(*pos[a], *pos[b])
            _stamp(bones, line, style.line_thickness // 2)
    out[bones] = style.bone_color

    if style.joint_radius > 0 and pos:
        joints = np.zeros((height, width), dtype=bool)
        _stamp(joints, np.array(list(pos.values()), dtype=np.int64), style.joint_radius)
        out[joints] = style.joint_color
    return Image(out)


def composite(base: Image, overlay: Image) -> Image:
    """Overlay pixels that are not pure black replace the base pixel."""
    if base.pixels.shape != overlay.pixels.shape:
        raise ContractError(
            f"dimension mismatch: base {base.pixels.shape} vs overlay {overlay.pixels.shape}")
    opaque = overlay.pixels.any(axis=-1, keepdims=True)
    return Image(np.where(opaque, overlay.pixels, base.pixels))


def resize_bilinear(image: Image, out_height: int, out_width: int) -> Image:
    """Corner-aligned bilinear resampling, rounded half-up and clamped."""
    if out_height < 1 or out_width < 1:
        raise ContractError("output dimensions must be >= 1")
    src = image.pixels.astype(np.float64)
    h, w = image.height, image.width

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(out_height, h)
    c0, c1, fc = coords(out_width, w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bottom = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def overlay_landmarks(image: Image, landmarks: LandmarkSet,
                      style: SkeletonStyle = SkeletonStyle(),
                      topology: BoneTopology = BoneTopology()) -> Image:
    """Render the skeleton at the image's own size and composite it on top."""
    skeleton = render_skeleton(landmarks, image.height, image.width, style, topology)
    return composite(image, skeleton)


def images_to_array(images: Iterable[Image]) -> np.ndarray:
    """Stack images into a float64 batch scaled to [0, 1]."""
    return np.stack([im.pixels for im in images]).astype(np.float64) / 255.0
