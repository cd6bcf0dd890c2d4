"""Oriented FAST corners, 256-bit rotated binary descriptors, Hamming matching.

Detection is FAST-9 with non-maximal suppression and Harris re-ranking;
orientation comes from the intensity centroid of a radius-15 disc; descriptor
bits compare smoothed intensities over a fixed random test pattern rotated to
the keypoint angle. All heavy paths are vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import GreyImage

DESCRIPTOR_BITS = 256
DESCRIPTOR_BYTES = DESCRIPTOR_BITS // 8
PATCH_RADIUS = 15
MARGIN = 16

DETECTED = "detected"
ABSENT = "absent"
UNCERTAIN = "uncertain"

DEFAULT_DETECT_MIN = 50  # more matches than this: sticker present
DEFAULT_ABSENT_MAX = 15  # fewer than this: no sticker

# FAST circle of radius 3, clockwise from 12 o'clock: (dy, dx).
_CIRCLE = np.array(
    [(-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
     (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1)],
    dtype=np.int64,
)


def _run9_lut() -> np.ndarray:
    """For every 16-bit neighbourhood mask: does it hold 9 contiguous set bits?"""
    values = np.arange(1 << 16, dtype=np.uint32)
    doubled = values | (values << 16)
    ok = np.zeros(1 << 16, dtype=bool)
    for start in range(16):
        run = np.ones(1 << 16, dtype=bool)
        for k in range(9):
            run &= ((doubled >> (start + k)) & 1).astype(bool)
        ok |= run
    return ok


_RUN9 = _run9_lut()

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def _disc_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    keep = dy**2 + dx**2 <= radius**2
    return dy[keep], dx[keep]


_DISC_DY, _DISC_DX = _disc_offsets(PATCH_RADIUS)


def _test_pattern(seed: int = 20240927, bits: int = DESCRIPTOR_BITS) -> np.ndarray:
    """Fixed (bits, 4) array of paired test offsets inside a radius-13 disc."""
    rng = np.random.default_rng(seed)
    pts = np.empty((2 * bits, 2))
    count = 0
    while count < 2 * bits:
        cand = rng.normal(0.0, 5.5, size=(4 * bits, 2))
        good = cand[(cand**2).sum(axis=1) <= 13.0**2]
        take = min(len(good), 2 * bits - count)
        pts[count : count + take] = good[:take]
        count += take
    return np.hstack([pts[:bits], pts[bits:]])  # x1 y1 x2 y2


_PATTERN = _test_pattern()


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    response: float
    angle: float  # radians in [0, 2*pi)


@dataclass(frozen=True)
class FeatureSet:
    """Keypoints with their packed 32-byte descriptors, response-ordered."""

    keypoints: list[Keypoint]
    descriptors: np.ndarray  # (n, 32) uint8

    def __post_init__(self):
        d = np.asarray(self.descriptors, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
        if len(self.keypoints) != len(d):
            raise ValueError("keypoint/descriptor count mismatch")
        object.__setattr__(self, "descriptors", d)

    def __len__(self) -> int:
        return len(self.keypoints)

    def __iter__(self):
        return zip(self.keypoints, self.descriptors)

    @property
    def positions(self) -> np.ndarray:
        return np.array([[k.x, k.y] for k in self.keypoints]).reshape(-1, 2)


@dataclass(frozen=True)
class MatchSet:
    """Mutual nearest-neighbour matches, distance-ascending."""

    pairs: list[tuple[int, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def scene_indices(self) -> list[int]:
        return [p[1] for p in self.pairs]


def _fast_candidates(px: np.ndarray, threshold: float):
    h, w = px.shape
    core = px[3 : h - 3, 3 : w - 3]
    bright_bits = np.zeros(core.shape, dtype=np.uint16)
    dark_bits = np.zeros(core.shape, dtype=np.uint16)
    diffs = np.empty((16,) + core.shape, dtype=np.float32)
    for i, (dy, dx) in enumerate(_CIRCLE):
        shifted = px[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
        d = shifted - core
        diffs[i] = d
        bright_bits |= (d > threshold).astype(np.uint16) << i
        dark_bits |= (d < -threshold).astype(np.uint16) << i
    is_corner = _RUN9[bright_bits] | _RUN9[dark_bits]
    if not is_corner.any():
        return np.empty((0, 2), dtype=np.int64), np.zeros(0)
    excess = np.abs(diffs) - threshold
    np.clip(excess, 0.0, None, out=excess)
    score = excess.sum(axis=0)
    score[~is_corner] = 0.0
    local_max = score >= ndimage.maximum_filter(score, size=3, mode="constant")
    keep = is_corner & local_max & (score > 0)
    ys, xs = np.nonzero(keep)
    return np.column_stack([xs + 3, ys + 3]), score[ys, xs]


def _harris_response(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(px, axis=1, mode="nearest")
    gy = ndimage.sobel(px, axis=0, mode="nearest")
    win = 7
    ixx = ndimage.uniform_filter(gx * gx, win, mode="nearest")
    iyy = ndimage.uniform_filter(gy * gy, win, mode="nearest")
    ixy = ndimage.uniform_filter(gx * gy, win, mode="nearest")
    det = ixx * iyy - ixy * ixy
    trace = ixx + iyy
    response = det - 0.04 * trace * trace
    return response[ys, xs]


def _orientations(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    patches = px[ys[:, None] + _DISC_DY, xs[:, None] + _DISC_DX]
    m10 = patches @ _DISC_DX.astype(np.float64)
    m01 = patches @ _DISC_DY.astype(np.float64)
    return np.mod(np.arctan2(m01, m10), 2 * np.pi)


def _describe(smooth: np.ndarray, xs, ys, angles) -> np.ndarray:
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    x1, y1, x2, y2 = _PATTERN.T
    ax = np.rint(c * x1 - s * y1).astype(np.int64) + xs[:, None]
    ay = np.rint(s * x1 + c * y1).astype(np.int64) + ys[:, None]
    bx = np.rint(c * x2 - s * y2).astype(np.int64) + xs[:, None]
    by = np.rint(s * x2 + c * y2).astype(np.int64) + ys[:, None]
    bits = smooth[ay, ax] < smooth[by, bx]
    return np.packbits(bits, axis=1)


def _detect_level(px: np.ndarray, max_features: int, threshold: float):
    h, w = px.shape
    pts, scores = _fast_candidates(px, threshold)
    if len(pts) == 0:
        return [], np.empty((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    inside = (
        (pts[:, 0] >= MARGIN)
        & (pts[:, 0] < w - MARGIN)
        & (pts[:, 1] >= MARGIN)
        & (pts[:, 1] < h - MARGIN)
    )
    pts, scores = pts[inside], scores[inside]
    if len(pts) == 0:
        return [], np.empty((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    xs, ys = pts[:, 0], pts[:, 1]
    harris = _harris_response(px, xs, ys)
    order = np.argsort(-harris, kind="stable")[:max_features]
    xs, ys, scores = xs[order], ys[order], scores[order]
    angles = _orientations(px, xs, ys)
    smooth = ndimage.uniform_filter(px, 5, mode="nearest")
    descriptors = _describe(smooth, xs, ys, angles)
    kps = [
        Keypoint(float(x), float(y), float(r), float(a))
        for x, y, r, a in zip(xs, ys, scores, angles)
    ]
    return kps, descriptors


def detect_and_describe(
    img: GreyImage,
    max_features: int = 1000,
    threshold: float = 20.0,
    levels: int = 1,
    scale_factor: float = 1.5,
) -> FeatureSet:
    """Detect oriented corners and describe them; multi-scale when levels > 1."""
    if img.width < 32 or img.height < 32:
        raise ValueError("image too small for feature detection (min 32x32)")
    px = img.to_float()
    all_kps: list[Keypoint] = []
    all_desc = []
    for lvl in range(levels):
        factor = scale_factor**lvl
        if lvl == 0:
            level_px = px
        else:
            level_px = ndimage.zoom(px, 1.0 / factor, order=1, mode="nearest")
            if min(level_px.shape) < 2 * MARGIN + 1:
                break
        kps, desc = _detect_level(level_px, max_features, threshold)
        for k in kps:
            all_kps.append(Keypoint(k.x * factor, k.y * factor, k.response, k.angle))
        all_desc.append(desc)
    descriptors = (
        np.vstack(all_desc) if all_desc else np.empty((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    )
    order = np.argsort([-k.response for k in all_kps], kind="stable")[:max_features]
    return FeatureSet([all_kps[i] for i in order], descriptors[order])


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def _distance_matrix(ref: np.ndarray, scene: np.ndarray) -> np.ndarray:
    out = np.empty((len(ref), len(scene)), dtype=np.uint16)
    block = max(1, int(4e6 // max(len(scene), 1)))
    for start in range(0, len(ref), block):
        chunk = ref[start : start + block]
        xored = np.bitwise_xor(chunk[:, None, :], scene[None, :, :])
        out[start : start + block] = _POPCOUNT[xored].sum(axis=2, dtype=np.uint16)
    return out


def _as_descriptor_array(obj) -> np.ndarray:
    if isinstance(obj, FeatureSet):
        return obj.descriptors
    return np.asarray(obj, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)


def match(reference, scene, max_distance: int = 64) -> MatchSet:
    """Mutual nearest-neighbour Hamming matches within max_distance bits."""
    ref = _as_descriptor_array(reference)
    sc = _as_descriptor_array(scene)
    if len(ref) == 0 or len(sc) == 0:
        raise ValueError("descriptor sets must be non-empty")
    dist = _distance_matrix(ref, sc)
    nearest_scene = dist.argmin(axis=1)
    nearest_ref = dist.argmin(axis=0)
    pairs = []
    for i, j in enumerate(nearest_scene):
        d = int(dist[i, j])
        if d <= max_distance and nearest_ref[j] == i:
            pairs.append((i, int(j), d))
    pairs.sort(key=lambda p: (p[2], p[0]))
    return MatchSet(pairs)


def sticker_present(
    matches: MatchSet,
    detect_min: int = DEFAULT_DETECT_MIN,
    absent_max: int = DEFAULT_ABSENT_MAX,
) -> str:
    """Detection decision from the match count: detected / absent / uncertain."""
    n = len(matches)
    if n > detect_min:
        return DETECTED
    if n < absent_max:
        return ABSENT
    return UNCERTAIN


def calibrate_thresholds(
    present_counts, absent_counts
) -> tuple[int, int]:
    """(absent_max, detect_min) placed midway between the two observed count bands."""
    lo = max(absent_counts)
    hi = min(present_counts)
    if hi <= lo:
        raise ValueError(f"count distributions overlap: max absent {lo} >= min present {hi}")
    mid = (lo + hi) // 2
    return (max(lo + 1, min(mid, hi - 1)), mid)


ODSC_MAGIC = b"ODSC"


def save_descriptors(feats: FeatureSet, path) -> None:
    """Binary descriptor file: magic, count, then x/y/angle float32 + 32 bytes each."""
    with open(path, "wb") as fh:
        fh.write(ODSC_MAGIC)
        fh.write(np.uint32(len(feats)).tobytes())
        for kp, desc in feats:
            fh.write(np.array([kp.x, kp.y, kp.angle], dtype="<f4").tobytes())
            fh.write(desc.tobytes())


def load_descriptors(path) -> FeatureSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != ODSC_MAGIC:
        raise ValueError(f"{path}: not a descriptor set file")
    count = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    record = 12 + DESCRIPTOR_BYTES
    if len(raw) < 8 + count * record:
        raise ValueError(f"{path}: truncated descriptor set")
    kps = []
    descs = np.empty((count, DESCRIPTOR_BYTES), dtype=np.uint8)
    for i in range(count):
        off = 8 + i * record
        x, y, angle = np.frombuffer(raw[off : off + 12], dtype="<f4")
        descs[i] = np.frombuffer(raw[off + 12 : off + record], dtype=np.uint8)
        kps.append(Keypoint(float(x), float(y), 0.0, float(angle)))
    return FeatureSet(kps, descs)
