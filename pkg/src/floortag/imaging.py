"""Greyscale image container, PGM I/O, binarisation, contour tracing and quad corners."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage


class PgmError(ValueError):
    pass


class NotAQuadError(ValueError):
    pass


@dataclass(frozen=True)
class GreyImage:
    """8-bit luminance image, row-major, immutable after construction."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be 2D with positive dims, got shape {px.shape}")
        px = np.ascontiguousarray(px.astype(np.uint8, copy=True))
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> "GreyImage":
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ValueError(f"crop ({x0},{y0},{x1},{y1}) outside {self.width}x{self.height}")
        return GreyImage(self.pixels[y0:y1, x0:x1])

    @staticmethod
    def from_float(arr: np.ndarray) -> "GreyImage":
        return GreyImage(np.clip(np.rint(arr), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class Contour:
    """Closed 8-connected boundary loop, integer pixel coordinates (x, y)."""

    points: np.ndarray  # (n, 2) int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
            raise ValueError("contour needs at least 4 (x, y) points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def area(self) -> float:
        """Enclosed area by the shoelace formula (boundary pixel centres)."""
        x = self.points[:, 0]
        y = self.points[:, 1]
        return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


@dataclass(frozen=True)
class QuadCorners:
    """Four sub-pixel corners, counter-clockwise from the top-left-most one."""

    corners: np.ndarray  # (4, 2) float

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError("expected 4 corner points")
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)


@dataclass(frozen=True)
class FixedThreshold:
    threshold: float


@dataclass(frozen=True)
class MeanOffset:
    window: int
    offset: float = 10.0


def save_pgm(img: GreyImage, path) -> None:
    """Write a binary PGM (P5, maxval 255)."""
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
        fh.write(img.pixels.tobytes())


def load_pgm(path) -> GreyImage:
    """Read a binary PGM (P5, maxval 255); comment lines in the header are skipped."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise PgmError("not a P5 PGM file")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise PgmError("truncated header")
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise PgmError("truncated header")
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise PgmError(f"malformed header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise PgmError(f"unsupported maxval {maxval}")
    if width < 1 or height < 1:
        raise PgmError("non-positive dimensions")
    pos += 1  # single whitespace after maxval
    payload = raw[pos : pos + width * height]
    if len(payload) < width * height:
        raise PgmError("truncated payload")
    return GreyImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width))


def binarize(img: GreyImage, method: FixedThreshold | MeanOffset) -> GreyImage:
    """Threshold to {0, 255}: fixed level, or local mean minus an offset."""
    px = img.to_float()
    if isinstance(method, FixedThreshold):
        dark = px < method.threshold
    elif isinstance(method, MeanOffset):
        if method.window < 3 or method.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {method.window}")
        local_mean = ndimage.uniform_filter(px, size=method.window, mode="nearest")
        dark = px < local_mean - method.offset
    else:
        raise TypeError(f"unknown binarisation method {method!r}")
    return GreyImage(np.where(dark, 0, 255).astype(np.uint8))


# Moore neighbourhood, clockwise on screen starting west: (dy, dx).
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def _trace_boundary(mask: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbour boundary walk of one component from its topmost-leftmost pixel."""
    h, w = mask.shape
    sy, sx = start
    points = [(sx, sy)]
    cy, cx = sy, sx
    back = 0  # west of the topmost-leftmost pixel is guaranteed background
    first_state = None
    max_steps = 4 * int(mask.sum()) + 8
    for _ in range(max_steps):
        found = -1
        for k in range(8):
            d = (back + 1 + k) % 8
            dy, dx = _MOORE[d]
            ny, nx = cy + dy, cx + dx
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx]:
                found = d
                break
        if found < 0:
            return points  # isolated pixel
        state = (cy, cx, found)
        if first_state is None:
            first_state = state
        elif state == first_state:
            return points[:-1]
        cy, cx = cy + _MOORE[found][0], cx + _MOORE[found][1]
        points.append((cx, cy))
        # New backtrack: the last background cell scanned, seen from the new pixel.
        back = ((found // 2) * 2 + 6) % 8
    return points


def trace_contours(binary: GreyImage) -> list[Contour]:
    """Outer boundaries of dark (0) regions, largest shoelace area first."""
    px = binary.pixels
    values = np.unique(px)
    if not np.all(np.isin(values, (0, 255))):
        raise ValueError("input is not binary (values must be 0 or 255)")
    mask = px == 0
    if not mask.any():
        return []
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=np.int8))
    contours = []
    slices = ndimage.find_objects(labels)
    for idx in range(1, count + 1):
        sl = slices[idx - 1]
        sub = labels[sl] == idx
        ys, xs = np.nonzero(sub)
        order = np.lexsort((xs, ys))  # topmost, then leftmost
        y0, x0 = int(ys[order[0]]), int(xs[order[0]])
        pts = _trace_boundary(sub, (y0, x0))
        if len(pts) < 4:
            continue
        off = (sl[1].start, sl[0].start)
        contours.append(Contour(np.array(pts, dtype=np.int64) + off))
    contours.sort(key=lambda c: -c.area())
    return contours


_SUPPORT_DIRS = np.array(
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)], dtype=np.float64
)


def _initial_corner_indices(pts: np.ndarray) -> list[int]:
    """Indices of the 4 support points spanning the largest quad.

    Supports are taken every 45 degrees so that square and diamond orientations
    (where a single support family ties along an edge) both yield true corners.
    """
    scores = pts @ _SUPPORT_DIRS.T
    candidates = sorted(set(int(np.argmax(scores[:, k])) for k in range(8)))
    if len(candidates) < 4:
        raise NotAQuadError("not a quad")
    best, best_area = None, 0.0
    for combo in combinations(candidates, 4):
        p = pts[list(combo)]
        cen = p.mean(axis=0)
        order = np.argsort(np.arctan2(p[:, 1] - cen[1], p[:, 0] - cen[0]))
        q = p[order]
        area = abs(
            float(np.dot(q[:, 0], np.roll(q[:, 1], -1)) - np.dot(np.roll(q[:, 0], -1), q[:, 1]))
        ) / 2.0
        if area > best_area:
            best_area = area
            best = [combo[i] for i in order]
    if best is None or best_area < 2.0:
        raise NotAQuadError("not a quad")
    return best


def _edge_arc(n: int, i: int, j: int) -> np.ndarray:
    if j >= i:
        return np.arange(i, j + 1)
    return np.concatenate([np.arange(i, n), np.arange(0, j + 1)])


def _fit_line(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line: returns (centroid, unit direction)."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    return c, vt[0]


def _intersect(c1, d1, c2, d2) -> np.ndarray:
    a = np.column_stack([d1, -d2])
    if abs(np.linalg.det(a)) < 1e-12:
        raise NotAQuadError("not a quad")
    t = np.linalg.solve(a, c2 - c1)
    return c1 + t[0] * d1


def bilinear_sample(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = px.shape
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    return (
        px[y0, x0] * (1 - fx) * (1 - fy)
        + px[y0, x1] * fx * (1 - fy)
        + px[y1, x0] * (1 - fx) * fy
        + px[y1, x1] * fx * fy
    )


def _subpixel_edge(
    px: np.ndarray, p: np.ndarray, normal: np.ndarray, half_width: float = 3.0
) -> np.ndarray | None:
    """Edge position along the normal through p via the gradient centroid.

    The centroid of the luminance derivative is phase-independent to second
    order for a symmetric point spread, unlike mid-level crossing
    interpolation; for a motion-smeared edge it lands on the smear centre.
    half_width must span the whole transition (plateaus at both ends).
    """
    h, w = px.shape
    n_samples = max(17, 2 * int(4 * half_width) + 1)
    ts = np.linspace(-half_width, half_width, n_samples)
    xs = p[0] + ts * normal[0]
    ys = p[1] + ts * normal[1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
        return None
    vals = bilinear_sample(px, xs, ys)
    diffs = np.diff(vals)
    total = float(diffs.sum())
    swing = float(vals.max() - vals.min())
    if swing < 20 or abs(total) < 0.7 * swing:
        return None
    # Require a single transition: total variation close to the net change.
    if np.abs(diffs).sum() > 1.6 * abs(total):
        return None
    # The transition must sit inside the window (flat plateaus at both ends).
    tail = max(2, n_samples // 10)
    if abs(vals[tail] - vals[0]) > 0.15 * swing or abs(vals[-1] - vals[-1 - tail]) > 0.15 * swing:
        return None
    mids = (ts[:-1] + ts[1:]) / 2.0
    t = float(diffs @ mids) / total
    return p + t * normal


def extract_quad_corners(
    c: Contour, image: GreyImage | None = None, profile_half_width: float = 3.0
) -> QuadCorners:
    """Quad corners from a contour: support extreme points refined by edge-line intersection.

    With the source grey image supplied, edge points are re-localised at the
    luminance-gradient centroid along the edge normal before the line fit,
    which removes the half-pixel bias of binarised boundary centres. Widen
    profile_half_width so the whole transition fits when edges are smeared.
    """
    pts = c.points.astype(np.float64)
    idx = _initial_corner_indices(pts)
    corners = pts[idx]
    px = image.to_float() if image is not None else None

    n = len(pts)
    lines = []
    for k in range(4):
        i, j = idx[k], idx[(k + 1) % 4]
        a, b = corners[k], corners[(k + 1) % 4]
        chord = b - a
        chord_len = np.linalg.norm(chord)
        if chord_len < 1e-9:
            raise NotAQuadError("not a quad")
        chord_dir = chord / chord_len
        normal = np.array([-chord_dir[1], chord_dir[0]])
        # The loop runs either way between the two corners; keep the arc
        # whose points hug the chord.
        arc_a = _edge_arc(n, i, j)
        arc_b = _edge_arc(n, j, i)[::-1]

        def max_dev(arc):
            return np.abs((pts[arc] - a) @ normal).max() if len(arc) else np.inf

        arc = arc_a if max_dev(arc_a) <= max_dev(arc_b) else arc_b
        edge_pts = pts[arc]
        along = (edge_pts - a) @ chord_dir
        keep = (along > 0.15 * chord_len) & (along < 0.85 * chord_len)
        if keep.sum() >= 2:
            edge_pts = edge_pts[keep]
        if len(edge_pts) < 2:
            lines.append((a, chord_dir))
            continue
        cen, direction = _fit_line(edge_pts)
        if px is not None:
            nrm = np.array([-direction[1], direction[0]])
            refined_pts = [
                q
                for p in edge_pts
                if (q := _subpixel_edge(px, p, nrm, profile_half_width)) is not None
            ]
            if len(refined_pts) >= 2:
                cen, direction = _fit_line(np.asarray(refined_pts))
        lines.append((cen, direction))

    out = []
    for k in range(4):
        c_prev, d_prev = lines[(k - 1) % 4]
        c_k, d_k = lines[k]
        out.append(_intersect(c_prev, d_prev, c_k, d_k))
    out = np.asarray(out)

    # Counter-clockwise (positive shoelace) starting at the top-left-most corner.
    cross = float(np.dot(out[:, 0], np.roll(out[:, 1], -1)) - np.dot(np.roll(out[:, 0], -1), out[:, 1]))
    if cross < 0:
        out = out[::-1]
    s = out[:, 0] + out[:, 1]
    start = int(np.lexsort((out[:, 1], np.round(s, 6)))[0])
    out = np.roll(out, -start, axis=0)
    if len(np.unique(np.round(out, 6), axis=0)) < 4:
        raise NotAQuadError("not a quad")
    return QuadCorners(out)
