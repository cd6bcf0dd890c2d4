"""Ground sticker artwork: a 2x2 grid of 10x10 Data Matrix symbols in a black border.

The sticker is a 30x30 cell design on a 10 cm square: a 2-cell border, 2-cell
quiet gaps and four symbols. Each symbol encodes the sticker id and its
quadrant as six digits, so reading any one symbol identifies the sticker.

Quadrants are numbered row-major in artwork view: 0 top-left, 1 top-right,
2 bottom-left, 3 bottom-right. Artwork corners are indexed counter-clockwise
(in image-axis terms) from the top-left: a0 TL, a1 TR, a2 BR, a3 BL, matching
the QuadCorners ordering so that image-to-world correspondence is a pure
cyclic shift.
"""

from __future__ import annotations

import numpy as np

from .datamatrix import Codewords, bitmap_from_codewords, encode_text, rs_encode
from .imaging import GreyImage

STICKER_SIZE_M = 0.1
CELLS = 30
BORDER_CELLS = 2
SYMBOL_CELLS = 10
_SYMBOL_OFFSETS = (4, 16)  # cell origin of each symbol row/column band

INK = 0
PAPER = 255


def payload_text(sticker_id: int, quadrant: int) -> str:
    """Six-digit payload: four id digits then two quadrant digits."""
    if not (0 <= sticker_id <= 9999):
        raise ValueError("sticker id must be in 0..9999")
    if not (0 <= quadrant <= 3):
        raise ValueError("quadrant must be in 0..3")
    return f"{sticker_id:04d}{quadrant:02d}"


def parse_payload(text: str) -> tuple[int, int]:
    if len(text) != 6 or not text.isdigit():
        raise ValueError(f"not a sticker payload: {text!r}")
    sticker_id = int(text[:4])
    quadrant = int(text[4:])
    if quadrant > 3:
        raise ValueError(f"not a sticker payload: {text!r}")
    return sticker_id, quadrant


def sticker_payloads(sticker_id: int) -> tuple[str, str, str, str]:
    return tuple(payload_text(sticker_id, q) for q in range(4))  # type: ignore[return-value]


def sticker_codewords(sticker_id: int) -> tuple[Codewords, ...]:
    return tuple(rs_encode(encode_text(p)) for p in sticker_payloads(sticker_id))


def sticker_cells_from_payloads(payload_texts) -> np.ndarray:
    """30x30 cell grid (True = ink) for four explicit payload strings."""
    if len(payload_texts) != 4:
        raise ValueError("a sticker carries exactly 4 symbols")
    cells = np.zeros((CELLS, CELLS), dtype=bool)
    b = BORDER_CELLS
    cells[:b, :] = True
    cells[-b:, :] = True
    cells[:, :b] = True
    cells[:, -b:] = True
    for q, text in enumerate(payload_texts):
        bitmap = bitmap_from_codewords(rs_encode(encode_text(text)))
        r0 = _SYMBOL_OFFSETS[q // 2]
        c0 = _SYMBOL_OFFSETS[q % 2]
        cells[r0 : r0 + SYMBOL_CELLS, c0 : c0 + SYMBOL_CELLS] = bitmap.modules
    return cells


def sticker_cells(sticker_id: int) -> np.ndarray:
    return sticker_cells_from_payloads(sticker_payloads(sticker_id))


def detection_reference_payloads(seed: int = 0) -> tuple[str, str, str, str]:
    """Random-content payloads for the generic detection reference sticker."""
    rng = np.random.default_rng(seed)
    return tuple("".join(str(d) for d in rng.integers(0, 10, size=6)) for _ in range(4))  # type: ignore[return-value]


def render_cells(cells: np.ndarray, size_px: int, supersample: int = 3) -> GreyImage:
    """Rasterise a cell grid onto size_px x size_px, box-averaged for soft edges."""
    if size_px < CELLS:
        raise ValueError(f"raster must be at least {CELLS} px")
    n = size_px * supersample
    coords = (np.arange(n) + 0.5) / n * CELLS
    idx = np.minimum(coords.astype(int), CELLS - 1)
    big = np.where(cells[np.ix_(idx, idx)], float(INK), float(PAPER))
    if supersample > 1:
        big = big.reshape(size_px, supersample, size_px, supersample).mean(axis=(1, 3))
    return GreyImage.from_float(big)


def render_sticker(sticker_id: int, size_px: int, supersample: int = 3) -> GreyImage:
    return render_cells(sticker_cells(sticker_id), size_px, supersample)


def corners_local(size_m: float = STICKER_SIZE_M) -> np.ndarray:
    """Artwork corners a0..a3 in the sticker frame (x right, y up, metres)."""
    h = size_m / 2.0
    return np.array([[-h, h], [h, h], [h, -h], [-h, -h]])


def corners_world(x: float, y: float, yaw: float, size_m: float = STICKER_SIZE_M) -> np.ndarray:
    """Artwork corners a0..a3 on the ground plane, (4, 3) world coordinates."""
    local = corners_local(size_m)
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    xy = local @ rot.T + (x, y)
    return np.column_stack([xy, np.zeros(4)])


def local_to_artwork_uv(sx: np.ndarray, sy: np.ndarray, size_m: float = STICKER_SIZE_M):
    """Sticker-frame metres to artwork unit coordinates (u right, v down)."""
    u = sx / size_m + 0.5
    v = 0.5 - sy / size_m
    return u, v


def quadrant_slot(cx: float, cy: float, size: float) -> int:
    """Row-major 2x2 slot of a point in a square raster of the given side."""
    return (2 if cy > size / 2 else 0) + (1 if cx > size / 2 else 0)


def rotate_slot(slot: int, turns_ccw: int) -> int:
    """Where a 2x2 quadrant lands after rotating the artwork CCW by quarter turns."""
    r, c = divmod(slot, 2)
    for _ in range(turns_ccw % 4):
        r, c = 1 - c, r
    return 2 * r + c


def artwork_turns_from_decode(rotation: int) -> int:
    """CCW quarter turns of the artwork in a rectified view, from the symbol rotation."""
    return (4 - rotation) % 4


def best_artwork_rotation(rectified: GreyImage, cells: np.ndarray) -> int:
    """CCW quarter turns m maximising correlation of the view with rot90(artwork, m).

    Works on a coarse grid so it stays usable under heavy motion blur.
    """
    coarse = 15
    px = rectified.to_float()
    h, w = px.shape
    ys = np.linspace(0, h, coarse + 1)
    xs = np.linspace(0, w, coarse + 1)
    obs = np.zeros((coarse, coarse))
    for i in range(coarse):
        for j in range(coarse):
            obs[i, j] = px[int(ys[i]) : max(int(ys[i + 1]), int(ys[i]) + 1),
                           int(xs[j]) : max(int(xs[j + 1]), int(xs[j]) + 1)].mean()
    obs = obs - obs.mean()
    denom = np.linalg.norm(obs)
    if denom < 1e-9:
        return 0
    ref_full = np.where(cells, float(INK), float(PAPER))
    block = CELLS // coarse or 1
    scores = []
    for m in range(4):
        ref = np.rot90(ref_full, m)
        small = ref[: coarse * block, : coarse * block]
        small = small.reshape(coarse, block, coarse, block).mean(axis=(1, 3))
        small = small - small.mean()
        nref = np.linalg.norm(small)
        scores.append(float((obs * small).sum() / (denom * nref)) if nref > 1e-9 else -1.0)
    return int(np.argmax(scores))
