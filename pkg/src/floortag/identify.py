"""Decode-free sticker identification by reference feature matching.

Each candidate sticker is scored by the number of descriptor matches between
its reference and the scene; the winner must clear an absolute score floor and
a margin over the runner-up. References come from the off-line bank for sharp
scenes; when a view context (quad and motion-blur estimate) is available the
bank renders view-conditioned references so heavy blur does not wash out the
payload texture that separates candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import artwork
from .features import FeatureSet, detect_and_describe, load_descriptors, match, save_descriptors
from .datamatrix import rectify_quad
from .geometry import CameraIntrinsics, homography_dlt
from .imaging import GreyImage, QuadCorners, bilinear_sample
from .simulate import sticker_texture
from .warehouse import StickerSpec, WarehouseMap

DEFAULT_FEATURES_PER_REF = 500
DEFAULT_DETECTION_FEATURES = 1200
DEFAULT_SCENE_FEATURES = 10000
DEFAULT_ACCEPT_MIN = 80
DEFAULT_MARGIN_RATIO = 1.25
DEFAULT_MAX_DISTANCE = 48
REFERENCE_THRESHOLD = 8.0


@dataclass(frozen=True)
class ViewContext:
    """Where a sticker sits in the scene image, its orientation, and its smear."""

    quad: np.ndarray  # (4, 2) corner pixels in scene coordinates
    shape: tuple[int, int]  # scene (height, width)
    blur_length_px: float = 0.0
    blur_direction: tuple[float, float] = (1.0, 0.0)
    background: float = 120.0
    turns: int = 0  # artwork corner a[(j+turns)%4] sits at quad[j]


@dataclass(frozen=True)
class IdentificationResult:
    sticker_id: int | None
    score: int
    runner_up_score: int
    accepted: bool
    scores: dict[int, int] = field(default_factory=dict)


DEFAULT_REFERENCE_HEIGHTS = (0.75, 0.95, 1.2, 1.5)


def reference_sizes(intr: CameraIntrinsics, heights=DEFAULT_REFERENCE_HEIGHTS) -> tuple[int, ...]:
    """Reference raster sizes matching the projected sticker at expected distances."""
    return tuple(
        int(round(artwork.STICKER_SIZE_M * intr.focal_px / h)) for h in heights
    )


def _multi_size_features(
    cells: np.ndarray, sizes, features_total: int, threshold: float = REFERENCE_THRESHOLD
) -> FeatureSet:
    per_size = max(1, features_total // len(sizes))
    kps, descs = [], []
    for size in sizes:
        feats = detect_and_describe(
            artwork.render_cells(cells, size), max_features=per_size, threshold=threshold
        )
        kps.extend(feats.keypoints)
        descs.append(feats.descriptors)
    merged = np.vstack([d for d in descs if len(d)]) if descs else np.empty((0, 32), np.uint8)
    if len(kps) == 0:
        raise ValueError("reference artwork produced no features")
    return FeatureSet(kps, merged)


def build_reference(
    sticker: StickerSpec,
    features_per_ref: int = DEFAULT_FEATURES_PER_REF,
    sizes=(320, 240, 180),
) -> FeatureSet:
    """Off-line descriptor set for one sticker, spread over the expected scales."""
    return _multi_size_features(
        artwork.sticker_cells_from_payloads(list(sticker.payloads)), sizes, features_per_ref
    )


class ReferenceBank:
    """Off-line per-sticker references plus the generic detection reference."""

    def __init__(self, entries: dict[int, FeatureSet], detection: FeatureSet,
                 warehouse_map: WarehouseMap, sizes: tuple[int, ...]):
        self.entries = dict(entries)
        self.detection = detection
        self.warehouse_map = warehouse_map
        self.sizes = sizes

    @classmethod
    def build(
        cls,
        warehouse_map: WarehouseMap,
        intr: CameraIntrinsics,
        features_per_ref: int = DEFAULT_FEATURES_PER_REF,
        heights=DEFAULT_REFERENCE_HEIGHTS,
        detection_seed: int = 0,
        detection_features: int = DEFAULT_DETECTION_FEATURES,
    ) -> "ReferenceBank":
        sizes = reference_sizes(intr, heights)
        entries = {
            s.id: build_reference(s, features_per_ref, sizes) for s in warehouse_map
        }
        detection_cells = artwork.sticker_cells_from_payloads(
            list(artwork.detection_reference_payloads(detection_seed))
        )
        detection = _multi_size_features(detection_cells, sizes, detection_features)
        return cls(entries, detection, warehouse_map, sizes)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for sid, feats in self.entries.items():
            save_descriptors(feats, directory / f"ref_{sid}.odsc")

    @classmethod
    def load(
        cls, directory, warehouse_map: WarehouseMap, intr: CameraIntrinsics,
        detection_seed: int = 0,
        detection_features: int = DEFAULT_DETECTION_FEATURES,
    ) -> "ReferenceBank":
        directory = Path(directory)
        sizes = reference_sizes(intr)
        entries = {}
        for s in warehouse_map:
            path = directory / f"ref_{s.id}.odsc"
            if not path.exists():
                raise FileNotFoundError(f"missing reference file {path}")
            entries[s.id] = load_descriptors(path)
        detection_cells = artwork.sticker_cells_from_payloads(
            list(artwork.detection_reference_payloads(detection_seed))
        )
        detection = _multi_size_features(detection_cells, sizes, detection_features)
        return cls(entries, detection, warehouse_map, sizes)

    def reference(self, sticker_id: int, view: ViewContext | None = None,
                  features_per_ref: int = DEFAULT_FEATURES_PER_REF) -> FeatureSet:
        """Canonical reference, or one rendered into the given view context."""
        if view is None:
            return self.entries[sticker_id]
        synth = render_candidate_view(
            self.warehouse_map.get(sticker_id).payloads, view
        )
        return detect_and_describe(
            synth, max_features=features_per_ref, threshold=REFERENCE_THRESHOLD
        )


def render_candidate_view(payloads, view: ViewContext, samples: int = 9) -> GreyImage:
    """Draw a candidate sticker into the view quad with the view's motion smear."""
    tex = sticker_texture(tuple(payloads))
    s = tex.shape[0]
    dst = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])
    dst = dst[(np.arange(4) + view.turns) % 4]
    h = homography_dlt(dst, view.quad)
    hinv = np.linalg.inv(h)
    hh, ww = view.shape
    ys, xs = np.mgrid[0:hh, 0:ww]
    acc = np.zeros(hh * ww)
    scale = np.linalg.norm(view.quad[1] - view.quad[0]) / s
    half = view.blur_length_px / 2.0
    dx, dy = view.blur_direction
    offsets = np.linspace(-half, half, samples) if half > 0 else [0.0]
    for off in offsets:
        px_x = (xs + dx * off).ravel()
        px_y = (ys + dy * off).ravel()
        mapped = np.column_stack([px_x, px_y, np.ones(px_x.size)]) @ hinv.T
        u = mapped[:, 0] / mapped[:, 2]
        v = mapped[:, 1] / mapped[:, 2]
        sample = bilinear_sample(tex, np.clip(u, 0, s - 1), np.clip(v, 0, s - 1))
        dist = np.minimum.reduce([u, s - u, v, s - v]) * scale
        alpha = np.clip(dist + 0.5, 0.0, 1.0)
        acc += view.background + alpha * (sample - view.background)
    out = ndimage.gaussian_filter((acc / len(offsets)).reshape(hh, ww), 0.6)
    return GreyImage.from_float(out)


def estimate_blur_direction(roi: GreyImage) -> tuple[float, float]:
    """Motion axis from the structure tensor: the direction of least gradient energy."""
    px = roi.to_float()
    gx = ndimage.sobel(px, axis=1, mode="nearest")
    gy = ndimage.sobel(px, axis=0, mode="nearest")
    j = np.array(
        [[(gx * gx).sum(), (gx * gy).sum()], [(gx * gy).sum(), (gy * gy).sum()]]
    )
    _, vecs = np.linalg.eigh(j)
    d = vecs[:, 0]
    return float(d[0]), float(d[1])


def contract_quad(quad: np.ndarray, direction, amount: float) -> np.ndarray:
    """Pull the quad in by `amount` on each side along the given axis.

    A one-sided motion smear makes the traced outline longer by the blur
    length along the motion axis; contracting by half the length per side
    restores the extent a centred smear of the same length would produce.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    centre = quad.mean(axis=0)
    proj = (quad - centre) @ d
    return quad - np.sign(proj)[:, None] * d * amount


def estimate_view(
    roi: GreyImage,
    scene_feats: FeatureSet,
    quad: np.ndarray,
    probe_payloads,
    background: float | None = None,
    lengths=(0.0, 5.0, 10.0, 15.0, 20.0),
    max_distance: int = DEFAULT_MAX_DISTANCE,
) -> ViewContext:
    """Fit the motion-smear length (and residual alignment) to the scene.

    One probe candidate is drawn into the quad at each trial length; the
    length whose rendering matches the scene best wins, because a matched
    smear helps structural matches for any candidate. The median displacement
    of the winning matches then corrects the quad position.
    """
    shape = (roi.height, roi.width)
    direction = estimate_blur_direction(roi)
    if background is None:
        edge_px = np.concatenate(
            [roi.pixels[0, :], roi.pixels[-1, :], roi.pixels[:, 0], roi.pixels[:, -1]]
        )
        background = float(np.median(edge_px))
    # 4-fold artwork orientation from coarse correlation; payload content is a
    # second-order effect there, so the probe candidate decides for everyone.
    rectified = rectify_quad(roi, QuadCorners(quad), 240)
    turns = artwork.best_artwork_rotation(
        rectified, artwork.sticker_cells_from_payloads(list(probe_payloads))
    )
    best = None
    for length in lengths:
        trial_quad = contract_quad(quad, direction, length / 2.0) if length > 0 else quad
        view = ViewContext(trial_quad, shape, length, direction, background, turns)
        synth = render_candidate_view(probe_payloads, view)
        ref = detect_and_describe(synth, max_features=400, threshold=REFERENCE_THRESHOLD)
        if len(ref) == 0:
            continue
        pairs = match(ref, scene_feats, max_distance).pairs
        if best is None or len(pairs) > best[0]:
            best = (len(pairs), view, ref, pairs)
    if best is None:
        return ViewContext(quad, shape, 0.0, direction, background, turns)
    _, view, ref, pairs = best
    if len(pairs) >= 8:
        ref_pos = ref.positions
        scene_pos = scene_feats.positions
        disp = np.median([scene_pos[j] - ref_pos[i] for i, j, _ in pairs], axis=0)
        if np.linalg.norm(disp) > 1.5:
            view = ViewContext(
                view.quad + disp, shape, view.blur_length_px, direction, background, turns
            )
    return view


def identify_sticker(
    scene: GreyImage | FeatureSet,
    bank: ReferenceBank,
    candidates,
    scene_features: int = DEFAULT_SCENE_FEATURES,
    max_distance: int = DEFAULT_MAX_DISTANCE,
    accept_min: int = DEFAULT_ACCEPT_MIN,
    margin_ratio: float = DEFAULT_MARGIN_RATIO,
    view: ViewContext | None = None,
    detect_threshold: float = REFERENCE_THRESHOLD,
) -> IdentificationResult:
    """Best-matching candidate by reference match count.

    Accepted only when the score clears accept_min and the margin over the
    runner-up; otherwise the result is carried as ambiguous with all scores.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list must not be empty")
    if isinstance(scene, GreyImage):
        feats = detect_and_describe(
            scene, max_features=scene_features, threshold=detect_threshold
        )
    else:
        feats = scene
    scores: dict[int, int] = {}
    for sid in sorted(set(int(c) for c in candidates)):
        if len(feats) == 0:
            scores[sid] = 0
            continue
        ref = bank.reference(sid, view)
        scores[sid] = len(match(ref, feats, max_distance)) if len(ref) else 0
    best_id = min(scores, key=lambda sid: (-scores[sid], sid))
    best = scores[best_id]
    rivals = [v for sid, v in scores.items() if sid != best_id]
    runner_up = max(rivals) if rivals else 0
    accepted = best > accept_min and best >= margin_ratio * max(runner_up, 1)
    return IdentificationResult(
        sticker_id=best_id if accepted else None,
        score=best,
        runner_up_score=runner_up,
        accepted=accepted,
        scores=scores,
    )
