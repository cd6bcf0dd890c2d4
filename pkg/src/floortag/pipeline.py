"""Frame-level orchestration: detect, cluster, decode, pose, with identify fallback.

A frame is matched against the generic detection reference; matched keypoints
are clustered into per-sticker ROIs; each ROI is decoded and, when decoding
fails, identified against candidate references pruned around the last known
position. Any successful identification feeds the planar pose chain.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import artwork, clustering, datamatrix, features, identify, warehouse
from .geometry import (
    CameraIntrinsics,
    Pose,
    camera_world_position,
    homography_dlt,
    pose_from_homography,
    refine_pose,
)
from .identify import ReferenceBank, estimate_view
from .imaging import (
    GreyImage,
    MeanOffset,
    NotAQuadError,
    QuadCorners,
    binarize,
    extract_quad_corners,
    trace_contours,
)

OUTCOME_LOCALISED = "localised"
OUTCOME_DETECTED_UNREAD = "detected_unread"
OUTCOME_NO_STICKER = "no_sticker"

METHOD_DECODED = "decoded"
METHOD_IDENTIFIED = "identified"


@dataclass(frozen=True)
class PipelineConfig:
    detect_features: int = 2500
    detect_threshold: float = 8.0
    detect_max_distance: int = 64
    # Calibrated on the synthetic camera; features.sticker_present keeps its
    # own stock 50/15 defaults.
    detect_min: int = 35
    absent_max: int = features.DEFAULT_ABSENT_MAX
    merge_dist: float | None = None  # default derives from the intrinsics
    # Wider than the clustering default so rotated quad corners survive the crop.
    roi_margin: float = 0.4
    # Minimum ROI side, as a multiple of the projected sticker size at 1 m.
    roi_min_size_factor: float = 1.35
    min_contour_area: float = 400.0
    decode_mode: str = "rectified"  # or "direct"
    candidate_radius_m: float = 3.0
    state_expiry_s: float = 5.0
    identify_scene_features: int = identify.DEFAULT_SCENE_FEATURES
    identify_threshold: float = identify.REFERENCE_THRESHOLD
    identify_max_distance: int = identify.DEFAULT_MAX_DISTANCE
    accept_min: int = identify.DEFAULT_ACCEPT_MIN
    margin_ratio: float = identify.DEFAULT_MARGIN_RATIO
    max_reprojection_rms: float = 3.0
    # Planar offset from the camera to the operator's feet on the floor.
    operator_offset_m: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class TrackerState:
    position: tuple[float, float] | None = None
    timestamp: float | None = None

    def valid_position(self, now: float, expiry_s: float):
        if self.position is None or self.timestamp is None:
            return None
        if now - self.timestamp > expiry_s:
            return None
        return self.position


@dataclass(frozen=True)
class LocalisationResult:
    frame_id: int
    outcome: str
    position: np.ndarray | None = None  # camera centre, world metres
    operator_position: np.ndarray | None = None  # operator's feet on the floor
    pose: Pose | None = None
    sticker_id: int | None = None
    method: str | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "frame": self.frame_id,
            "outcome": self.outcome,
            "position": None if self.position is None else [float(v) for v in self.position],
            "operator_position": None
            if self.operator_position is None
            else [float(v) for v in self.operator_position],
            "pose": None
            if self.pose is None
            else {
                "rotation": [[float(v) for v in row] for row in self.pose.rotation],
                "translation": [float(v) for v in self.pose.translation],
            },
            "sticker_id": self.sticker_id,
            "method": self.method,
            "timings_ms": {k: round(v, 3) for k, v in self.timings_ms.items()},
        }


@dataclass
class _RoiContext:
    roi: clustering.Roi
    crop: GreyImage
    corners: QuadCorners | None  # crop-local


class _StageClock:
    def __init__(self):
        self.timings: dict[str, float] = {}
        self._last = time.perf_counter()

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings[stage] = self.timings.get(stage, 0.0) + (now - self._last) * 1000.0
        self._last = now


def _extract_corners(crop: GreyImage, min_area: float) -> QuadCorners | None:
    binary = binarize(crop, MeanOffset(31, 10))
    for contour in trace_contours(binary)[:3]:
        if contour.area() < min_area:
            break
        try:
            return extract_quad_corners(contour, crop)
        except NotAQuadError:
            continue
    return None


def _pose_from_quad(
    intr: CameraIntrinsics,
    sticker: warehouse.StickerSpec,
    frame_corners: np.ndarray,
    turns: int,
    max_rms: float,
) -> tuple[Pose, np.ndarray] | None:
    world = sticker.corners_world()
    ordered = np.array([world[(j + turns) % 4] for j in range(4)])
    try:
        h = homography_dlt(ordered[:, :2], frame_corners)
        pose0 = pose_from_homography(intr, h)
    except ValueError:
        return None
    result = refine_pose(intr, pose0, ordered, frame_corners)
    if result.rms > max_rms:
        return None
    position = camera_world_position(result.pose)
    if not (0.05 < position[2] < 20.0):
        return None
    return result.pose, position


def process_frame(
    img: GreyImage,
    warehouse_map: warehouse.WarehouseMap,
    intr: CameraIntrinsics,
    bank: ReferenceBank,
    state: TrackerState = TrackerState(),
    config: PipelineConfig | None = None,
    frame_id: int = 0,
    timestamp: float | None = None,
) -> tuple[LocalisationResult, TrackerState]:
    """Run the full localisation chain on one frame and update the tracker state."""
    cfg = config or PipelineConfig()
    now = time.monotonic() if timestamp is None else timestamp
    clock = _StageClock()

    feats = features.detect_and_describe(
        img, max_features=cfg.detect_features, threshold=cfg.detect_threshold
    )
    clock.lap("detect")

    if len(feats) == 0:
        clock.lap("match")
        return LocalisationResult(frame_id, OUTCOME_NO_STICKER, timings_ms=clock.timings), state
    matches = features.match(bank.detection, feats, cfg.detect_max_distance)
    decision = features.sticker_present(matches, cfg.detect_min, cfg.absent_max)
    clock.lap("match")
    if decision != features.DETECTED:
        return LocalisationResult(frame_id, OUTCOME_NO_STICKER, timings_ms=clock.timings), state

    points = feats.positions[matches.scene_indices()]
    merge_dist = cfg.merge_dist if cfg.merge_dist is not None else clustering.default_merge_dist(intr)
    cluster_set = clustering.cluster_keypoints(points, merge_dist=merge_dist)
    min_roi = cfg.roi_min_size_factor * 0.1 * intr.focal_px
    rois = []
    for cluster in clustering.clusters_by_size(cluster_set):
        try:
            roi = clustering.roi_from_cluster(
                cluster, points, intr.width, intr.height, cfg.roi_margin,
                min_size=min_roi,
            )
        except ValueError:
            continue
        rois.append(roi)
    clock.lap("cluster")

    contexts: list[_RoiContext] = []
    for roi in rois:
        crop = img.crop(roi.x0, roi.y0, roi.x1 + 1, roi.y1 + 1)
        if crop.width < 40 or crop.height < 40:
            continue
        corners = _extract_corners(crop, cfg.min_contour_area)
        contexts.append(_RoiContext(roi, crop, corners))

    # Decode pass: every ROI is tried before any identification fallback fires.
    sticker = None
    chosen: _RoiContext | None = None
    method = None
    for ctx in contexts:
        if ctx.corners is None:
            continue
        if cfg.decode_mode == "rectified":
            reads = datamatrix.decode_roi_detail(ctx.crop, ctx.corners)
        else:
            reads = datamatrix.decode_roi_detail(ctx.crop, None)
        for read in reads:
            try:
                sticker = warehouse.lookup_by_payload(warehouse_map, read.payload)
            except warehouse.UnknownPayloadError:
                continue
            chosen = ctx
            method = METHOD_DECODED
            break
        if sticker is not None:
            break
    clock.lap("decode")

    if sticker is None:
        last = state.valid_position(now, cfg.state_expiry_s)
        candidates = warehouse.candidate_stickers(
            warehouse_map, last, cfg.candidate_radius_m
        )
        for ctx in contexts:
            if ctx.corners is None or not candidates:
                continue
            roi_feats = features.detect_and_describe(
                ctx.crop,
                max_features=cfg.identify_scene_features,
                threshold=cfg.identify_threshold,
            )
            if len(roi_feats) == 0:
                continue
            view = estimate_view(
                ctx.crop,
                roi_feats,
                ctx.corners.corners,
                warehouse_map.get(candidates[0]).payloads,
            )
            result = identify.identify_sticker(
                roi_feats,
                bank,
                candidates,
                max_distance=cfg.identify_max_distance,
                accept_min=cfg.accept_min,
                margin_ratio=cfg.margin_ratio,
                view=view,
            )
            if result.accepted:
                sticker = warehouse_map.get(result.sticker_id)
                chosen = ctx
                method = METHOD_IDENTIFIED
                break
    clock.lap("identify")

    if sticker is None or chosen is None or chosen.corners is None:
        return (
            LocalisationResult(frame_id, OUTCOME_DETECTED_UNREAD, timings_ms=clock.timings),
            state,
        )

    flat = datamatrix.rectify_quad(chosen.crop, chosen.corners, datamatrix.RECTIFIED_STICKER_PX)
    turns = artwork.best_artwork_rotation(
        flat, artwork.sticker_cells_from_payloads(list(sticker.payloads))
    )
    frame_corners = chosen.corners.corners + (chosen.roi.x0, chosen.roi.y0)
    solved = _pose_from_quad(intr, sticker, frame_corners, turns, cfg.max_reprojection_rms)
    clock.lap("pose")
    if solved is None:
        return (
            LocalisationResult(
                frame_id, OUTCOME_DETECTED_UNREAD, sticker_id=sticker.id,
                method=method, timings_ms=clock.timings,
            ),
            state,
        )
    pose, position = solved
    operator = np.array(
        [position[0] + cfg.operator_offset_m[0], position[1] + cfg.operator_offset_m[1]]
    )
    new_state = TrackerState((float(position[0]), float(position[1])), now)
    return (
        LocalisationResult(
            frame_id,
            OUTCOME_LOCALISED,
            position=position,
            operator_position=operator,
            pose=pose,
            sticker_id=sticker.id,
            method=method,
            timings_ms=clock.timings,
        ),
        new_state,
    )


def process_sequence(
    frames,
    warehouse_map: warehouse.WarehouseMap,
    intr: CameraIntrinsics,
    bank: ReferenceBank,
    config: PipelineConfig | None = None,
    fps: float = 10.0,
    state: TrackerState = TrackerState(),
):
    """Process time-ordered frames, threading the tracker state; yields one result each.

    Frame-level failures are reported on stderr and mapped to no_sticker so the
    stream continues.
    """
    for index, img in enumerate(frames):
        timestamp = index / fps
        try:
            result, state = process_frame(
                img, warehouse_map, intr, bank, state,
                config=config, frame_id=index, timestamp=timestamp,
            )
        except Exception as exc:  # pragma: no cover - defensive path
            print(f"frame {index}: {exc!r}", file=sys.stderr)
            result = LocalisationResult(index, OUTCOME_NO_STICKER)
        yield result
