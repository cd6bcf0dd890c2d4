import numpy as np
import pytest

from floortag.geometry import CameraIntrinsics, downward_camera_pose, project_many
from floortag.simulate import (
    GroundTruth,
    RenderConfig,
    RenderGeometryError,
    apply_motion_blur,
    blur_length_px,
    exposure_for_blur_px,
    load_truth,
    render,
    save_truth,
    single_sticker_map,
)
from floortag.warehouse import StickerSpec, WarehouseMap, generate_grid_map

INTR = CameraIntrinsics.reference_camera(binning=4)  # 648x486, quick for tests


def test_render_empty_map_is_background_noise():
    empty = WarehouseMap([])
    img, truth = render(empty, INTR, downward_camera_pose((0, 0, 1.0)),
                        RenderConfig(seed=1, noise_sigma=1.5))
    assert truth.visible == []
    px = img.to_float()
    assert abs(px.mean() - 120.0) < 1.0
    assert 0.5 < px.std() < 3.0


def test_render_sticker_centred():
    m = single_sticker_map()
    pose = downward_camera_pose((0.0, 0.0, 1.0))
    img, truth = render(m, INTR, pose, RenderConfig(seed=2))
    assert truth.visible_ids == [1]
    # Centre of the artwork is quiet paper; just outside the sticker is floor.
    cx, cy = INTR.width // 2, INTR.height // 2
    assert img.pixels[cy, cx] > 200
    span = 0.05 * INTR.focal_px  # half sticker in pixels at 1 m
    assert abs(float(img.pixels[cy, int(cx + span + 8)]) - 120.0) < 10


def test_truth_corners_match_projection_exactly():
    m = single_sticker_map(StickerSpec(4, 0.2, -0.1, 0.7))
    pose = downward_camera_pose((0.25, -0.2, 1.2), tilt=0.2, spin=1.0)
    _, truth = render(m, INTR, pose, RenderConfig(seed=3))
    expected = project_many(INTR, pose, m.get(4).corners_world())
    assert np.abs(truth.corners_of(4) - expected).max() < 1e-9


def test_render_rejects_camera_below_ground():
    m = single_sticker_map()
    with pytest.raises(RenderGeometryError):
        render(m, INTR, downward_camera_pose((0, 0, -1.0)), RenderConfig(seed=1))


def test_render_rejects_skyward_camera():
    m = single_sticker_map()
    pose = downward_camera_pose((0, 0, 1.0), tilt=np.pi)  # flipped upward
    with pytest.raises(RenderGeometryError):
        render(m, INTR, pose, RenderConfig(seed=1))


def test_render_deterministic_given_seed():
    m = single_sticker_map()
    pose = downward_camera_pose((0.02, 0.01, 1.0))
    a, _ = render(m, INTR, pose, RenderConfig(seed=9))
    b, _ = render(m, INTR, pose, RenderConfig(seed=9))
    assert np.array_equal(a.pixels, b.pixels)


def test_illumination_scales_mean_linearly():
    m = single_sticker_map()
    pose = downward_camera_pose((0, 0, 1.0))
    base, _ = render(m, INTR, pose, RenderConfig(seed=4, noise_sigma=0.0, illumination=0.5))
    full, _ = render(m, INTR, pose, RenderConfig(seed=4, noise_sigma=0.0, illumination=1.0))
    ratio = base.to_float().mean() / full.to_float().mean()
    assert abs(ratio - 0.5) < 0.01


def test_visibility_excludes_distant_stickers():
    m = generate_grid_map(3, 3, 1.5)  # ids 1..9, spread over 3 m
    pose = downward_camera_pose((0.0, 0.0, 1.0))
    _, truth = render(m, INTR, pose, RenderConfig(seed=5))
    assert truth.visible_ids == [1]


def test_zero_velocity_blur_equals_sharp():
    m = single_sticker_map()
    pose = downward_camera_pose((0.01, 0.0, 1.0))
    sharp, _ = render(m, INTR, pose, RenderConfig(seed=6, noise_sigma=0.0))
    blurred, _ = render(
        m, INTR, pose,
        RenderConfig(seed=6, noise_sigma=0.0, exposure_reciprocal=500.0, velocity=0.0),
    )
    assert np.array_equal(sharp.pixels, blurred.pixels)


def test_motion_blur_smears_edges():
    m = single_sticker_map()
    pose = downward_camera_pose((0.0, 0.0, 1.0))
    n = exposure_for_blur_px(INTR, 1.0, 1.0, 12.0)
    sharp = apply_motion_blur(m, INTR, pose, RenderConfig(noise_sigma=0.0))
    blurred = apply_motion_blur(
        m, INTR, pose,
        RenderConfig(noise_sigma=0.0, exposure_reciprocal=n, velocity=1.0, heading=0.0),
    )
    def grad_energy(img):
        px = img.to_float()
        return float(np.abs(np.diff(px, axis=1)).mean())
    assert grad_energy(blurred) < 0.6 * grad_energy(sharp)


def test_blur_length_round_trip():
    n = exposure_for_blur_px(INTR, 1.3, 0.8, 10.0)
    assert blur_length_px(INTR, 1.3, 0.8, n) == pytest.approx(10.0)


def test_truth_sidecar_round_trip(tmp_path):
    m = single_sticker_map(StickerSpec(3, 0.1, 0.2, 0.3))
    pose = downward_camera_pose((0.1, 0.1, 1.0))
    _, truth = render(m, INTR, pose, RenderConfig(seed=7))
    path = tmp_path / "frame_0001.truth"
    save_truth(truth, pose, path)
    camera, loaded = load_truth(path)
    assert np.allclose(camera, [0.1, 0.1, 1.0])
    assert loaded.visible_ids == truth.visible_ids
    assert np.allclose(loaded.corners_of(3), truth.corners_of(3))


def test_ground_truth_lookup_missing():
    with pytest.raises(KeyError):
        GroundTruth([]).corners_of(5)
