import numpy as np
import pytest

from floortag.imaging import (
    Contour,
    FixedThreshold,
    GreyImage,
    MeanOffset,
    NotAQuadError,
    PgmError,
    binarize,
    extract_quad_corners,
    load_pgm,
    save_pgm,
    trace_contours,
)


def test_grey_image_validates_shape():
    with pytest.raises(ValueError):
        GreyImage(np.zeros((0, 5), dtype=np.uint8))
    with pytest.raises(ValueError):
        GreyImage(np.zeros(10, dtype=np.uint8))


def test_grey_image_immutable():
    img = GreyImage(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1


def test_pgm_round_trip_small(tmp_path):
    img = GreyImage(np.array([[0, 255], [128, 7]], dtype=np.uint8))
    path = tmp_path / "t.pgm"
    save_pgm(img, path)
    back = load_pgm(path)
    assert back.width == 2 and back.height == 2
    assert np.array_equal(back.pixels, img.pixels)


def test_pgm_round_trip_frame(tmp_path):
    rng = np.random.default_rng(0)
    img = GreyImage(rng.integers(0, 256, size=(480, 640), dtype=np.uint8))
    path = tmp_path / "frame.pgm"
    save_pgm(img, path)
    save_pgm(load_pgm(path), tmp_path / "frame2.pgm")
    assert (tmp_path / "frame.pgm").read_bytes() == (tmp_path / "frame2.pgm").read_bytes()


def test_pgm_rejects_maxval_65535(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(PgmError, match="unsupported maxval"):
        load_pgm(path)


def test_pgm_rejects_truncated(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(PgmError, match="truncated"):
        load_pgm(path)


def test_pgm_rejects_bad_magic(tmp_path):
    path = tmp_path / "p2.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(PgmError):
        load_pgm(path)


def test_pgm_allows_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x05\x09")
    img = load_pgm(path)
    assert img.pixels.tolist() == [[5, 9]]


def test_binarize_fixed_extremes():
    zeros = GreyImage(np.zeros((5, 5), dtype=np.uint8))
    full = GreyImage(np.full((5, 5), 255, dtype=np.uint8))
    assert np.all(binarize(zeros, FixedThreshold(128)).pixels == 0)
    assert np.all(binarize(full, FixedThreshold(128)).pixels == 255)


def test_binarize_mean_offset_rejects_even_window():
    img = GreyImage(np.zeros((8, 8), dtype=np.uint8))
    with pytest.raises(ValueError):
        binarize(img, MeanOffset(window=4))


def test_binarize_mean_offset_dark_square():
    arr = np.full((60, 60), 200, dtype=np.uint8)
    arr[20:40, 20:40] = 10
    out = binarize(GreyImage(arr), MeanOffset(window=31, offset=10))
    assert np.all(out.pixels[25:35, 25:35] == 0)
    assert np.all(out.pixels[:10, :10] == 255)


def test_trace_contours_blank():
    img = GreyImage(np.full((20, 20), 255, dtype=np.uint8))
    assert trace_contours(img) == []


def test_trace_contours_rejects_grey():
    img = GreyImage(np.full((4, 4), 7, dtype=np.uint8))
    with pytest.raises(ValueError):
        trace_contours(img)


def test_trace_contours_square_area():
    arr = np.full((30, 30), 255, dtype=np.uint8)
    arr[5:15, 5:15] = 0
    contours = trace_contours(GreyImage(arr))
    assert len(contours) == 1
    c = contours[0]
    # Shoelace over boundary pixel centres of a 10x10 block is 9*9.
    assert c.area() == pytest.approx(81.0)
    assert abs(c.area() - 100.0) <= 20.0
    # Closed 8-connected loop.
    pts = c.points
    diffs = np.abs(pts - np.roll(pts, -1, axis=0))
    assert diffs.max() == 1


def test_trace_contours_largest_first():
    arr = np.full((60, 80), 255, dtype=np.uint8)
    arr[5:15, 5:15] = 0
    arr[20:50, 30:70] = 0
    contours = trace_contours(GreyImage(arr))
    assert len(contours) == 2
    assert contours[0].area() > contours[1].area()
    assert contours[0].points[:, 0].min() >= 29


def test_trace_contours_enclosed_pixels_dark():
    arr = np.full((40, 40), 255, dtype=np.uint8)
    arr[10:20, 12:25] = 0
    contours = trace_contours(GreyImage(arr))
    (c,) = contours
    xs = c.points[:, 0]
    ys = c.points[:, 1]
    interior = arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    assert np.all(interior == 0)


def test_trace_contours_ring_outer_only():
    arr = np.full((40, 40), 255, dtype=np.uint8)
    arr[10:30, 10:30] = 0
    arr[15:25, 15:25] = 255  # hole
    contours = trace_contours(GreyImage(arr))
    assert len(contours) == 1
    assert contours[0].area() == pytest.approx(19 * 19)


def test_quad_corners_axis_aligned_square():
    square = [(x, 0) for x in range(10)]
    square += [(9, y) for y in range(1, 10)]
    square += [(x, 9) for x in range(8, -1, -1)]
    square += [(0, y) for y in range(8, 0, -1)]
    qc = extract_quad_corners(Contour(np.array(square)))
    assert np.allclose(qc.corners, [[0, 0], [9, 0], [9, 9], [0, 9]], atol=1e-9)


def test_quad_corners_traced_square():
    arr = np.full((30, 30), 255, dtype=np.uint8)
    arr[5:15, 5:15] = 0
    (c,) = trace_contours(GreyImage(arr))
    qc = extract_quad_corners(c)
    assert np.allclose(qc.corners, [[5, 5], [14, 5], [14, 14], [5, 14]], atol=1e-9)


def test_quad_corners_diamond():
    # 45-degree square: axis extremes are the true corners.
    arr = np.full((41, 41), 255, dtype=np.uint8)
    cx = cy = 20
    r = 10
    for y in range(41):
        for x in range(41):
            if abs(x - cx) + abs(y - cy) <= r:
                arr[y, x] = 0
    (c,) = trace_contours(GreyImage(arr))
    qc = extract_quad_corners(c)
    got = {tuple(np.round(p, 1)) for p in qc.corners}
    want = {(20.0, 10.0), (30.0, 20.0), (20.0, 30.0), (10.0, 20.0)}
    assert got == want


def test_quad_corners_collinear_rejected():
    line = [(x, 5) for x in range(12)] + [(x, 5) for x in range(10, 0, -1)]
    with pytest.raises(NotAQuadError):
        extract_quad_corners(Contour(np.array(line)))


def test_quad_corners_rotation_equivariant():
    rng = np.random.default_rng(3)
    arr = np.full((50, 50), 255, dtype=np.uint8)
    arr[12:38, 8:30] = 0
    img = GreyImage(arr)
    (c,) = trace_contours(img)
    base = extract_quad_corners(c)

    rot = GreyImage(np.rot90(arr).copy())
    (c_rot,) = trace_contours(rot)
    rotated = extract_quad_corners(c_rot)
    # np.rot90 maps (x, y) -> (y, w-1-x); map recovered corners back.
    w = img.width
    mapped = np.column_stack([w - 1 - rotated.corners[:, 1], rotated.corners[:, 0]])
    got = {tuple(np.round(p, 6)) for p in mapped}
    want = {tuple(np.round(p, 6)) for p in base.corners}
    assert got == want
    assert rng is not None


def test_quad_corners_ccw_order_from_top_left():
    arr = np.full((40, 40), 255, dtype=np.uint8)
    arr[10:30, 5:35] = 0
    (c,) = trace_contours(GreyImage(arr))
    qc = extract_quad_corners(c)
    x = qc.corners[:, 0]
    y = qc.corners[:, 1]
    shoelace = np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
    assert shoelace > 0
    s = x + y
    assert np.argmin(s) == 0
