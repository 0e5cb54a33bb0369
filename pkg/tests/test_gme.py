"""Tests for image ingestion and the GME stack."""

import numpy as np
import pytest
from PIL import Image

from cfkit.exceptions import ConfigurationError, IngestionError
from cfkit.gme import (
    GME_MEAN,
    GME_STD,
    MAGNITUDE_SCALE,
    ImageU8,
    build_gme_stack,
    colorize,
    edge_map,
    load_image,
    otsu_threshold,
    palette,
    save_ppm,
    sobel_magnitude,
    to_gray,
)


def _random_image(h=12, w=10, seed=0):
    return ImageU8.from_array(np.random.default_rng(seed).integers(0, 256, size=(h, w, 3)))


def _checkerboard():
    board = ((np.arange(8)[:, None] // 2 + np.arange(8)[None, :] // 2) % 2) * 255
    return ImageU8.from_array(np.repeat(board[:, :, None], 3, axis=2))


def test_image_rejects_wrong_shape():
    """Test ImageU8 validates the pixel array."""
    with pytest.raises(ConfigurationError):
        ImageU8(width=2, height=2, data=np.zeros((2, 3, 3), dtype=np.uint8))


def test_ppm_round_trip(tmp_path):
    """Test save_ppm then load_image returns the same pixels."""
    img = _random_image()
    path = tmp_path / "img.ppm"
    save_ppm(img, path)
    loaded = load_image(path)
    assert (loaded.width, loaded.height) == (10, 12)
    np.testing.assert_array_equal(loaded.data, img.data)


def test_ppm_header_comments(tmp_path):
    """Test comments between header fields are skipped."""
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n2 1\n# depth\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    img = load_image(path)
    np.testing.assert_array_equal(img.data.ravel(), [1, 2, 3, 4, 5, 6])


def test_ppm_truncated_payload_reports_offset(tmp_path):
    """Test a short payload names the byte offset where data ran out."""
    path = tmp_path / "short.ppm"
    header = b"P6\n2 2\n255\n"
    path.write_bytes(header + bytes(5))
    with pytest.raises(IngestionError) as exc_info:
        load_image(path)
    assert exc_info.value.offset == len(header) + 5
    assert "truncated" in str(exc_info.value)


def test_ppm_rejects_16_bit(tmp_path):
    """Test maxval other than 255 is refused."""
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(IngestionError, match="maxval"):
        load_image(path)


def test_ascii_ppm_rejected(tmp_path):
    """Test P3 files are refused."""
    path = tmp_path / "ascii.ppm"
    path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(IngestionError):
        load_image(path)


def test_png_rgba_drops_alpha(tmp_path):
    """Test RGBA PNG files decode to RGB."""
    rgba = np.random.default_rng(1).integers(0, 256, size=(4, 5, 4)).astype(np.uint8)
    path = tmp_path / "a.png"
    Image.fromarray(rgba).save(path)
    img = load_image(path)
    np.testing.assert_array_equal(img.data, rgba[:, :, :3])


def test_png_grayscale_rejected(tmp_path):
    """Test PNG colour types other than RGB/RGBA are refused at the IHDR byte."""
    path = tmp_path / "g.png"
    Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(path)
    with pytest.raises(IngestionError) as exc_info:
        load_image(path)
    assert exc_info.value.offset == 25


def test_unknown_format_and_missing_file(tmp_path):
    """Test foreign bytes and missing paths raise IngestionError."""
    path = tmp_path / "x.bin"
    path.write_bytes(b"GIF89a")
    with pytest.raises(IngestionError):
        load_image(path)
    with pytest.raises(IngestionError):
        load_image(tmp_path / "missing.ppm")


def test_gray_uses_luma_weights():
    """Test luma of pure red."""
    img = ImageU8.from_array(np.tile(np.array([255, 0, 0], dtype=np.uint8), (3, 3, 1)))
    np.testing.assert_allclose(to_gray(img), 0.299)


def test_sobel_zero_on_constant_image():
    """Test a constant image has no gradient and no edges."""
    gray = np.full((1, 1, 5, 6), 0.4)
    mag = sobel_magnitude(gray)
    assert np.all(mag == 0)
    assert np.all(edge_map(mag) == 0)


def test_sobel_vertical_step():
    """Test a vertical step gives |Gx| = 4 * step at the boundary and 0 elsewhere."""
    gray = np.zeros((1, 1, 4, 6))
    gray[..., 3:] = 1.0
    mag = sobel_magnitude(gray)[0, 0]
    np.testing.assert_allclose(mag[:, 2:4], 4.0)
    np.testing.assert_allclose(mag[:, [0, 1, 4, 5]], 0.0)


def test_sobel_rejects_tiny_images():
    """Test images smaller than 3x3 are refused."""
    with pytest.raises(ConfigurationError):
        sobel_magnitude(np.zeros((1, 1, 2, 5)))


def test_otsu_two_spikes():
    """Test Otsu on a two-valued map picks the lowest occupied bin centre."""
    mag = np.zeros((1, 1, 4, 4))
    mag[..., :2] = 2.0
    t = otsu_threshold(mag)
    assert t == pytest.approx(2.0 / 512)
    np.testing.assert_array_equal(edge_map(mag), (mag > 0).astype(float))


def test_edge_map_fixed_threshold_is_inclusive():
    """Test edge = magnitude >= threshold."""
    mag = np.array([0.1, 0.2, 0.3]).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(edge_map(mag, 0.2).ravel(), [0, 1, 1])


def test_edge_map_rejects_negative_magnitude():
    """Test edge_map validates its input."""
    with pytest.raises(ConfigurationError):
        edge_map(-np.ones((1, 1, 3, 3)))


def test_otsu_constant_positive_map_is_all_edge():
    """Test a constant non-zero map has one occupied bin and every pixel is an edge."""
    mag = np.full((1, 1, 4, 5), 0.3)
    assert otsu_threshold(mag) == pytest.approx(0.3)
    np.testing.assert_array_equal(edge_map(mag), np.ones_like(mag))


def test_otsu_single_value():
    """Test a one-element map."""
    mag = np.full((1, 1, 1, 1), 0.7)
    assert otsu_threshold(mag) == pytest.approx(0.7)
    assert edge_map(mag).item() == 1.0


def test_otsu_bimodal_marks_minority():
    """Test a 90/10 split of zeros and ones marks exactly the ones."""
    mag = np.zeros((1, 1, 10, 10))
    mag[0, 0, 3] = 1.0
    t = otsu_threshold(mag)
    assert 0.0 < t < 1.0
    edges = edge_map(mag)
    assert int(edges.sum()) == 10
    np.testing.assert_array_equal(edges, mag)


def test_edge_map_zero_threshold_marks_positive_pixels():
    """Test a zero override keeps every strictly positive pixel."""
    mag = np.random.default_rng(3).uniform(0.01, 1.0, size=(1, 1, 6, 7))
    np.testing.assert_array_equal(edge_map(mag, 0.0), np.ones_like(mag))


def test_sobel_diagonal_step():
    """Test a 45 degree step has |Gx| = |Gy|: 3 on the two rows next to it, 1 one further out."""
    n = 9
    rows, cols = np.indices((n, n))
    gray = (cols > rows).astype(np.float64)[None, None]
    mag = sobel_magnitude(gray)[0, 0]
    d = cols - rows
    per_axis = np.select([(d == 0) | (d == 1), (d == -1) | (d == 2)], [3.0, 1.0], 0.0)
    interior = (slice(1, n - 1), slice(1, n - 1))
    np.testing.assert_allclose(mag[interior], (np.sqrt(2.0) * per_axis)[interior], atol=1e-12)


def test_sobel_translation_equivariant():
    """Test shifting the image shifts the interior magnitude."""
    gray = np.random.default_rng(5).uniform(size=(1, 1, 9, 11))
    shifted = np.zeros_like(gray)
    shifted[..., 1:, 2:] = gray[..., :-1, :-2]
    mag = sobel_magnitude(gray)[0, 0]
    mag_shifted = sobel_magnitude(shifted)[0, 0]
    np.testing.assert_allclose(mag_shifted[2:-1, 3:-1], mag[1:-2, 1:-3], atol=1e-12)


def test_sobel_ignores_constant_offset():
    """Test adding a constant leaves the magnitude unchanged."""
    gray = np.random.default_rng(6).uniform(size=(1, 1, 7, 8))
    np.testing.assert_allclose(sobel_magnitude(gray + 0.25), sobel_magnitude(gray), atol=1e-12)


def test_checkerboard_edges():
    """Test the 2x2-block checkerboard: 60 of 64 pixels are edges."""
    stack = build_gme_stack(_checkerboard())
    assert int(stack.edges.sum()) == 60
    assert stack.magnitude.max() == pytest.approx(4.0 / MAGNITUDE_SCALE)


def test_stack_layout_and_standardization():
    """Test channel order and standardization of the 5-channel stack."""
    img = _random_image()
    stack = build_gme_stack(img, 5, dtype=np.float64)
    assert stack.tensor.shape == (1, 5, 12, 10)
    assert stack.tensor.dtype == np.float64
    np.testing.assert_allclose(stack.tensor[0, 3], (stack.magnitude[0, 0] - GME_MEAN) / GME_STD)
    np.testing.assert_allclose(stack.tensor[0, 4], (stack.edges[0, 0] - GME_MEAN) / GME_STD)
    assert set(np.unique(stack.tensor[0, 4])) <= {-1.0, 1.0}
    assert 0.0 <= stack.magnitude.min() and stack.magnitude.max() <= 1.0


def test_three_channel_stack_skips_gme():
    """Test --no-gme style stacks share RGB and skip the GME maps."""
    img = _random_image()
    three = build_gme_stack(img, 3)
    five = build_gme_stack(img, 5)
    assert three.tensor.shape == (1, 3, 12, 10)
    assert three.magnitude is None and three.edges is None
    np.testing.assert_array_equal(three.tensor, five.tensor[:, :3])


def test_stack_rejects_other_channel_counts():
    """Test only 3 or 5 input channels are allowed."""
    with pytest.raises(ConfigurationError) as exc_info:
        build_gme_stack(_random_image(), 4)
    assert exc_info.value.field == "input_channels"


def test_palette_is_deterministic():
    """Test the palette is a pure function of the class index."""
    np.testing.assert_array_equal(palette(20), palette(150)[:20])
    assert len({tuple(c) for c in palette(32)}) == 32


def test_colorize_validates_ids():
    """Test colorize refuses ids outside the class range."""
    with pytest.raises(ConfigurationError):
        colorize(np.array([[0, 3]]), 3)
    img = colorize(np.array([[0, 2]]), 3)
    np.testing.assert_array_equal(img.data[0, 1], palette(3)[2])
