import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from qccheck import otsu_mismatches, qc_efficacy
from scipy import ndimage

from concordia.color import hsv_to_rgb
from concordia.qc import (
    DegenerateHistogram,
    RejectReason,
    Tile,
    TissueMask,
    ink_fraction,
    laplacian_variance,
    load_accepted_tiles,
    otsu_threshold,
    qc_filter,
    qc_slide,
    run_qc,
    segment_tissue,
    tile_slide,
)
from concordia.slidegen import INK_HSV, GenConfig, SlideRaster, generate_dataset, generate_specimen


def _tile(px, sid="S0", gx=0, gy=0):
    return Tile(sid, 0, gx, gy, np.ascontiguousarray(px, dtype=np.uint8))


def test_otsu_matches_exhaustive_scan_on_1000_histograms():
    assert otsu_mismatches(1000, 11) == []


def test_otsu_two_spikes():
    h = np.zeros(256, np.int64)
    h[10] = h[200] = 100
    assert otsu_threshold(h) == 10
    h = np.zeros(256, np.int64)
    h[0] = h[255] = 50
    assert otsu_threshold(h) == 0


def test_otsu_degenerate():
    h = np.zeros(256, np.int64)
    h[128] = 999
    with pytest.raises(DegenerateHistogram, match="degenerate histogram"):
        otsu_threshold(h)
    with pytest.raises(ValueError):
        otsu_threshold(np.zeros(255))


def test_segment_half_gray():
    px = np.full((128, 256, 3), 255, np.uint8)
    px[:, :128] = 100
    m = segment_tissue(SlideRaster("a", px))
    assert m.bits[:, :128].all() and not m.bits[:, 128:].any()


def test_segment_all_white():
    m = segment_tissue(SlideRaster("a", np.full((128, 128, 3), 255, np.uint8)))
    assert not m.bits.any()


def test_segment_covers_generated_tissue():
    for seed in range(3):
        r, _, truth = generate_specimen(0.5, GenConfig(ink_prob=0, blur_prob=0), seed, return_truth=True)
        m = segment_tissue(r)
        assert (m.bits & truth.tissue).sum() >= 0.95 * truth.tissue.sum()


def test_tile_slide_examples():
    s = SlideRaster("a", np.zeros((256, 256, 3), np.uint8))
    tiles = tile_slide(s, TissueMask(np.ones((256, 256), bool)))
    assert [(t.grid_x, t.grid_y) for t in tiles] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert tile_slide(s, TissueMask(np.zeros((256, 256), bool))) == []
    bits = np.zeros((256, 256), bool)
    bits[128:, :128] = True
    tiles = tile_slide(s, TissueMask(bits), min_tissue_fraction=0.5)
    assert [(t.grid_x, t.grid_y) for t in tiles] == [(0, 1)]


def test_tile_slide_bad_size():
    s = SlideRaster("a", np.zeros((256, 256, 3), np.uint8))
    with pytest.raises(ValueError):
        tile_slide(s, TissueMask(np.ones((256, 256), bool)), tile_size=100)
    with pytest.raises(ValueError):
        tile_slide(s, TissueMask(np.ones((128, 128), bool)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_tile_slide_count_and_bounds(seed, frac):
    rng = np.random.default_rng(seed)
    bits = rng.random((384, 256)) < rng.random()
    s = SlideRaster("a", np.zeros((384, 256, 3), np.uint8))
    tiles = tile_slide(s, TissueMask(bits), min_tissue_fraction=frac)
    cover = bits.reshape(3, 128, 2, 128).mean(axis=(1, 3))
    assert len(tiles) == int((cover >= frac).sum())
    cells = [(t.grid_x, t.grid_y) for t in tiles]
    assert len(set(cells)) == len(cells)
    assert all(0 <= x < 2 and 0 <= y < 3 for x, y in cells)


def test_tile_rejects_bad_shape():
    with pytest.raises(ValueError):
        Tile("a", 0, 0, 0, np.zeros((64, 64, 3), np.uint8))


def test_laplacian_constant_and_checkerboard():
    assert laplacian_variance(np.full((128, 128, 3), 77, np.uint8)) == 0.0
    yy, xx = np.mgrid[:128, :128]
    board = np.where((yy + xx) % 2 == 0, 255, 0).astype(np.uint8)
    px = np.repeat(board[..., None], 3, axis=2)
    # brute-force convolution with the 4-neighbour kernel on the interior
    g = board.astype(float)
    resp = [g[i - 1, j] + g[i + 1, j] + g[i, j - 1] + g[i, j + 1] - 4 * g[i, j]
            for i in range(1, 127) for j in range(1, 127)]
    assert set(resp) == {-4 * 255.0, 4 * 255.0}
    assert laplacian_variance(px) == pytest.approx(np.var(resp), rel=1e-12)
    assert np.var(resp) == pytest.approx(1_040_400.0)


def test_laplacian_rotation_and_inversion_invariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        px = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        v = laplacian_variance(px)
        assert laplacian_variance(np.rot90(px)) == pytest.approx(v, rel=1e-9)
        assert laplacian_variance(255 - px) == pytest.approx(v, rel=1e-9)


def test_blur_lowers_score_on_100_tiles():
    rng = np.random.default_rng(4)
    for _ in range(100):
        px = rng.integers(0, 256, (128, 128, 3)).astype(float)
        px = ndimage.gaussian_filter(px, (rng.uniform(0, 2), rng.uniform(0, 2), 0))
        a = np.clip(np.rint(px), 0, 255).astype(np.uint8)
        b = np.clip(np.rint(ndimage.gaussian_filter(px, (1.5, 1.5, 0))), 0, 255).astype(np.uint8)
        assert laplacian_variance(b) < laplacian_variance(a)


def test_ink_fraction_trivial():
    assert ink_fraction(np.full((128, 128, 3), 230, np.uint8)) == 0.0
    ink = np.clip(np.rint(hsv_to_rgb(np.array(INK_HSV)) * 255), 0, 255).astype(np.uint8)
    assert ink_fraction(np.broadcast_to(ink, (128, 128, 3))) == 1.0


def test_ink_fraction_quarter_stroke():
    rng = np.random.default_rng(9)
    r, _ = generate_specimen(0.7, GenConfig(width=256, height=256, ink_prob=0, blur_prob=0), 2)
    px = r.pixels[:128, :128].copy()
    stroke = np.zeros((128, 128), bool)
    yy, xx = np.mgrid[:128, :128]
    stroke |= (xx >= 48) & (xx < 80)  # 32 of 128 columns
    n = int(stroke.sum())
    hsv = np.empty((n, 3))
    hsv[:, 0] = INK_HSV[0] + 0.01 * rng.standard_normal(n)
    hsv[:, 1] = np.clip(INK_HSV[1] + 0.04 * rng.standard_normal(n), 0, 1)
    hsv[:, 2] = np.clip(INK_HSV[2] + 0.04 * rng.standard_normal(n), 0, 1)
    px[stroke] = np.clip(np.rint(hsv_to_rgb(hsv) * 255), 0, 255).astype(np.uint8)
    assert stroke.mean() == 0.25
    assert abs(ink_fraction(px) - 0.25) <= 0.02


def test_qc_filter_vacuous_and_constant():
    rng = np.random.default_rng(5)
    tiles = [_tile(rng.integers(0, 256, (128, 128, 3)), gx=i) for i in range(5)]
    tiles.append(_tile(np.full((128, 128, 3), 200), gx=5))
    acc, ver = qc_filter(tiles, 0.0, 1.0)
    assert len(acc) == 6 and all(v.accepted and v.reject_reason is None for v in ver)
    acc, ver = qc_filter(tiles[-1:], 1.0, 1.0)
    assert acc == [] and ver[0].reject_reason is RejectReason.Blur
    with pytest.raises(ValueError):
        qc_filter(tiles, -1.0, 0.1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 500), st.floats(0, 1))
def test_qc_filter_partitions(seed, bt, it):
    rng = np.random.default_rng(seed)
    tiles = [_tile(rng.integers(0, 256, (128, 128, 3)) // rng.integers(1, 50), gx=i) for i in range(4)]
    acc, ver = qc_filter(tiles, bt, it)
    assert len(ver) == len(tiles)
    assert len(acc) == sum(v.accepted for v in ver)
    assert all(v.accepted == (v.reject_reason is None) for v in ver)


def test_qc_slide_covers_every_cell():
    r, _ = generate_specimen(0.3, GenConfig(width=512, height=256, ink_prob=1.0), 7)
    acc, ver = qc_slide(r)
    assert [(v.grid_x, v.grid_y) for v in ver] == [(x, y) for y in range(2) for x in range(4)]
    assert len(acc) == sum(v.accepted for v in ver)


def test_qc_efficacy_at_default_thresholds():
    bad_rej, clean_rej, n_bad, n_clean = qc_efficacy(40, 2024)
    assert n_bad > 50 and n_clean > 100
    assert bad_rej >= 0.95
    assert clean_rej <= 0.05


def test_run_qc_round_trip(tmp_path):
    recs = generate_dataset(tmp_path / "data", 3, GenConfig(width=256, height=256), seed=1)
    rows = run_qc(tmp_path / "data" / "manifest.jsonl", tmp_path / "tiles")
    tiles = load_accepted_tiles(tmp_path / "tiles")
    assert len(tiles) == sum(r[4] for r in rows)
    assert {t.specimen_id for t in tiles} <= {r.specimen_id for r in recs}
    assert len(rows) == 3 * 4
