import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aerialsr.boxes import Detection, iou
from aerialsr.detector import blob_oracle_detect
from aerialsr.imaging import ImageBuffer
from aerialsr.tiling import extract_tile, merge_frame_detections, plan_tiles, remap_detections
from conftest import disk_patch


def det(x0, y0, x1, y1, c=0.5):
    return Detection(x0, y0, x1, y1, c)


class TestPlanTiles:
    def test_full_survey_frame(self):
        grid = plan_tiles(3000, 4000, 512, 0)
        assert len(grid) == 48
        xs = sorted({x for x, _ in grid})
        ys = sorted({y for _, y in grid})
        assert len(xs) == 6 and len(ys) == 8
        assert xs[-1] == 3000 - 512 and ys[-1] == 4000 - 512

    def test_single_tile(self):
        assert plan_tiles(512, 512, 512).tiles == ((0, 0),)

    def test_edge_anchor(self):
        assert plan_tiles(520, 512, 512, 0).tiles == ((0, 0), (8, 0))

    def test_row_major(self):
        grid = plan_tiles(1100, 700, 512, 0)
        assert grid.tiles == ((0, 0), (512, 0), (588, 0), (0, 188), (512, 188), (588, 188))

    def test_overlap_stride(self):
        xs = [x for x, y in plan_tiles(1200, 512, 512, 100) if y == 0]
        assert xs == [0, 412, 688]

    @pytest.mark.parametrize("args", [(500, 600, 512, 0), (600, 600, 512, 512), (600, 600, 512, -1),
                                      (600, 600, 0, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            plan_tiles(*args)

    @given(st.integers(8, 300), st.integers(8, 300), st.integers(1, 64), st.data())
    @settings(max_examples=150, deadline=None)
    def test_coverage_and_bounds(self, w, h, tile, data):
        assume(tile <= min(w, h))
        overlap = data.draw(st.integers(0, tile - 1))
        grid = plan_tiles(w, h, tile, overlap)
        cover = np.zeros((h, w), dtype=bool)
        for x, y in grid:
            assert 0 <= x and 0 <= y and x + tile <= w and y + tile <= h
            cover[y:y + tile, x:x + tile] = True
        assert cover.all()
        assert list(grid.tiles) == sorted(grid.tiles, key=lambda t: (t[1], t[0]))
        assert plan_tiles(w, h, tile, overlap) == grid


class TestExtractTile:
    def test_whole_frame(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        assert extract_tile(img, (0, 0), 16) == img

    def test_copy_matches_indexing(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (40, 50, 3), dtype=np.uint8))
        t = extract_tile(img, (7, 11), 16)
        assert np.array_equal(t.data, img.data[11:27, 7:23])

    def test_anchored_edge(self):
        yy, xx = np.mgrid[0:20, 0:30]
        img = ImageBuffer(np.stack([xx * 8, yy * 12, xx + yy], axis=2).astype(np.uint8))
        x, y = plan_tiles(30, 20, 16).tiles[-1]
        t = extract_tile(img, (x, y), 16)
        assert np.array_equal(t.data[:, -1], img.data[y:y + 16, -1])
        assert np.array_equal(t.data[-1, :], img.data[-1, x:x + 16])

    def test_out_of_bounds(self):
        img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
        with pytest.raises(IndexError):
            extract_tile(img, (10, 0), 16)


class TestRemap:
    def test_identity(self):
        d = [det(1, 2, 3, 4, 0.7)]
        assert remap_detections(d, (0, 0), 1) == d

    def test_factor_two(self):
        out = remap_detections([det(0, 0, 100, 100, 0.3)], (512, 0), 2)
        assert out[0].box == (512, 0, 562, 50)
        assert out[0].confidence == 0.3

    @given(st.integers(20, 200), st.integers(20, 200), st.integers(4, 20), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_gt_round_trip(self, w, h, tile, seed):
        r = np.random.default_rng(seed)
        x0, y0 = int(r.integers(0, w - 2)), int(r.integers(0, h - 2))
        x1, y1 = int(r.integers(x0 + 1, w)), int(r.integers(y0 + 1, h))
        for ox, oy in plan_tiles(w, h, min(tile, w, h)):
            local = det(x0 - ox, y0 - oy, x1 - ox, y1 - oy)
            assert remap_detections([local], (ox, oy), 1)[0].box == (x0, y0, x1, y1)

    def test_translation_equivariance_with_blob_oracle(self):
        frame = disk_patch(96, [(70, 30), (20, 80)], 5)
        direct = sorted(d.box for d in blob_oracle_detect(frame, 0.5, 1))
        tiled = []
        for origin in plan_tiles(96, 96, 48):
            tile = extract_tile(frame, origin, 48)
            tiled += remap_detections(blob_oracle_detect(tile, 0.5, 1), origin, 1)
        assert sorted(d.box for d in tiled) == direct


class TestMerge:
    def test_single(self):
        d = [det(0, 0, 5, 5, 0.4)]
        assert merge_frame_detections(d, 0.5) == d

    def test_identical_boxes(self):
        out = merge_frame_detections([det(0, 0, 10, 10, 0.8), det(0, 0, 10, 10, 0.9)], 0.5)
        assert [d.confidence for d in out] == [0.9]

    def test_chain(self):
        # A-B and B-C overlap (IoU 1/3 each), A and C only touch
        a, b, c = det(0, 0, 10, 10, 0.9), det(5, 0, 15, 10, 0.8), det(10, 0, 20, 10, 0.7)
        assert iou(a, b) == pytest.approx(1 / 3) and iou(a, c) == 0.0
        assert merge_frame_detections([c, b, a], 0.2) == [a, c]

    def test_tie_break(self):
        a, b = det(3, 0, 13, 10, 0.5), det(0, 0, 10, 10, 0.5)
        assert merge_frame_detections([a, b], 0.5) == [b]

    def test_iou_equal_threshold_kept(self):
        a, b = det(0, 0, 10, 10, 0.9), det(5, 0, 15, 10, 0.8)
        assert len(merge_frame_detections([a, b], 1 / 3)) == 2

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            merge_frame_detections([], 1.5)

    @given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 15),
                              st.integers(1, 15), st.floats(0, 1)), max_size=25),
           st.floats(0, 1))
    @settings(max_examples=150, deadline=None)
    def test_subset_and_separation(self, raw, thr):
        dets = [det(x, y, x + w, y + h, c) for x, y, w, h, c in raw]
        out = merge_frame_detections(dets, thr)
        assert all(d in dets for d in out)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert iou(out[i], out[j]) <= thr
        assert merge_frame_detections(list(reversed(dets)), thr) == out
