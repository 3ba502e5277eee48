import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchcorr.patches import (BatchError, TrainingPool, assemble_batch, extract_patch,
                                iter_epoch_batches, load_patch_cache, make_multiscale,
                                rescale_to_32, save_patch_cache)
from sketchcorr.sketch import SketchImage

from oracles import bilinear_reference, window_ink_count_bruteforce


def sketch_with_ink(points) -> SketchImage:
    px = np.zeros((480, 480), dtype=np.uint8)
    for r, c in points:
        px[r, c] = 1
    return SketchImage(pixels=px, shape_id="synthetic")


class TestExtractPatch:
    def test_centered_crop_indices(self, chair_data):
        sk = chair_data.sketch(0)
        patch = extract_patch(sk, (240, 240), 32)
        assert np.array_equal(patch, sk.pixels[224:256, 224:256].astype(np.float32))

    def test_corner_zero_padding(self, chair_data):
        sk = chair_data.sketch(0)
        patch = extract_patch(sk, (0, 0), 64)
        assert np.array_equal(patch[32:, 32:], sk.pixels[:32, :32].astype(np.float32))
        assert patch[:32, :].sum() == 0
        assert patch[32:, :32].sum() == 0

    def test_ink_count_matches_double_loop(self, chair_data):
        sk = chair_data.sketch(1)
        rng = np.random.default_rng(1)
        for _ in range(12):
            center = tuple(rng.integers(0, 480, size=2))
            scale = int(rng.choice([32, 64, 128, 256]))
            patch = extract_patch(sk, center, scale)
            assert int(patch.sum()) == window_ink_count_bruteforce(sk.pixels, center, scale)

    def test_out_of_bounds_center_rejected(self, chair_data):
        with pytest.raises(ValueError):
            extract_patch(chair_data.sketch(0), (480, 0), 32)


class TestRescale:
    def test_identity_at_32(self):
        patch = np.random.default_rng(0).random((32, 32)).astype(np.float32)
        assert rescale_to_32(patch) is patch

    def test_constant_image_invariance(self):
        assert np.allclose(rescale_to_32(np.ones((64, 64), dtype=np.float32)), 1.0)

    @pytest.mark.parametrize("side", [64, 128, 256])
    def test_matches_reference_bilinear(self, side):
        rng = np.random.default_rng(side)
        patch = np.zeros((side, side), dtype=np.float32)
        r, c = rng.integers(0, side, size=2)
        patch[r, c] = 1.0
        ref = bilinear_reference(patch)
        assert np.abs(rescale_to_32(patch) - ref).max() < 1e-6

    def test_random_content_matches_reference(self):
        patch = np.random.default_rng(5).random((64, 64)).astype(np.float32)
        assert np.abs(rescale_to_32(patch) - bilinear_reference(patch)).max() < 1e-6

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            rescale_to_32(np.zeros((48, 48)))
        with pytest.raises(ValueError):
            rescale_to_32(np.zeros((32, 64)))


class TestMakeMultiscale:
    def test_blank_sketch_all_zero(self):
        ms = make_multiscale(sketch_with_ink([]), (240, 240))
        assert ms.channels.shape == (4, 32, 32)
        assert ms.channels.sum() == 0

    def test_distant_ink_fills_only_large_scales(self):
        def blob(center_col):
            return [(r, c) for r in range(236, 245) for c in range(center_col - 4, center_col + 5)]

        # ~50 px away: outside the 32/64 crops (half-widths 16/32), inside 128/256
        ms = make_multiscale(sketch_with_ink(blob(290)), (240, 240))
        assert ms.channels[0].sum() == 0 and ms.channels[1].sum() == 0
        assert ms.channels[2].sum() > 0 and ms.channels[3].sum() > 0
        # ~100 px away: only the 256 crop (half-width 128) reaches the ink
        ms = make_multiscale(sketch_with_ink(blob(340)), (240, 240))
        assert ms.channels[:3].sum() == 0 and ms.channels[3].sum() > 0

    def test_channel0_equals_raw_crop(self, chair_data):
        sk = chair_data.sketch(2)
        pixels, _ = chair_data.gt_pixels_in_view(2, "AND")
        center = tuple(pixels[0])
        ms = make_multiscale(sk, center)
        assert np.array_equal(ms.channels[0], extract_patch(sk, center, 32))

    def test_values_in_unit_interval(self, chair_data):
        sk = chair_data.sketch(0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            ms = make_multiscale(sk, tuple(rng.integers(0, 480, size=2)))
            assert ms.channels.min() >= 0.0 and ms.channels.max() <= 1.0

    def test_channel_means_match_window_sums(self, chair_data):
        sk = chair_data.sketch(0)
        ink = sk.ink_points()
        center = tuple(ink[len(ink) // 2])
        ms = make_multiscale(sk, center)
        for k, scale in enumerate((32, 64, 128, 256)):
            win = extract_patch(sk, center, scale)
            # bilinear downsampling preserves the mean up to boundary effects
            assert ms.channels[k].mean() == pytest.approx(win.mean(), abs=0.02)


@pytest.fixture(scope="module")
def pool(chair_data):
    return TrainingPool([chair_data], "OR")


class TestBatches:

    def test_batch_shape_and_distinct_vertices(self, pool):
        rng = np.random.default_rng(0)
        batch = assemble_batch(pool, 64, rng)
        assert len(batch) == 64
        anchors = {(t.anchor.source[0], t.anchor.vertex_id) for t in batch}
        assert len(anchors) == 64

    def test_triplet_tags(self, pool):
        rng = np.random.default_rng(1)
        for t in assemble_batch(pool, 16, rng):
            assert t.anchor.vertex_id == t.positive.vertex_id
            assert t.anchor.source[1] != t.positive.source[1]
            assert t.negative.vertex_id != t.anchor.vertex_id

    def test_negatives_are_other_triplets_positives(self, pool):
        rng = np.random.default_rng(2)
        batch = assemble_batch(pool, 32, rng)
        positives = {id(t.positive) for t in batch}
        for t in batch:
            assert id(t.negative) in positives
            assert id(t.negative) != id(t.positive)

    def test_single_vertex_errors(self, chair_data):
        tiny = TrainingPool([chair_data], "OR")
        tiny.items = tiny.items[:1]
        with pytest.raises(BatchError, match="have 1"):
            assemble_batch(tiny, 64, np.random.default_rng(0))

    def test_deterministic_given_seed(self, pool):
        def collect():
            rng = np.random.default_rng(9)
            return [(t.anchor.center, t.positive.center, t.negative.center)
                    for t in assemble_batch(pool, 64, rng)]

        assert collect() == collect()

    def test_epoch_covers_pairs_once(self, pool):
        rng = np.random.default_rng(3)
        seen = []
        for batch in iter_epoch_batches(pool, 64, rng):
            assert len(batch) == 64
            counts = {}
            for t in batch:
                key = (t.anchor.source[0], t.anchor.vertex_id)
                counts[key] = counts.get(key, 0) + 1
                assert t.negative.vertex_id != t.anchor.vertex_id
                seen.append((t.anchor.vertex_id,
                             tuple(sorted((t.anchor.source[1], t.positive.source[1])))))
            assert max(counts.values()) <= 32  # no vertex owns more than half a batch
        # no (vertex, view-pair) sampled twice in one epoch
        assert len(seen) == len(set(seen))
        assert len(seen) >= pool.num_pairs() - 2 * 64

    def test_or_pool_not_smaller_than_and(self, chair_data):
        p_or = TrainingPool([chair_data], "OR")
        p_and = TrainingPool([chair_data], "AND")
        assert p_or.num_pairs() > p_and.num_pairs()


class TestPatchCache:
    def test_roundtrip(self, tmp_path, chair_data):
        sk = chair_data.sketch(0)
        pixels, vids = chair_data.gt_pixels_in_view(0, "AND")
        patches = [make_multiscale(sk, tuple(px), vertex_id=int(v), view_id=0)
                   for px, v in zip(pixels[:5], vids[:5])]
        path = tmp_path / "cache.bin"
        save_patch_cache(patches, path)
        back = load_patch_cache(path)
        assert len(back) == 5
        for a, b in zip(patches, back):
            assert b.center == a.center
            assert b.source == a.source
            assert b.vertex_id == a.vertex_id
            assert np.abs(a.channels - b.channels).max() <= 1 / 255 + 1e-6
