import numpy as np
import pytest
from conftest import random_stream

from evpose import events, representations as rep
from evpose.errors import EventFormatError, NoTargetError
from evpose.representations import EventFrame, ReprKind, Roi, RoiAffine


def win(events_, width=10, height=10, t0=0, t1=100):
    return events.window_from_events(width, height, events_, t0, t1)


class TestE2F:
    def test_last_polarity_wins(self):
        f = rep.build_e2f(win([(2, 3, 1, 10), (2, 3, -1, 20)]))
        expected = np.full((1, 10, 10), 0.5, np.float32)
        expected[0, 3, 2] = 0.0
        assert np.array_equal(f.data, expected)

    def test_empty_is_background(self):
        assert np.all(rep.build_e2f(win([])).data == 0.5)

    def test_single_positive(self):
        f = rep.build_e2f(win([(5, 5, 1, 0)]))
        assert f.data[0, 5, 5] == 1.0 and np.count_nonzero(f.data != 0.5) == 1

    def test_same_timestamp_uses_stored_order(self):
        f = rep.build_e2f(win([(1, 1, -1, 7), (1, 1, 1, 7)]))
        assert f.data[0, 1, 1] == 1.0


class TestHist2D:
    def test_single_pixel(self):
        f = rep.build_hist2d(win([(4, 4, 1, t) for t in (1, 2, 3)]))
        assert f.data[0, 4, 4] == 1.0 and np.all(f.data[1] == 0)

    def test_max_normalisation(self):
        f = rep.build_hist2d(win([(0, 0, 1, 1)] + [(1, 0, 1, t) for t in range(2, 6)]))
        assert f.data[0, 0, 0] == 0.25 and f.data[0, 0, 1] == 1.0

    def test_empty(self):
        assert np.all(rep.build_hist2d(win([])).data == 0)

    def test_counts_conserve(self, rng):
        s = random_stream(rng, n=2000)
        for w in events.windows(s, 40_000):
            assert rep.event_counts(w).sum() == len(w)

    def test_same_timestamp_permutation_invariant(self):
        a = [(1, 1, 1, 5), (2, 2, -1, 5), (1, 1, -1, 5)]
        b = [a[2], a[0], a[1]]
        assert rep.build_hist2d(win(a)) == rep.build_hist2d(win(b))


class TestLNES:
    def test_half_window(self):
        assert rep.build_lnes(win([(3, 3, 1, 50)])).data[0, 3, 3] == 0.5

    def test_latest_retained(self):
        f = rep.build_lnes(win([(3, 3, 1, 30), (3, 3, 1, 80)]))
        assert f.data[0, 3, 3] == np.float32(0.8)

    def test_event_at_start_is_zero(self):
        f = rep.build_lnes(win([(3, 3, -1, 0)]))
        assert np.all(f.data == 0)

    def test_values_below_one(self, rng):
        s = random_stream(rng, n=2000)
        for w in events.windows(s, 40_000):
            assert rep.build_lnes(w).data.max() < 1.0

    def test_needs_positive_duration(self):
        with pytest.raises(ValueError):
            rep.build_lnes(win([], t0=5, t1=5))


def test_builders_deterministic_and_in_range(rng):
    s = random_stream(rng, n=3000)
    for w in events.windows(s, 30_000):
        for kind in ReprKind:
            a, b = rep.build_frame(kind, w), rep.build_frame(kind, w)
            assert a == b
            assert a.channels == kind.channels
            assert np.all(np.isfinite(a.data)) and a.data.min() >= 0 and a.data.max() <= 1


def test_kind_parsing():
    assert ReprKind.parse("2DHist") is ReprKind.HIST2D
    assert ReprKind.parse("lnes") is ReprKind.LNES
    with pytest.raises(ValueError):
        ReprKind.parse("voxel")


def test_frame_rejects_out_of_range():
    with pytest.raises(ValueError):
        EventFrame(ReprKind.E2F, np.full((1, 2, 2), 1.5, np.float32))
    with pytest.raises(ValueError):
        EventFrame(ReprKind.LNES, np.zeros((1, 2, 2), np.float32))


class TestCropResize:
    def test_full_frame_identity(self, rng):
        data = rng.random((2, 12, 12), dtype=np.float32)
        f = EventFrame(ReprKind.HIST2D, data)
        out, aff = rep.crop_resize(f, Roi(0, 0, 12, 12), 12)
        assert np.array_equal(out.data, data)
        assert aff == RoiAffine(1.0, 1.0, -0.5, -0.5)

    def test_ramp_upsample(self):
        f = EventFrame(ReprKind.E2F, np.array([[[0, 1], [0, 1]]], np.float32))
        out, _ = rep.crop_resize(f, Roi(0, 0, 2, 2), 4)
        rows = out.data[0]
        assert np.all(rows[:, 0] == 0) and np.all(rows[:, -1] == 1)
        assert np.all(np.diff(rows, axis=1) >= 0)
        assert np.all(rows == rows[0])

    def test_impulse_maps_affinely(self):
        for (x, y) in [(40, 30), (47, 33), (52, 41)]:
            data = np.zeros((1, 100, 100), np.float32)
            data[0, y, x] = 1.0
            f = EventFrame(ReprKind.E2F, data)
            roi = Roi(30, 20, 62, 52)
            out, aff = rep.crop_resize(f, roi, 64)
            img = out.data[0]
            peak = np.array(np.unravel_index(np.argmax(img), img.shape))[::-1]
            w = img / img.sum()
            yy, xx = np.mgrid[:64, :64]
            centroid = np.array([(w * xx).sum(), (w * yy).sum()])
            expected = aff.to_roi(np.array([x, y], float))
            assert np.linalg.norm(centroid - expected) <= 0.5
            assert np.linalg.norm(peak - expected) <= 1.0

    def test_affine_round_trip(self, rng):
        aff = RoiAffine.from_roi(Roi(100, 50, 324, 274), 64)
        pts = rng.uniform(0, 1000, size=(20, 2))
        assert np.allclose(aff.to_sensor(aff.to_roi(pts)), pts, atol=1e-9)

    def test_values_stay_in_range(self, rng):
        f = EventFrame(ReprKind.LNES, rng.random((2, 40, 50), dtype=np.float32) * 0.999)
        out, _ = rep.crop_resize(f, Roi(3, 5, 33, 35), 64)
        assert out.data.shape == (2, 64, 64) and out.data.min() >= 0 and out.data.max() <= 1

    def test_errors(self):
        f = EventFrame(ReprKind.E2F, np.zeros((1, 10, 10), np.float32))
        with pytest.raises(ValueError):
            Roi(5, 5, 5, 8)
        with pytest.raises(ValueError):
            rep.crop_resize(f, Roi(0, 0, 11, 10), 8)


class TestGroundTruthRoi:
    def test_margin_zero(self):
        assert rep.ground_truth_roi([(10, 10), (20, 20)], 0.0, (100, 100)) == Roi(10, 10, 20, 20)

    def test_margin_and_square(self):
        roi = rep.ground_truth_roi([(10, 10), (30, 20)], 0.1, (100, 100))
        assert roi.width == roi.height == 24
        assert (roi.x_min, roi.x_max) == (8, 32)

    def test_clamped_near_border(self):
        roi = rep.ground_truth_roi([(1, 1), (30, 8)], 0.2, (64, 48))
        assert roi.within(64, 48) and roi.width == roi.height

    def test_no_target(self):
        with pytest.raises(NoTargetError):
            rep.ground_truth_roi([(-5, -5), (2000, 10)], 0.1, (100, 100))


class TestEfr:
    def test_round_trip(self, tmp_path, rng):
        frames = [EventFrame(k, rng.random((k.channels, 6, 9), dtype=np.float32)) for k in ReprKind]
        rep.save_frames(frames, tmp_path / "f.efr")
        assert rep.load_frames(tmp_path / "f.efr") == frames

    def test_truncated(self, tmp_path):
        f = EventFrame(ReprKind.E2F, np.zeros((1, 4, 4), np.float32))
        raw = rep.frame_to_bytes(f)
        with pytest.raises(EventFormatError):
            rep.frame_from_bytes(raw[:-2])
