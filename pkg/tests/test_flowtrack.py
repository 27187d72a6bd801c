"""Marker detection and Lucas-Kanade tracking tests.

Ground truth for every accuracy check is the marker position array the
gel simulator maintains internally; the tracker only ever sees rendered
images, so agreement is a real measurement, not a tautology.
"""

import numpy as np
import pytest

from gelteleop.flowtrack import (
    CountMismatchError,
    DimensionMismatchError,
    TrackConfig,
    detect_markers,
    flow_from_csv,
    flow_to_csv,
    lk_flow,
    track_sequence,
)
from gelteleop.gelsim import GelConfig, GelImage, Wrench, apply_wrench, make_gel, render


def endpoint_error(flow, truth):
    """Mean Euclidean distance between tracked and true displacements."""
    return float(np.hypot(*(flow.delta - truth).T).mean())


@pytest.fixture
def config():
    return GelConfig()


@pytest.fixture
def rest(config):
    return make_gel(config)


@pytest.fixture
def track_cfg():
    return TrackConfig()


class TestDetectMarkers:
    def test_rest_grid_recovered(self, rest):
        markers = detect_markers(render(rest), expected_count=63)
        errors = np.hypot(*(markers.centroids - rest.rest_positions).T)
        assert errors.max() < 0.25

    def test_row_major_order(self, rest):
        markers = detect_markers(render(rest))
        ys = markers.centroids[:, 1]
        assert (np.diff(ys) > -1e-6).all()
        first_row = markers.centroids[:9]
        assert (np.diff(first_row[:, 0]) > 0).all()

    def test_subpixel_after_deformation(self, rest):
        # Displacements vary per marker, so match detections to truth by
        # nearest neighbor rather than by sort order.
        from scipy.spatial import cKDTree

        state = apply_wrench(rest, Wrench(fx=0.35, fy=-0.2, fn=0.6, tau=0.0))
        markers = detect_markers(render(state), expected_count=63)
        dist, idx = cKDTree(state.current_positions).query(markers.centroids)
        assert len(set(idx)) == 63  # a true one-to-one matching
        assert dist.max() < 0.25

    def test_count_mismatch_raises(self, rest):
        with pytest.raises(CountMismatchError):
            detect_markers(render(rest), expected_count=64)

    def test_blank_image_finds_nothing(self):
        blank = GelImage(width=64, height=48, pixels=np.full((48, 64), 255, dtype=np.uint8))
        markers = detect_markers(blank)
        assert len(markers) == 0

    def test_min_area_filters_specks(self, rest):
        img = render(rest)
        pixels = img.pixels.copy()
        pixels[2, 2] = 0  # single-pixel speck, below any sane area floor
        markers = detect_markers(GelImage(width=img.width, height=img.height, pixels=pixels))
        assert len(markers) == 63


class TestLkFlow:
    def test_uniform_shift_small(self, rest, track_cfg):
        # fx=1.0 with k_s=2.0 translates every marker by exactly 2 px.
        state = apply_wrench(rest, Wrench(fx=1.0, fy=0.0, fn=0.0, tau=0.0))
        markers = detect_markers(render(rest), expected_count=63)
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        assert flow.valid.all()
        truth = state.current_positions - rest.rest_positions
        assert endpoint_error(flow, truth) <= 0.2

    def test_uniform_shift_large(self, rest, track_cfg):
        # 6 px shift needs the pyramid; a 15 px window alone tops out near 3-4 px.
        state = apply_wrench(rest, Wrench(fx=3.0, fy=0.0, fn=0.0, tau=0.0))
        markers = detect_markers(render(rest), expected_count=63)
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        assert flow.valid.all()
        truth = state.current_positions - rest.rest_positions
        assert endpoint_error(flow, truth) <= 0.4

    def test_subpixel_shift(self, rest, track_cfg):
        state = apply_wrench(rest, Wrench(fx=0.31, fy=-0.17, fn=0.0, tau=0.0))
        markers = detect_markers(render(rest), expected_count=63)
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        truth = state.current_positions - rest.rest_positions
        assert endpoint_error(flow, truth) <= 0.1

    def test_radial_field(self, rest, track_cfg):
        # Normal force moves each marker differently; per-marker truth, not a mean.
        state = apply_wrench(rest, Wrench(fx=0.0, fy=0.0, fn=2.0, tau=0.0))
        markers = detect_markers(render(rest), expected_count=63)
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        truth = state.current_positions - rest.rest_positions
        assert endpoint_error(flow, truth) <= 0.2

    def test_twist_field(self, rest, track_cfg):
        state = apply_wrench(rest, Wrench(fx=0.0, fy=0.0, fn=0.0, tau=8.0))
        markers = detect_markers(render(rest), expected_count=63)
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        truth = state.current_positions - rest.rest_positions
        assert endpoint_error(flow, truth) <= 0.2

    def test_integer_roll_equivariance(self, rest, track_cfg):
        # Rolling the full frame 3 px right is a pure translation away from borders.
        img = render(rest)
        rolled = GelImage(width=img.width, height=img.height, pixels=np.roll(img.pixels, 3, axis=1))
        markers = detect_markers(img, expected_count=63)
        flow = lk_flow(img, rolled, markers, track_cfg)
        assert flow.valid.all()
        assert np.abs(flow.delta[:, 0] - 3.0).max() < 0.05
        assert np.abs(flow.delta[:, 1]).max() < 0.05

    def test_flat_window_invalid_zero_delta(self, rest, track_cfg):
        from gelteleop.flowtrack import MarkerSet

        img = render(rest)
        pts = MarkerSet(
            centroids=np.array([[10.0, 10.0], [300.0, 20.0]]), detection_threshold=0.0
        )
        flow = lk_flow(img, img, pts, track_cfg)
        assert not flow.valid.any()
        assert (flow.delta == 0.0).all()

    def test_invalid_entries_leave_valid_ones_untouched(self, rest, track_cfg):
        from gelteleop.flowtrack import MarkerSet

        state = apply_wrench(rest, Wrench(fx=0.5, fy=0.0, fn=0.0, tau=0.0))
        prev, cur = render(rest), render(state)
        markers = detect_markers(prev, expected_count=63)
        flow_clean = lk_flow(prev, cur, markers, track_cfg)

        padded = MarkerSet(
            centroids=np.vstack([markers.centroids, [[10.0, 10.0]]]),
            detection_threshold=markers.detection_threshold,
        )
        flow_padded = lk_flow(prev, cur, padded, track_cfg)
        assert not flow_padded.valid[-1]
        np.testing.assert_array_equal(flow_padded.delta[:-1], flow_clean.delta)
        np.testing.assert_array_equal(
            flow_padded.valid_deltas(), flow_clean.valid_deltas()
        )

    def test_dimension_mismatch_raises(self, rest, track_cfg):
        img = render(rest)
        small = GelImage(width=64, height=48, pixels=np.zeros((48, 64), dtype=np.uint8))
        markers = detect_markers(img)
        with pytest.raises(DimensionMismatchError):
            lk_flow(img, small, markers, track_cfg)

    def test_fuzz_random_images_stay_finite(self, track_cfg):
        from gelteleop.flowtrack import MarkerSet

        rng = np.random.default_rng(7)
        pts = MarkerSet(
            centroids=np.array([[20.0, 20.0], [32.5, 17.25], [44.0, 40.0]]),
            detection_threshold=0.0,
        )
        for _ in range(20):
            a = GelImage(width=64, height=64, pixels=rng.integers(0, 256, (64, 64), dtype=np.uint8))
            b = GelImage(width=64, height=64, pixels=rng.integers(0, 256, (64, 64), dtype=np.uint8))
            flow = lk_flow(a, b, pts, track_cfg)
            assert np.isfinite(flow.delta).all()
            assert np.isfinite(flow.residual).all()
            assert (flow.delta[~flow.valid] == 0.0).all()


class TestTrackSequence:
    def test_ramp_tracks_each_frame_against_first(self, rest, track_cfg):
        states = [apply_wrench(rest, Wrench(fx=f, fy=0.0, fn=0.0, tau=0.0)) for f in (0.5, 1.0, 1.5)]
        frames = [render(rest)] + [render(s) for s in states]
        flows = track_sequence(frames, track_cfg, expected_count=63)
        assert len(flows) == 3
        for flow, state in zip(flows, states):
            truth = state.current_positions - rest.rest_positions
            assert endpoint_error(flow, truth) <= 0.15

    def test_too_few_frames(self, rest, track_cfg):
        with pytest.raises(ValueError):
            track_sequence([render(rest)], track_cfg)


class TestCsvRoundTrip:
    def test_round_trip_exact(self, rest, track_cfg, tmp_path):
        state = apply_wrench(rest, Wrench(fx=0.4, fy=0.1, fn=0.5, tau=1.0))
        markers = detect_markers(render(rest))
        flow = lk_flow(render(rest), render(state), markers, track_cfg)
        path = tmp_path / "flow.csv"
        flow_to_csv(flow, path)
        back = flow_from_csv(path)
        np.testing.assert_array_equal(back.base, flow.base)
        np.testing.assert_array_equal(back.delta, flow.delta)
        np.testing.assert_array_equal(back.valid, flow.valid)
        np.testing.assert_array_equal(back.residual, flow.residual)
