import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbfopt.scanpath import (
    GLOBAL_OFFSET,
    NORMAL_OFFSET,
    PathError,
    ScanPath,
    annulus_quadrant_path,
    beam_position,
    build_secondary_path,
    compute_timing,
    hatch_line_maps,
    path_from_spec,
    snake_path,
)


@pytest.fixture(scope="module")
def example1_path():
    return snake_path(5, 5e-3, 2e-4, 10)


@pytest.fixture(scope="module")
def example2_path():
    return annulus_quadrant_path(1e-3, 5e-3, 19, 5.0, 8)


class TestBuild:
    def test_example1_counts(self, example1_path):
        assert example1_path.n_segments == 50
        assert example1_path.n_lines == 5

    def test_example2_counts(self, example2_path):
        assert example2_path.n_segments == 152
        assert example2_path.n_lines == 19

    def test_single_segment(self):
        path = ScanPath(np.array([[[0.0, 0.0], [1e-3, 0.0]]]))
        assert path.n_segments == 1
        assert path.n_lines == 1
        assert path.scan_distance(0, 0.0) == 0.0

    def test_zero_length_rejected(self):
        with pytest.raises(PathError, match="segment 1"):
            ScanPath(np.array([[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]]]))

    def test_nonzero_z_rejected(self):
        with pytest.raises(PathError, match="z = 0"):
            ScanPath(np.array([[[0.0, 0.0, 1e-6], [1.0, 0.0, 0.0]]]))

    def test_segment_order_preserved(self, example1_path):
        starts = example1_path.start
        assert starts[0, 0] == 0.0
        # second hatch line runs right-to-left
        assert starts[10, 0] == pytest.approx(5e-3)
        assert starts[10, 1] == pytest.approx(2e-4)

    def test_equal_angle_connected_path_is_one_line(self):
        xs = np.linspace(0.0, 1e-3, 8)
        endpoints = [[[a, 0.0], [b, 0.0]] for a, b in zip(xs[:-1], xs[1:])]
        assert ScanPath(np.array(endpoints)).n_lines == 1


class TestScanDistance:
    def test_path_start(self, example1_path):
        assert example1_path.scan_distance(0, 0.0) == 0.0

    def test_line_boundary(self, example1_path):
        # segment 10 (0-based) starts after ten 0.5 mm segments
        assert example1_path.scan_distance(10, 0.0) == pytest.approx(5.0e-3)

    def test_path_end(self, example1_path):
        assert example1_path.scan_distance(49, 1.0) == pytest.approx(25.0e-3)
        assert example1_path.total_length == pytest.approx(25.0e-3)

    def test_fraction_out_of_range(self, example1_path):
        with pytest.raises(PathError):
            example1_path.scan_distance(0, 1.5)

    @given(st.integers(0, 49), st.floats(0.0, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_monotone_additive(self, k, frac):
        path = snake_path(5, 5e-3, 2e-4, 10)
        g = path.scan_distance(k, frac)
        assert g == pytest.approx(path.distance_start[k] + frac * path.length[k])
        assert 0.0 <= g <= path.total_length + 1e-15


class TestTiming:
    def test_times_strictly_increasing(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5))
        assert np.all(timing.t_end > timing.t_start)
        assert np.all(timing.t_start[1:] >= timing.t_end[:-1])

    def test_durations(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5))
        assert timing.total_time == pytest.approx(25e-3 / 0.5)

    @given(st.floats(0.1, 10.0))
    @settings(max_examples=20, deadline=None)
    def test_speed_scaling_scales_times(self, c):
        path = snake_path(2, 1e-3, 1e-4, 4)
        v = np.linspace(0.2, 0.9, path.n_segments)
        base = compute_timing(path, v)
        scaled = compute_timing(path, c * v)
        np.testing.assert_allclose(scaled.t_end, np.asarray(base.t_end) / c, rtol=1e-12)

    def test_jump_dwell_only_at_jumps(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5), jump_dwell=1e-3)
        gaps = np.asarray(timing.t_start[1:]) - np.asarray(timing.t_end[:-1])
        # 4 line jumps in a 5-line snake
        assert np.isclose(gaps, 1e-3).sum() == 4
        assert np.isclose(gaps, 0.0).sum() == 45

    def test_bad_speeds_rejected(self, example1_path):
        with pytest.raises(PathError):
            compute_timing(example1_path, np.zeros(50))
        with pytest.raises(PathError):
            compute_timing(example1_path, np.full(49, 1.0))


class TestBeamPosition:
    def test_start(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5))
        np.testing.assert_allclose(beam_position(example1_path, timing, 0.0), [0, 0, 0])

    def test_constant_speed_midpoint(self):
        path = ScanPath(np.array([[[0.0, 0.0], [1e-3, 0.0]]]))
        timing = compute_timing(path, [0.5])
        np.testing.assert_allclose(
            beam_position(path, timing, 1e-3), [0.5e-3, 0.0, 0.0], atol=1e-12
        )

    def test_segment_end_consistency(self, example1_path):
        timing = compute_timing(example1_path, np.linspace(0.3, 0.8, 50))
        for k in range(50):
            np.testing.assert_allclose(
                beam_position(example1_path, timing, float(timing.t_end[k])),
                example1_path.end[k],
                atol=1e-9,
            )

    def test_continuity_within_lines(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5))
        for k in (3, 17, 42):  # connected boundaries
            t = float(timing.t_end[k])
            left = beam_position(example1_path, timing, t - 1e-12)
            right = beam_position(example1_path, timing, t + 1e-12)
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_after_end_rejected(self, example1_path):
        timing = compute_timing(example1_path, np.full(50, 0.5))
        with pytest.raises(PathError):
            beam_position(example1_path, timing, timing.total_time + 1e-9)


class TestHatchLineMaps:
    def test_example1_first_segments(self, example1_path):
        first, line_of = hatch_line_maps(example1_path)
        np.testing.assert_array_equal(first, [0, 10, 20, 30, 40])
        assert line_of[0] == 0 and line_of[10] == 1 and line_of[49] == 4

    def test_example2_first_segments(self, example2_path):
        first, _ = hatch_line_maps(example2_path)
        np.testing.assert_array_equal(first, 8 * np.arange(19))

    def test_single_line(self):
        path = ScanPath(np.array([[[0.0, 0.0], [1e-3, 0.0]]]))
        first, line_of = hatch_line_maps(path)
        np.testing.assert_array_equal(first, [0])
        np.testing.assert_array_equal(line_of, [0])

    def test_maps_are_inverse(self, example2_path):
        first, line_of = hatch_line_maps(example2_path)
        assert len(np.unique(first)) == len(first)  # injective
        assert set(line_of) == set(range(example2_path.n_lines))  # surjective
        for m, k in enumerate(first):
            assert line_of[k] == m
        # line_of(n) == m exactly between consecutive first segments
        bounds = np.append(first, example2_path.n_segments)
        for m in range(example2_path.n_lines):
            assert np.all(line_of[bounds[m] : bounds[m + 1]] == m)


class TestSecondaryPath:
    def test_global_offset_example1(self, example1_path):
        sec = build_secondary_path(example1_path, 1e-4, 5e-5, GLOBAL_OFFSET)
        np.testing.assert_allclose(sec.start - example1_path.start, [[0.0, 1e-4, -5e-5]] * 50)
        pts = sec.map_points(example1_path.point_at(7, 0.3), [7])
        np.testing.assert_allclose(
            pts[0], example1_path.point_at(7, 0.3) + [0.0, 1e-4, -5e-5]
        )

    def test_zero_offset_identity(self, example1_path):
        sec = build_secondary_path(example1_path, 0.0, 0.0, NORMAL_OFFSET)
        np.testing.assert_allclose(sec.start, example1_path.start)
        np.testing.assert_allclose(sec.end, example1_path.end)

    def test_normal_offset_horizontal_segment(self):
        path = ScanPath(np.array([[[0.0, 0.0], [1e-3, 0.0]]]))  # theta = 0
        sec = build_secondary_path(path, 1e-4, 0.0, NORMAL_OFFSET)
        np.testing.assert_allclose(sec.start[0], [0.0, -1e-4, 0.0], atol=1e-18)

    def test_depth_must_be_nonnegative(self, example1_path):
        with pytest.raises(PathError):
            build_secondary_path(example1_path, 1e-4, -1e-5)

    def test_depth_applied(self, example2_path):
        sec = build_secondary_path(example2_path, 1e-4, 5e-5, NORMAL_OFFSET)
        assert np.all(sec.start[:, 2] == -5e-5)
        # lateral offset magnitude is the width for every segment angle
        lat = np.linalg.norm((sec.start - example2_path.start)[:, :2], axis=1)
        np.testing.assert_allclose(lat, 1e-4)


class TestPathSpecs:
    def test_explicit_segments_mm(self):
        path = path_from_spec({"segments": [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 2.0]]]})
        assert path.n_segments == 2
        assert path.total_length == pytest.approx(3e-3)

    def test_snake_generator(self):
        path = path_from_spec(
            {
                "generator": "snake",
                "lines": 5,
                "line_length_mm": 5.0,
                "line_offset_mm": 0.2,
                "segments_per_line": 10,
            }
        )
        assert (path.n_segments, path.n_lines) == (50, 5)

    def test_annulus_generator_line_length(self):
        path = path_from_spec(
            {
                "generator": "annulus_quadrant",
                "r_inner_mm": 1.0,
                "r_outer_mm": 5.0,
                "n_lines": 19,
                "delta_angle_deg": 5.0,
                "segments_per_line": 8,
            }
        )
        assert (path.n_segments, path.n_lines) == (152, 19)
        first, _ = hatch_line_maps(path)
        for m in range(19):
            lo, hi = path.line_distance_bounds(m)
            assert hi - lo == pytest.approx(4e-3)

    def test_unknown_generator(self):
        with pytest.raises(PathError):
            path_from_spec({"generator": "spiral"})

    def test_immutability(self, example1_path):
        with pytest.raises(ValueError):
            example1_path.start[0, 0] = 1.0
