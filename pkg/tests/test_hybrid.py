import numpy as np
import pytest

from shapetrack.hybrid import (
    HISTORY_DEPTH,
    HybridConfig,
    HybridTracker,
    MaskListSource,
    MotionDelta,
    SegmentationError,
    SourceStatus,
    StepError,
    TrackHistory,
    TrackLog,
    apply_refresh,
    compute_delta,
    run_sequence,
)
from shapetrack.klt import FlowVector
from shapetrack.palette import LandmarkClass
from shapetrack.points import PointSet, PointSetRole, TrackStatus
from shapetrack.sampling import sample_landmark_points
from shapetrack.synth import generate_sequence, parse_script

from .conftest import small_face_script, static_motion

CLS = LandmarkClass.LIP


def snapshot(points, statuses=None, cls=CLS, role=PointSetRole.TRACKED):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    st = np.zeros(len(pts), np.int8) if statuses is None else np.asarray(statuses, np.int8)
    return {cls: PointSet(cls, pts, st, role)}


def history_from_positions(frames_positions, statuses=None):
    """Build a history from per-frame point arrays (same point count each)."""
    h = TrackHistory()
    for i, pos in enumerate(frames_positions):
        st = None if statuses is None else statuses[i]
        h.push(i, snapshot(pos, st))
    return h


class TestTrackHistory:
    def test_capacity_four(self):
        h = history_from_positions([[[0, 0]]] * 6)
        assert len(h) == HISTORY_DEPTH
        assert [f for f, _ in h.entries] == [2, 3, 4, 5]

    def test_strictly_increasing(self):
        h = history_from_positions([[[0, 0]]])
        with pytest.raises(ValueError):
            h.push(0, snapshot([[1, 1]]))


class TestComputeDelta:
    def test_stationary(self):
        h = history_from_positions([[[10, 10], [20, 20]]] * 4)
        md = compute_delta(h, CLS)
        assert md.delta == (0.0, 0.0)
        assert md.interval_counts == (2, 2, 2)

    def test_uniform_motion(self):
        base = np.array([[10.0, 10.0], [30.0, 15.0]])
        h = history_from_positions([base + [3 * k, 0] for k in range(4)])
        md = compute_delta(h, CLS)
        assert md.delta == pytest.approx((3.0, 0.0), abs=1e-12)

    def test_two_point_mixed_speeds(self):
        # one point moves (2,0), the other (4,0), every interval: mean is (3,0)
        p0 = np.array([[0.0, 0.0], [0.0, 10.0]])
        frames = [p0 + [[2 * k, 0], [4 * k, 0]] for k in range(4)]
        md = compute_delta(history_from_positions(frames), CLS)
        assert md.delta == pytest.approx((3.0, 0.0), abs=1e-12)
        assert md.interval_counts == (2, 2, 2)

    def test_short_history(self):
        h = history_from_positions([[[0, 0]], [[1, 0]]])
        md = compute_delta(h, CLS)
        assert md.delta == pytest.approx((1.0, 0.0), abs=1e-12)
        assert md.interval_counts == (1, 0, 0)

    def test_single_entry_gives_zero(self):
        h = history_from_positions([[[5, 5]]])
        assert compute_delta(h, CLS).delta == (0.0, 0.0)

    def test_lost_points_excluded(self):
        ok = TrackStatus.OK
        lost = TrackStatus.LOST_OUT_OF_BOUNDS
        positions = [[[0, 0], [100, 0]], [[1, 0], [101, 0]], [[2, 0], [117, 0]], [[3, 0], [117, 0]]]
        statuses = [[ok, ok], [ok, ok], [ok, lost], [ok, lost]]
        md = compute_delta(history_from_positions(positions, statuses), CLS)
        # the lost point only counts in the oldest interval (alive at both ends),
        # and its wild jump to x=117 never contaminates the delta
        assert md.interval_counts == (1, 1, 2)
        assert md.delta == pytest.approx((1.0, 0.0), abs=1e-12)

    def test_empty_interval_skipped_not_zeroed(self):
        ok, lost = TrackStatus.OK, TrackStatus.LOST_SMALL_EIGEN
        positions = [[[0.0, 0.0]], [[2.0, 0.0]], [[2.0, 0.0]], [[4.0, 0.0]]]
        statuses = [[ok], [lost], [lost], [ok]]
        md = compute_delta(history_from_positions(positions, statuses), CLS)
        # every transition has a dead end point: no valid intervals at all
        assert md.interval_counts == (0, 0, 0)
        assert md.delta == (0.0, 0.0)

    def test_missing_class(self):
        h = history_from_positions([[[0, 0]]] * 4)
        md = compute_delta(h, LandmarkClass.HAIR)
        assert md.delta == (0.0, 0.0)

    def test_oracle_equivalence_randomized(self):
        # brute-force recomputation in plain python, independent of the
        # ring-buffer code: points in set order, intervals newest-first
        rng = np.random.default_rng(99)
        for _ in range(100):
            depth = int(rng.integers(1, 5))
            n = int(rng.integers(1, 12))
            positions = [rng.uniform(0, 200, (n, 2)) for _ in range(depth)]
            statuses = [rng.choice([0, 0, 0, 1, 3], size=n).astype(np.int8) for _ in range(depth)]
            h = history_from_positions(positions, statuses)
            md = compute_delta(h, CLS)

            means = []
            counts = [0, 0, 0]
            for i in range(min(3, depth - 1)):
                newer_p, newer_s = positions[depth - 1 - i], statuses[depth - 1 - i]
                older_p, older_s = positions[depth - 2 - i], statuses[depth - 2 - i]
                sx = sy = 0.0
                k = 0
                for j in range(n):
                    if newer_s[j] == 0 and older_s[j] == 0:
                        sx += newer_p[j, 0] - older_p[j, 0]
                        sy += newer_p[j, 1] - older_p[j, 1]
                        k += 1
                counts[i] = k
                if k:
                    means.append((sx / k, sy / k))
            if means:
                ex = sum(m[0] for m in means) / len(means)
                ey = sum(m[1] for m in means) / len(means)
            else:
                ex = ey = 0.0
            assert md.interval_counts == tuple(counts)
            assert abs(md.delta.dx - ex) <= 1e-9
            assert abs(md.delta.dy - ey) <= 1e-9


class TestApplyRefresh:
    def sampled(self, points):
        return PointSet.fresh(CLS, np.asarray(points, float), PointSetRole.SAMPLED)

    def test_zero_delta_identity(self):
        ps = self.sampled([[10, 10], [20, 30]])
        out = apply_refresh(ps, MotionDelta(FlowVector(0, 0), (1, 1, 1)), (224, 224))
        assert (out.points == ps.points).all()
        assert out.role == PointSetRole.SPLICED
        assert (out.status == TrackStatus.OK).all()

    def test_shift(self):
        ps = self.sampled([[10, 10]])
        out = apply_refresh(ps, MotionDelta(FlowVector(3, -1), (1, 1, 1)), (224, 224))
        assert out.points.tolist() == [[13.0, 9.0]]

    def test_out_of_frame_dropped(self):
        ps = self.sampled([[222, 100]])
        out = apply_refresh(ps, MotionDelta(FlowVector(5, 0), (1, 1, 1)), (224, 224))
        assert len(out) == 0

    def test_scale(self):
        ps = self.sampled([[10, 10]])
        out = apply_refresh(ps, MotionDelta(FlowVector(4, 2), (1, 1, 1)), (224, 224), scale=0.5)
        assert out.points.tolist() == [[12.0, 11.0]]

    def test_requires_sampled_role(self):
        ps = PointSet.fresh(CLS, np.array([[1.0, 1.0]]), PointSetRole.TRACKED)
        with pytest.raises(ValueError):
            apply_refresh(ps, MotionDelta(FlowVector(0, 0), (0, 0, 0)), (10, 10))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"refresh_period": 0}, {"budget_per_class": 0}, {"delta_scale": -0.1}, {"mode": "turbo"}],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            HybridConfig(**kwargs)


class CountingSource(MaskListSource):
    def __init__(self, masks, latency_frames=4):
        super().__init__(masks, latency_frames)
        self.request_frames = []
        self.blocking_frames = []

    def request(self, frame_index, frame=None, frame_path=None):
        self.request_frames.append(frame_index)
        super().request(frame_index, frame, frame_path)

    def segment_blocking(self, frame_index, frame=None, frame_path=None):
        self.blocking_frames.append(frame_index)
        return super().segment_blocking(frame_index, frame, frame_path)


@pytest.fixture(scope="module")
def static_seq():
    script = parse_script(small_face_script(14, static_motion(14)))
    return generate_sequence(script)


@pytest.fixture(scope="module")
def moving_seq():
    motion = "[motion]\nstart = 0\nend = 20\ndx = 0.5\ndy = 0.25\n"
    return generate_sequence(parse_script(small_face_script(20, motion, seed=13)))


class TestSourceProtocol:
    def test_latency_schedule(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        src.request(0)
        assert src.outstanding
        for t in range(4):
            assert src.poll(t) is SourceStatus.PENDING
        assert src.poll(4) is SourceStatus.READY
        mask, seconds = src.take()
        assert mask is static_seq.masks[0]
        assert not src.outstanding

    def test_double_request_rejected(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=2)
        src.request(0)
        with pytest.raises(SegmentationError):
            src.request(1)

    def test_missing_mask_fails(self, static_seq):
        src = MaskListSource(list(static_seq.masks[:2]), latency_frames=0)
        src.request(10)
        assert src.poll(10) is SourceStatus.FAILED
        with pytest.raises(SegmentationError):
            src.take()

    def test_take_before_ready(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=3)
        src.request(0)
        with pytest.raises(SegmentationError):
            src.take()

    def test_negative_latency_rejected(self, static_seq):
        with pytest.raises(ValueError):
            MaskListSource(list(static_seq.masks), latency_frames=-1)


class TestStepSchedule:
    def test_requests_and_replacements(self, static_seq):
        src = CountingSource(list(static_seq.masks), latency_frames=4)
        cfg = HybridConfig(refresh_period=4)
        tracker = HybridTracker(src, cfg)
        refreshes = []
        for t, frame in enumerate(static_seq.frames):
            tracker.step(frame)
            if tracker.last_refresh_frame is not None and (not refreshes or refreshes[-1] != tracker.last_refresh_frame):
                refreshes.append(tracker.last_refresh_frame)
        assert src.blocking_frames == [0]
        assert src.request_frames == [0, 4, 8, 12]
        assert refreshes == [4, 8, 12]

    def test_klt_only_never_requests(self, static_seq):
        src = CountingSource(list(static_seq.masks), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig(mode="klt-only"))
        for frame in static_seq.frames[:6]:
            tracker.step(frame)
        assert src.blocking_frames == [0]
        assert src.request_frames == []

    def test_longer_period(self, static_seq):
        src = CountingSource(list(static_seq.masks), latency_frames=2)
        tracker = HybridTracker(src, HybridConfig(refresh_period=6))
        for frame in static_seq.frames[:13]:
            tracker.step(frame)
        assert src.request_frames == [0, 6, 12]

    def test_dimension_change_rejected(self, static_seq):
        from shapetrack.imaging import RgbImage

        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig())
        tracker.step(static_seq.frames[0])
        smaller = RgbImage(static_seq.frames[1].pixels[:-8, :, :])
        with pytest.raises(ValueError):
            tracker.step(smaller)

    def test_source_failure_carries_frame_index(self, static_seq):
        src = MaskListSource(list(static_seq.masks[:3]), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig(refresh_period=4))
        # the request issued at frame 4 wants mask 4, which does not exist,
        # and its result is integrated at frame 8
        with pytest.raises(StepError) as exc:
            for frame in static_seq.frames[:10]:
                tracker.step(frame)
        assert exc.value.frame_index == 8


class TestStaticScene:
    def test_spliced_equals_bootstrap(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig(refresh_period=4))
        snaps = [tracker.step(f) for f in static_seq.frames[:6]]
        boot = snaps[0]
        after = snaps[4]  # first replacement happened before tracking frame 4
        assert set(after) == set(boot)
        for cls in boot:
            assert np.allclose(after[cls].points, boot[cls].points, atol=1e-9)
            assert (after[cls].status == TrackStatus.OK).all()

    def test_refresh_restores_cardinality(self, static_seq):
        budget = 64
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        cfg = HybridConfig(refresh_period=4, budget_per_class=budget)
        tracker = HybridTracker(src, cfg)
        for f in static_seq.frames[:5]:
            out = tracker.step(f)
        expected = {ps.cls: len(ps) for ps in sample_landmark_points(static_seq.masks[0], budget)}
        got = {cls: len(ps) for cls, ps in out.items()}
        assert got == expected

    def test_history_cleared_on_refresh(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig(refresh_period=4))
        for f in static_seq.frames[:5]:
            tracker.step(f)
        assert [f for f, _ in tracker.history.entries] == [4]


class TestDeltaOnRigidMotion:
    def test_delta_matches_velocity(self, moving_seq):
        src = MaskListSource(list(moving_seq.masks), latency_frames=4)
        tracker = HybridTracker(src, HybridConfig(refresh_period=4))
        for f in moving_seq.frames:
            tracker.step(f)
        assert tracker.last_refresh_frame is not None and tracker.last_refresh_frame >= 12
        for cls, md in tracker.last_refresh_deltas.items():
            if sum(md.interval_counts) == 0:
                continue
            assert abs(md.delta.dx - 0.5) <= 0.3, cls
            assert abs(md.delta.dy - 0.25) <= 0.3, cls


class TestRunSequence:
    def test_single_frame_log(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        log = run_sequence(static_seq.frames[:1], src, HybridConfig())
        assert len(log) == 1
        assert log.records[0].frame == 0
        assert len(log.records[0].classes) > 0

    def test_empty_sequence_rejected(self, static_seq):
        src = MaskListSource(list(static_seq.masks))
        with pytest.raises(ValueError):
            run_sequence([], src, HybridConfig())

    def test_log_covers_every_point_every_frame(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        log = run_sequence(static_seq.frames[:8], src, HybridConfig())
        sizes = {rec.frame: sum(len(p) for _, p, _ in rec.classes) for rec in log.records}
        assert len(sizes) == 8
        assert len(set(sizes.values())) == 1  # static scene: same count everywhere

    def test_deterministic_log_bytes(self, static_seq):
        runs = []
        for _ in range(2):
            src = MaskListSource(list(static_seq.masks), latency_frames=4)
            log = run_sequence(static_seq.frames[:8], src, HybridConfig())
            runs.append(log.to_csv_bytes())
        assert runs[0] == runs[1]

    def test_csv_roundtrip(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        log = run_sequence(static_seq.frames[:5], src, HybridConfig())
        data = log.to_csv_bytes()
        back = TrackLog.from_csv_bytes(data)
        assert back.to_csv_bytes() == data

    def test_timings_cover_stages(self, static_seq):
        src = MaskListSource(list(static_seq.masks), latency_frames=4)
        log = run_sequence(static_seq.frames[:6], src, HybridConfig())
        stages = {s for _, s, _ in log.timings}
        assert stages == {"segment", "sample", "splice", "track"}


class TestOcclusion:
    @pytest.fixture(scope="class")
    def occluded(self):
        motion = (
            "[motion]\nstart = 0\nend = 6\ndx = 0\ndy = 0\n"
            "[motion]\nstart = 6\nend = 18\ndx = 3\ndy = 0\n"
            "[motion]\nstart = 18\nend = 30\ndx = -3\ndy = 0\n"
            "[motion]\nstart = 30\nend = 40\ndx = 0\ndy = 0\n"
        )
        return generate_sequence(parse_script(small_face_script(40, motion, seed=21)))

    def run(self, seq, mode):
        src = MaskListSource(list(seq.masks), latency_frames=2)
        cfg = HybridConfig(refresh_period=2, mode=mode)
        tracker = HybridTracker(src, cfg)
        counts = []
        for f in seq.frames:
            out = tracker.step(f)
            counts.append(sum(ps.ok_count for ps in out.values()))
        return counts

    def test_klt_only_loses_permanently(self, occluded):
        counts = self.run(occluded, "klt-only")
        assert counts[-1] < counts[0]
        assert all(b <= a for a, b in zip(counts, counts[1:]))  # no resurrection

    def test_combined_recovers(self, occluded):
        counts = self.run(occluded, "combined")
        klt_counts = self.run(occluded, "klt-only")
        assert counts[-1] > klt_counts[-1]
        assert counts[-1] >= 0.9 * counts[0]
