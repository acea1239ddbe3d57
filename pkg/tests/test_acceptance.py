"""Acceptance suite: one test per acceptance criterion, each printing a
single PASS/FAIL line.  Tolerances are pinned here, not deferred."""

import hashlib
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from facedeid import engine
from facedeid.adapters import PixelEmbedder, load_image
from facedeid.core import BoxGeom, PresenceRegion
from facedeid.detect import DetectorConfig, densify, greedy_match, sampled_frame_indices
from facedeid.evaluate import (
    EmbeddingRecord,
    ExpressionLabel,
    GazeSample,
    blur_sweep,
    expression_agreement,
    gaze_agreement,
    identity_ranking,
    landmark_distance,
    per_feature_distance,
    rank_k_accuracy,
)
from facedeid.evaluate import LandmarkSet
from facedeid.gateway import scheduler as sched
from facedeid.gateway.service import GatewayConfig, PipelineService
from facedeid.gateway.store import SessionStore

from synth import (
    detections_from_track,
    ground_truth_track,
    linear_track,
    make_manifest,
    random_session_case,
    scripted_annotation,
    write_batch_detections,
    write_video,
)
from test_detect import exhaustive_match
from test_scheduler import drive_randomly


def announce(name: str):
    import functools

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[ACCEPTANCE] {name}: FAIL")
                raise
            print(f"[ACCEPTANCE] {name}: PASS")

        return wrapper

    return deco


# -- criterion 1: recognition oracle equivalence -------------------------------


def oracle_recognition(queries, references, ks):
    """Brute-force: per query, sort reference indices by (distance, index)."""
    ref_ids = [r.identity for r in references]
    ref_mat = np.stack([r.vector for r in references])
    hits = {k: 0 for k in ks}
    ranks = []
    for q in queries:
        d = np.sqrt(((ref_mat - q.vector) ** 2).sum(axis=1))
        order = sorted(range(len(references)), key=lambda j: (d[j], j))
        for k in ks:
            if any(ref_ids[j] == q.identity for j in order[:k]):
                hits[k] += 1
        ranks.append(next(pos for pos, j in enumerate(order, 1)
                          if ref_ids[j] == q.identity))
    return {k: hits[k] / len(queries) for k in ks}, ranks


@announce("recognition oracle equivalence (200 instances, zero tolerance, <60s)")
def test_recognition_oracle_equivalence():
    import statistics

    start = time.monotonic()
    rng = np.random.default_rng(2024)
    ks = (1, 2, 5, 10)
    identities = [f"person{i:02d}" for i in range(22)]
    for case in range(200):
        dim = int(rng.choice([8, 32, 64]))
        if case < 2:
            n_queries = 1000
        else:
            n_queries = int(np.exp(rng.uniform(np.log(5), np.log(400))))
        references = [
            EmbeddingRecord(identity=ident, image_ref=f"r{i}-{j}",
                            vector=rng.normal(size=dim))
            for i, ident in enumerate(identities) for j in range(5)
        ]
        queries = [
            EmbeddingRecord(identity=identities[int(rng.integers(22))],
                            image_ref=f"q{n}", vector=rng.normal(size=dim))
            for n in range(n_queries)
        ]
        want_acc, want_ranks = oracle_recognition(queries, references, ks)
        for k in ks:
            assert rank_k_accuracy(queries, references, k) == want_acc[k]
        got = identity_ranking(queries, references)
        assert got["ranks"] == want_ranks
        assert got["median"] == float(statistics.median(want_ranks))
        assert got["mean"] == float(statistics.fmean(want_ranks))
        assert got["sd"] == float(statistics.pstdev(want_ranks))
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"recognition suite took {elapsed:.1f}s"


# -- criterion 2: Eq.-exact landmark distance ------------------------------------


@announce("landmark distance exactness (1e-9)")
def test_landmark_distance_exactness():
    rng = np.random.default_rng(7)

    # uniform-shift fixtures: D_norm == shift / Face_w
    for shift_frac in (0.1, 0.25, 0.031):
        box = BoxGeom(0, 0, 200, 100)
        pts = rng.uniform(0, 200, size=(68, 2))
        shifted = pts + np.array([box.w * shift_frac, 0.0])
        d = landmark_distance(LandmarkSet(0, box, pts), LandmarkSet(0, box, shifted))
        assert abs(d - shift_frac) < 1e-9

    # 1,000 random pairs against an independent per-point oracle
    for _ in range(1000):
        w = int(rng.integers(10, 400))
        h = int(rng.integers(10, 400))
        box = BoxGeom(0, 0, w, h)
        a = rng.uniform(-50, 450, size=(68, 2))
        b = rng.uniform(-50, 450, size=(68, 2))
        total = 0.0
        for i in range(68):
            total += math.sqrt(((a[i, 0] - b[i, 0]) / w) ** 2 +
                               ((a[i, 1] - b[i, 1]) / h) ** 2)
        got = landmark_distance(LandmarkSet(0, box, a), LandmarkSet(0, box, b))
        assert abs(got - total / 68) < 1e-9

    # per-feature isolation holds exactly
    box = BoxGeom(0, 0, 160, 80)
    pts = rng.uniform(0, 160, size=(68, 2))
    for name, idx in (("eyes", range(36, 48)), ("nose", range(27, 36)),
                      ("mouth", range(48, 68))):
        moved = pts.copy()
        moved[list(idx), 0] += box.w / 8
        out = per_feature_distance(LandmarkSet(0, box, pts), LandmarkSet(0, box, moved))
        for other in ("eyes", "nose", "mouth"):
            if other == name:
                assert abs(out[other] - 0.125) < 1e-12
            else:
                assert out[other] == 0.0


# -- criterion 3: blur semantics ---------------------------------------------------


@announce("blur kernel formula, fixpoint, and monotone sweep")
def test_blur_semantics():
    from facedeid import kernels
    from facedeid.privatize import blur_kernel_size

    # 50-case grid, exact against a rational-arithmetic oracle
    cases = 0
    for scale_num, scale_den in ((1, 5), (1, 10), (1, 15), (1, 20), (1, 8)):
        for w, h in ((3, 4), (40, 40), (100, 100), (160, 240), (127, 301),
                     (1, 1), (55, 89), (640, 480), (13, 13), (2, 999)):
            want = max(1, math.ceil(Fraction(w + h) * Fraction(scale_num, scale_den)))
            got = blur_kernel_size(BoxGeom(0, 0, w, h), scale_num / scale_den)
            assert got == want, (w, h, scale_den)
            cases += 1
    assert cases == 50

    # constant-image fixpoint, bit-exact
    img = np.full((31, 57, 3), 201, np.uint8)
    for k in (2, 3, 16, 40):
        assert np.array_equal(kernels.box_blur(img, k), img)

    # monotone decay of rank-1 accuracy across scales, <=2pp adjacent jitter
    rng = np.random.default_rng(30)
    crops = []
    for i in range(30):
        coarse = rng.integers(0, 256, (4, 4, 3)).astype(float)
        img = np.kron(coarse, np.ones((16, 16, 1)))
        img = np.clip(img + rng.normal(0, 5, img.shape), 0, 255).astype(np.uint8)
        crops.append((f"id{i:02d}", img))
    embedder = PixelEmbedder(grid=8)
    references = [EmbeddingRecord(identity=name, image_ref=name,
                                  vector=embedder.embed_array(img))
                  for name, img in crops]
    rows = blur_sweep(crops, [1 / 20, 1 / 15, 1 / 10, 1 / 5], embedder, references)
    by_scale = {round(1 / r["scale"]): r["accuracy"] for r in rows}
    weakest_to_strongest = [by_scale[20], by_scale[15], by_scale[10], by_scale[5]]
    for weaker, stronger in zip(weakest_to_strongest, weakest_to_strongest[1:]):
        assert stronger <= weaker + 0.02, weakest_to_strongest
    assert weakest_to_strongest[0] > weakest_to_strongest[-1], (
        "sweep should actually degrade accuracy")


# -- criterion 4: annotation coverage contract ----------------------------------------


@announce("annotation coverage contract (50 random sessions + 1px tracks)")
def test_annotation_coverage_contract():
    for seed in range(50):
        manifest, track, dense, regions, dropout = random_session_case(seed=seed)
        session, report = scripted_annotation(manifest, dense, regions,
                                              rescue_track=track)
        assert report["rate_after"] == 1.0
        assert report["rate_after"] >= report["rate_before"]
        covered = {o.frame for o in session.final_track}
        for region in session.regions:
            assert all(f in covered for f in region.frames())

    # constant-velocity tracks: pass-4 boxes within 1 pixel of ground truth
    for seed, dropout in ((1, 0.0), (2, 0.3), (3, 0.5)):
        frame_count = 150
        boxes, gt = linear_track(frame_count)
        manifest = make_manifest(frame_count, session_id=f"cv-{seed}")
        rng = np.random.default_rng(seed)
        sparse = detections_from_track(manifest, boxes, stride=10,
                                       dropout=dropout, rng=rng)
        dense = densify(sparse, DetectorConfig(stride=10))
        # pin the region edges like a pass-3 annotator, so every gap is
        # two-sided and pass 4 interpolates rather than replicates
        session, report = scripted_annotation(
            manifest, dense, [PresenceRegion(0, frame_count - 1)],
            rescue_track=boxes, pin_region_edges=True)
        assert report["rate_after"] == 1.0
        for obs in session.final_track:
            x, y = gt[obs.frame]
            assert abs(obs.box.x - x) <= 1.0 + 1e-9
            assert abs(obs.box.y - y) <= 1.0 + 1e-9


# -- criterion 5: densification --------------------------------------------------------


@announce("densification law, exact interpolation, assignment-oracle matching")
def test_densification():
    # invocation-count law over a 100-case grid
    cases = 0
    for frame_count in (1, 2, 5, 9, 10, 11, 30, 31, 59, 60, 61, 100, 599, 600, 601, 1000):
        for stride in (1, 2, 3, 7, 10, 30, 60):
            n = len(sampled_frame_indices(frame_count, stride))
            base = math.ceil(frame_count / stride)
            assert base <= n <= base + 1
            cases += 1
    assert cases >= 100

    rng = np.random.default_rng(77)
    from facedeid.core import DetectionSet, FaceObservation, Provenance

    def obs(frame, x, y):
        return FaceObservation(frame=frame, box=BoxGeom(x, y, 40, 40),
                               confidence=0.9, provenance=Provenance.DETECTED)

    for _ in range(40):
        n = int(rng.integers(1, 5))  # <= 4 detections per sampled frame
        left, right = [], []
        for i in range(n):
            bx, by = 130 * (i + 1), 60
            if rng.random() < 0.8:
                left.append(obs(0, bx + int(rng.integers(-18, 19)),
                                by + int(rng.integers(-18, 19))))
            if rng.random() < 0.8:
                right.append(obs(10, bx + int(rng.integers(-18, 19)),
                                 by + int(rng.integers(-18, 19))))
        sparse = DetectionSet(
            session_id="s",
            observations={f: tuple(o) for f, o in ((0, left), (10, right)) if o},
            sampled_frames=(0, 10))
        dense = densify(sparse, DetectorConfig(stride=10))

        greedy = set(greedy_match(left, right, 0.5))
        assert greedy == exhaustive_match(left, right, 0.5)

        from facedeid.core import lerp_box

        expected = {}
        for i, j in greedy:
            for f in range(1, 10):
                expected.setdefault(f, []).append(lerp_box(left[i], right[j], f))
        for f in range(1, 10):
            got = sorted((o.box for o in dense.observations.get(f, ())),
                         key=lambda b: (b.x, b.y))
            want = sorted(expected.get(f, []), key=lambda b: (b.x, b.y))
            assert got == want


# -- criterion 6: end-to-end synthetic run ----------------------------------------------


@announce("end-to-end synthetic run (600 frames, blur 1/5, <2 min)")
def test_end_to_end_synthetic(tmp_path):
    start = time.monotonic()
    frame_count = 600
    track = ground_truth_track(frame_count, size=(40, 40), velocity=(1.2, 0.7),
                               bounds=(256, 192))
    frames_dir = tmp_path / "frames"
    write_video(frames_dir, frame_count, width=256, height=192,
                track=track, noise_seed=1234)

    store = SessionStore(tmp_path / "store")
    service = PipelineService(store, GatewayConfig())
    session = store.create_session(frames_dir, fps=60.0)
    sid = session.manifest.session_id

    detections_file = tmp_path / "detections.json"
    write_batch_detections(detections_file, session.manifest, track,
                           stride=10, dropout=0.25, seed=9)
    service.detect_stage(sid, batch_file=str(detections_file))
    service.densify_stage(sid)

    # scripted annotation over two presence regions
    regions = [PresenceRegion(0, 399), PresenceRegion(450, 599)]
    owner = service.registry.owner(sid)
    state = owner.snapshot()
    session_final, report = scripted_annotation(
        state.manifest, state.detections, regions, rescue_track=track)
    assert report["rate_after"] == 1.0
    # persist the annotated session (engine ops ran outside the owner here)
    store.save_session(session_final)
    service.registry.adopt(session_final)

    from facedeid.privatize import BlurSpec, PrivatizeOptions

    log = service.privatize_stage(
        sid, options=PrivatizeOptions(mode="blur", blur=BlurSpec(1 / 5)))

    region_frames = {f for r in regions for f in r.frames()}
    privatized = {e["frame"] for e in log["frames"] if e["status"] == "privatized"}
    assert privatized == region_frames
    assert log["summary"]["privatized"] == len(region_frames)
    assert log["summary"].get("failed", 0) == 0

    out_dir = store.session_dir(sid) / "renders"
    track_by_frame = {o.frame: o for o in session_final.final_track}
    rng = np.random.default_rng(4321)
    sample_inside = rng.choice(sorted(region_frames), size=40, replace=False)
    for f in sample_inside:
        src = load_image(frames_dir / f"{f:06d}.png")
        out = load_image(out_dir / f"{f:06d}.png")
        b = track_by_frame[f].box
        mask = np.ones(src.shape[:2], bool)
        mask[b.y:b.y + b.h, b.x:b.x + b.w] = False
        assert hashlib.sha256(out[mask].tobytes()).hexdigest() == \
            hashlib.sha256(src[mask].tobytes()).hexdigest()
    outside = sorted(set(range(frame_count)) - region_frames)
    for f in rng.choice(outside, size=20, replace=False):
        assert (out_dir / f"{f:06d}.png").read_bytes() == \
            (frames_dir / f"{f:06d}.png").read_bytes()

    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"end-to-end run took {elapsed:.1f}s"


# -- criterion 7: gaze/expression harness --------------------------------------------------


@announce("gaze/expression harness (self-agreement, hand counts, exclusions)")
def test_gaze_expression_harness():
    rng = np.random.default_rng(5)

    # self-agreement streams -> 100%
    samples = []
    for f in range(500):
        if rng.random() < 0.55:
            samples.append(GazeSample(frame=f, face_min_side=int(rng.integers(56, 200)),
                                      horizontal_ratio=float(rng.uniform(0, 1)),
                                      vertical_ratio=float(rng.uniform(0, 1))))
        else:
            samples.append(GazeSample(frame=f, face_min_side=int(rng.integers(10, 200))))
    out = gaze_agreement(samples, list(samples))
    assert out["accuracy"] == 100.0

    labels = [ExpressionLabel(frame=f, label="Happy" if f % 3 else "Sad")
              for f in range(300)]
    expr = expression_agreement(labels, list(labels))
    assert expr["agreement_rate"] == 100.0

    # hand-counted fixture: 60 over threshold, orig valid 40, priv valid 30,
    # both 25, equal 17
    original, privatized = [], []
    for f in range(100):
        side = 80 if f < 60 else 40
        o_valid = f < 40
        p_valid = (15 <= f < 45)
        original.append(GazeSample(frame=f, face_min_side=side,
                                   horizontal_ratio=0.5 if o_valid else None,
                                   vertical_ratio=0.5 if o_valid else None))
        if p_valid:
            equal = f < 32  # frames 15..31 equal -> 17 equal among both-valid
            privatized.append(GazeSample(frame=f, face_min_side=side,
                                         horizontal_ratio=0.5 if equal else 0.1,
                                         vertical_ratio=0.5))
        else:
            privatized.append(GazeSample(frame=f, face_min_side=side))
    out = gaze_agreement(original, privatized)
    assert out["pct_over_threshold"] == 60.0
    assert out["pct_original_detected"] == pytest.approx(100.0 * 40 / 60)
    assert out["pct_detected"] == pytest.approx(100.0 * 30 / 60)
    assert out["compared"] == 25
    assert out["accuracy"] == pytest.approx(100.0 * 17 / 25)
    assert out["newly_detected"] == 5  # frames 40..44

    # expression hand count: 7 agree of 20 co-labeled, 3 skipped
    orig = [ExpressionLabel(frame=f, label="Happy") for f in range(20)]
    priv = ([ExpressionLabel(frame=f, label="Happy") for f in range(7)] +
            [ExpressionLabel(frame=f, label="Fear") for f in range(7, 20)] +
            [ExpressionLabel(frame=f, label="Sad") for f in range(20, 23)])
    expr = expression_agreement(orig, priv)
    assert expr["agreement_rate"] == pytest.approx(35.0)
    assert expr["compared"] == 20
    assert expr["skipped"] == 3

    # 56-pixel threshold boundary: exactly-56 included, 55 excluded
    fifty_six = [GazeSample(frame=0, face_min_side=56, horizontal_ratio=0.5,
                            vertical_ratio=0.5),
                 GazeSample(frame=1, face_min_side=55, horizontal_ratio=0.5,
                            vertical_ratio=0.5)]
    out = gaze_agreement(fifty_six, list(fifty_six))
    assert out["pct_over_threshold"] == 50.0

    # 10% session-validity floor: 9.9% valid excluded, 10% valid kept
    def session_with_validity(n_valid, n_total=1000):
        return [GazeSample(frame=f, face_min_side=100,
                           horizontal_ratio=0.5 if f < n_valid else None,
                           vertical_ratio=0.5 if f < n_valid else None)
                for f in range(n_total)]

    excluded = gaze_agreement(session_with_validity(99), session_with_validity(99))
    kept = gaze_agreement(session_with_validity(100), session_with_validity(100))
    assert excluded["excluded"] is True
    assert kept["excluded"] is False


# -- criterion 8: scheduler -------------------------------------------------------------------


@announce("scheduler: 1,000 random schedules, limits respected, all terminal")
def test_scheduler_randomized():
    rng = np.random.default_rng(1000)
    for run in range(1000):
        limits = {stage: int(rng.integers(1, 4)) for stage in sched.STAGES}
        state = drive_randomly(n_sessions=10, limits=limits, rng=rng)
        assert sched.all_terminal(state)
