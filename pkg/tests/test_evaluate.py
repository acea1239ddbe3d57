import json
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facedeid.adapters import PixelEmbedder
from facedeid.core import BoxGeom, ValidationError
from facedeid.evaluate import (
    EXPRESSION_LABELS,
    EvalReport,
    EmbeddingRecord,
    ExpressionLabel,
    GazeSample,
    GazeThresholds,
    LandmarkSet,
    blur_sweep,
    emit_report,
    expression_agreement,
    gaze_agreement,
    gaze_agreement_sessions,
    gaze_classify,
    identity_ranking,
    landmark_distance,
    load_embeddings,
    per_feature_distance,
    rank_k_accuracy,
    recognition_section,
)


def rec(identity, *coords, ref="", recognizer="default"):
    return EmbeddingRecord(identity=identity, image_ref=ref or f"{identity}-{coords}",
                           vector=np.array(coords, float), recognizer=recognizer)


SPEC_REFS = [
    rec("A", 0.1, 0, ref="A1"),
    rec("B", 1, 0, ref="B1"),
    rec("B", 1, 1, ref="B2"),
    rec("C", 2, 0, ref="C1"),
    rec("A", 5, 5, ref="A2"),
]


def sort_oracle(query, references):
    """Ascending Euclidean distance, ties by reference index."""
    dists = [(math.dist(query.vector, r.vector), i) for i, r in enumerate(references)]
    return [i for _, i in sorted(dists)]


class TestRankK:
    def test_true_a_k1_hit(self):
        assert rank_k_accuracy([rec("A", 0, 0)], SPEC_REFS, 1) == 1.0

    def test_true_b_k1_miss_k2_hit(self):
        assert rank_k_accuracy([rec("B", 0, 0)], SPEC_REFS, 1) == 0.0
        assert rank_k_accuracy([rec("B", 0, 0)], SPEC_REFS, 2) == 1.0

    def test_query_equal_to_own_reference_always_hits(self):
        assert rank_k_accuracy([rec("B", 1, 0)], SPEC_REFS, 1) == 1.0

    def test_errors(self):
        with pytest.raises(ValidationError):
            rank_k_accuracy([rec("A", 0, 0)], SPEC_REFS, 6)  # K > references
        with pytest.raises(ValidationError):
            rank_k_accuracy([rec("A", 0, 0, 0)], SPEC_REFS, 1)  # dim mismatch
        with pytest.raises(ValidationError):
            rank_k_accuracy([rec("A", 0, 0)], [], 1)

    def test_monotone_in_k_and_saturates(self):
        rng = np.random.default_rng(0)
        refs = [rec(f"id{i % 6}", *rng.normal(size=4)) for i in range(18)]
        queries = [rec(f"id{i % 6}", *rng.normal(size=4)) for i in range(10)]
        accs = [rank_k_accuracy(queries, refs, k) for k in range(1, 19)]
        assert accs == sorted(accs)
        assert accs[-1] == 1.0


class TestIdentityRanking:
    def test_true_b_rank_two(self):
        out = identity_ranking([rec("B", 0, 0)], SPEC_REFS)
        assert out["ranks"] == [2]

    def test_self_reference_rank_one(self):
        out = identity_ranking([rec("C", 2, 0)], SPEC_REFS)
        assert out["ranks"] == [1]

    def test_aggregates(self):
        refs = [rec("X", 0.0), rec("Y", 1.0), rec("Y", 2.0), rec("X", 3.0)]
        q1 = rec("X", 0.1)   # X first -> rank 1
        q2 = rec("X", 1.1)   # two Y refs nearer -> rank 3
        out = identity_ranking([q1, q2], refs)
        assert out["ranks"] == [1, 3]
        assert out["median"] == 2
        assert out["mean"] == 2
        assert out["sd"] == 1

    def test_missing_identity_listed(self):
        with pytest.raises(ValidationError) as err:
            identity_ranking([rec("Z", 0, 0)], SPEC_REFS)
        assert "Z" in str(err.value)

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_matches_sort_oracle(self, data):
        n_ids = data.draw(st.integers(2, 5))
        dim = data.draw(st.integers(1, 4))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        refs = [rec(f"id{i % n_ids}", *rng.normal(size=dim)) for i in range(n_ids * 3)]
        queries = [rec(f"id{i % n_ids}", *rng.normal(size=dim)) for i in range(6)]
        out = identity_ranking(queries, refs)
        for q, got_rank in zip(queries, out["ranks"]):
            order = sort_oracle(q, refs)
            want = next(pos for pos, j in enumerate(order, 1) if refs[j].identity == q.identity)
            assert got_rank == want
        for k in (1, 2, len(refs)):
            got = rank_k_accuracy(queries, refs, k)
            hits = sum(
                1 for q in queries
                if any(refs[j].identity == q.identity for j in sort_oracle(q, refs)[:k])
            )
            assert got == hits / len(queries)

    def test_matches_oracle_at_thousand_by_thousand(self):
        rng = np.random.default_rng(123)
        identities = [f"id{i:03d}" for i in range(200)]
        refs = [rec(identities[i % 200], *rng.normal(size=16), ref=f"r{i}")
                for i in range(1000)]
        queries = [rec(identities[int(rng.integers(200))], *rng.normal(size=16),
                       ref=f"q{i}") for i in range(1000)]
        out = identity_ranking(queries, refs)

        # independent oracle: per-query norm + lexsort on (distance, index)
        ref_mat = np.stack([r.vector for r in refs])
        ref_ids = np.array([r.identity for r in refs])
        idx = np.arange(len(refs))
        oracle_ranks = []
        for q in queries:
            d = np.linalg.norm(ref_mat - q.vector, axis=1)
            order = np.lexsort((idx, d))
            hit = np.nonzero(ref_ids[order] == q.identity)[0]
            oracle_ranks.append(int(hit[0]) + 1)
        assert out["ranks"] == oracle_ranks
        for k in (1, 10):
            got = rank_k_accuracy(queries, refs, k)
            hits = sum(1 for r in oracle_ranks if r <= k)
            assert got == hits / len(queries)


def landmarks(points, box=BoxGeom(0, 0, 200, 100), frame=0):
    return LandmarkSet(frame=frame, box=box, points=np.asarray(points, float))


def random_points(rng, n=68, lo=0, hi=200):
    return rng.uniform(lo, hi, size=(n, 2))


class TestLandmarkDistance:
    def test_identity_is_zero(self):
        rng = np.random.default_rng(1)
        pts = random_points(rng)
        assert landmark_distance(landmarks(pts), landmarks(pts.copy())) == 0.0

    def test_uniform_shift(self):
        rng = np.random.default_rng(2)
        pts = random_points(rng)
        box = BoxGeom(0, 0, 200, 100)
        shifted = pts + np.array([box.w / 10, 0.0])
        d = landmark_distance(landmarks(pts, box), landmarks(shifted, box))
        assert d == pytest.approx(0.1, abs=1e-12)

    def test_matches_per_point_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = random_points(rng), random_points(rng)
            box = BoxGeom(0, 0, 200, 100)
            total = 0.0
            for i in range(68):
                total += math.sqrt(((a[i, 0] - b[i, 0]) / box.w) ** 2 +
                                   ((a[i, 1] - b[i, 1]) / box.h) ** 2)
            assert landmark_distance(landmarks(a, box), landmarks(b, box)) == \
                pytest.approx(total / 68, abs=1e-9)

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        a, b = random_points(rng), random_points(rng)
        d1 = landmark_distance(landmarks(a), landmarks(b))
        shift = np.array([37.0, 11.0])
        box2 = BoxGeom(37, 11, 200, 100)
        d2 = landmark_distance(landmarks(a + shift, box2), landmarks(b + shift, box2))
        assert d2 == pytest.approx(d1, abs=1e-12)

    def test_scales_inversely_with_box(self):
        rng = np.random.default_rng(5)
        a, b = random_points(rng), random_points(rng)
        d1 = landmark_distance(landmarks(a, BoxGeom(0, 0, 100, 50)),
                               landmarks(b, BoxGeom(0, 0, 100, 50)))
        d2 = landmark_distance(landmarks(a, BoxGeom(0, 0, 200, 100)),
                               landmarks(b, BoxGeom(0, 0, 200, 100)))
        assert d2 == pytest.approx(d1 / 2, rel=1e-12)

    def test_requires_68_points(self):
        with pytest.raises(ValidationError):
            LandmarkSet(frame=0, box=BoxGeom(0, 0, 10, 10), points=np.zeros((67, 2)))


class TestPerFeature:
    def test_identity_all_zero(self):
        rng = np.random.default_rng(6)
        pts = random_points(rng)
        out = per_feature_distance(landmarks(pts), landmarks(pts.copy()))
        assert out == {"eyes": 0.0, "nose": 0.0, "mouth": 0.0}

    def test_mouth_only_perturbation_isolated(self):
        rng = np.random.default_rng(7)
        pts = random_points(rng)
        box = BoxGeom(0, 0, 200, 100)
        moved = pts.copy()
        moved[48:68, 1] += box.h / 10
        out = per_feature_distance(landmarks(pts, box), landmarks(moved, box))
        assert out["mouth"] == pytest.approx(0.1, abs=1e-12)
        assert out["eyes"] == 0.0
        assert out["nose"] == 0.0

    def test_subsets_disjoint_and_standard(self):
        from facedeid.evaluate import EYES_POINTS, MOUTH_POINTS, NOSE_POINTS

        assert set(EYES_POINTS) == set(range(36, 48))
        assert set(NOSE_POINTS) == set(range(27, 36))
        assert set(MOUTH_POINTS) == set(range(48, 68))
        assert not (set(EYES_POINTS) & set(NOSE_POINTS) & set(MOUTH_POINTS))


def gaze(frame, side=100, h=None, v=None):
    return GazeSample(frame=frame, face_min_side=side, horizontal_ratio=h,
                      vertical_ratio=v)


class TestGazeClassify:
    def test_center_center(self):
        assert gaze_classify(gaze(0, h=0.5, v=0.5)) == ("center", "center")

    def test_right_center(self):
        assert gaze_classify(gaze(0, h=0.2, v=0.5)) == ("right", "center")

    def test_left_up_down(self):
        assert gaze_classify(gaze(0, h=0.7, v=0.7)) == ("left", "up")
        assert gaze_classify(gaze(0, h=0.35, v=0.35)) == ("right", "down")

    def test_absent_is_none(self):
        assert gaze_classify(gaze(0)) is None


class TestGazeAgreement:
    def test_self_agreement_is_hundred(self):
        rng = np.random.default_rng(8)
        samples = [gaze(f, h=float(rng.uniform(0, 1)), v=float(rng.uniform(0, 1)))
                   if rng.random() < 0.6 else gaze(f)
                   for f in range(200)]
        out = gaze_agreement(samples, list(samples))
        assert out["accuracy"] == 100.0
        assert out["pct_detected"] == out["pct_original_detected"]

    def test_small_faces_all_excluded(self):
        samples = [gaze(f, side=40, h=0.5, v=0.5) for f in range(50)]
        out = gaze_agreement(samples, list(samples))
        assert out["pct_over_threshold"] == 0.0
        assert out["accuracy"] is None
        assert out["pct_detected"] is None

    def test_counted_fixture(self):
        # 100 thresholded frames; both valid on 50; equal on 34 -> 68%
        original, privatized = [], []
        for f in range(100):
            if f < 50:
                original.append(gaze(f, h=0.5, v=0.5))
                if f < 34:
                    privatized.append(gaze(f, h=0.5, v=0.5))       # equal
                else:
                    privatized.append(gaze(f, h=0.1, v=0.5))       # differs
            else:
                original.append(gaze(f))
                privatized.append(gaze(f))
        out = gaze_agreement(original, privatized)
        assert out["compared"] == 50
        assert out["accuracy"] == pytest.approx(68.0)

    def test_validity_floor_excludes_session(self):
        # 5 valid of 100 thresholded = 5% < 10% floor
        original = [gaze(f, h=0.5, v=0.5) if f < 5 else gaze(f) for f in range(100)]
        out = gaze_agreement(original, list(original))
        assert out["excluded"] is True
        assert out["accuracy"] is None

    def test_newly_detected_counted_separately(self):
        original = [gaze(0), gaze(1, h=0.5, v=0.5)]
        privatized = [gaze(0, h=0.5, v=0.5), gaze(1, h=0.5, v=0.5)]
        out = gaze_agreement(original, privatized)
        assert out["newly_detected"] == 1
        assert out["accuracy"] == 100.0

    def test_misaligned_streams_rejected(self):
        with pytest.raises(ValidationError):
            gaze_agreement([gaze(0, h=0.5, v=0.5)], [gaze(1, h=0.5, v=0.5)])

    def test_session_pooling_drops_invalid_sessions(self):
        good = ([gaze(f, h=0.5, v=0.5) for f in range(40)],) * 2
        bad = ([gaze(f) for f in range(40)],) * 2  # 0% valid -> excluded
        out = gaze_agreement_sessions([good, bad])
        assert out["sessions_included"] == 1
        assert out["sessions_excluded"] == 1
        assert out["total_faces"] == 40


def labels(stream, start=0):
    return [ExpressionLabel(frame=start + i, label=l) for i, l in enumerate(stream)]


class TestExpressionAgreement:
    def test_identical_streams(self):
        stream = labels(["Happy", "Sad", "Neutral", "Happy"])
        out = expression_agreement(stream, labels(["Happy", "Sad", "Neutral", "Happy"]))
        assert out["agreement_rate"] == 100.0
        total = sum(sum(row) for row in out["confusion"])
        diag = sum(out["confusion"][i][i] for i in range(7))
        assert total == diag == 4

    def test_disjoint_labels(self):
        out = expression_agreement(labels(["Happy"] * 5), labels(["Sad"] * 5))
        assert out["agreement_rate"] == 0.0

    def test_counted_fixture_40_78(self):
        n = 10000
        agree = 4078
        orig = ["Happy"] * n
        priv = ["Happy"] * agree + ["Sad"] * (n - agree)
        out = expression_agreement(labels(orig), labels(priv))
        assert out["agreement_rate"] == pytest.approx(40.78)

    def test_skipped_frames_counted(self):
        orig = labels(["Happy", "Sad", "Neutral"])
        priv = labels(["Happy", "Sad"])  # frame 2 missing
        out = expression_agreement(orig, priv)
        assert out["compared"] == 2
        assert out["skipped"] == 1

    def test_confusion_rows_sum_to_original_counts(self):
        rng = np.random.default_rng(9)
        orig = [str(rng.choice(EXPRESSION_LABELS)) for _ in range(300)]
        priv = [str(rng.choice(EXPRESSION_LABELS)) for _ in range(300)]
        out = expression_agreement(labels(orig), labels(priv))
        for i, name in enumerate(EXPRESSION_LABELS):
            assert sum(out["confusion"][i]) == orig.count(name)
        assert sum(sum(r) for r in out["confusion"]) == out["compared"]

    def test_distribution_order_alphabetical_ties(self):
        orig = labels(["Happy", "Sad", "Angry"])  # all tie at 1
        out = expression_agreement(orig, orig)
        assert out["distribution_order"]["original"] == ["Angry", "Happy", "Sad"]


def pattern_crops(n_identities=12, size=64, seed=0):
    """Distinct low-frequency patterns, one per identity."""
    rng = np.random.default_rng(seed)
    crops = []
    for i in range(n_identities):
        coarse = rng.integers(0, 256, (4, 4, 3)).astype(float)
        img = np.kron(coarse, np.ones((size // 4, size // 4, 1)))
        img = np.clip(img + rng.normal(0, 4, img.shape), 0, 255).astype(np.uint8)
        crops.append((f"id{i}", img))
    return crops


class TestBlurSweep:
    def test_kernel_one_limit_equals_unblurred(self):
        crops = pattern_crops()
        embedder = PixelEmbedder()
        refs = [EmbeddingRecord(identity=i, image_ref=i, vector=embedder.embed_array(img))
                for i, img in crops]
        # scale tiny enough that ceil((w+h)*s) = 1
        rows = blur_sweep(crops, [1 / 200], embedder, refs)
        assert rows[0]["accuracy"] == 1.0

    def test_failures_count_as_misses(self):
        crops = pattern_crops(n_identities=4)
        embedder = PixelEmbedder()
        refs = [EmbeddingRecord(identity=i, image_ref=i, vector=embedder.embed_array(img))
                for i, img in crops]

        class Flaky:
            def __init__(self):
                self.n = 0

            def embed_array(self, img):
                from facedeid.adapters import AdapterFailure

                self.n += 1
                if self.n % 2 == 0:
                    raise AdapterFailure("flaky")
                return embedder.embed_array(img)

        rows = blur_sweep(crops, [1 / 200], Flaky(), refs)
        assert rows[0]["failures"] == 2
        assert rows[0]["accuracy"] == 0.5


class TestReports:
    def test_empty_report_sections_present(self):
        doc = json.loads(emit_report(EvalReport(condition="original"), "json"))
        assert set(doc) == {"condition", "recognition", "landmarks", "gaze", "expression"}
        assert doc["landmarks"] is None

    def test_json_round_trip(self):
        report = EvalReport(condition="blur:1/5")
        report.recognition["pixel"] = {
            "accuracy": {1: 39.33, 2: 50.85, 5: 65.82, 10: 78.25},
            "ranking": {"median": 2.0, "mean": 6.63, "sd": 8.6},
            "queries": 10, "references": 110,
        }
        doc = json.loads(emit_report(report, "json"))
        again = EvalReport.from_dict(doc)
        assert json.loads(emit_report(again, "json")) == doc

    def test_csv_has_rank_rows(self):
        report = EvalReport(condition="swap")
        report.recognition["arc"] = {
            "accuracy": {1: 18.51, 2: 30.55, 5: 52.34, 10: 73.95},
            "ranking": {"median": 9.0, "mean": 15.72, "sd": 18.7},
        }
        text = emit_report(report, "csv")
        lines = text.strip().splitlines()
        assert lines[0] == "section,subject,metric,value"
        for k in (1, 2, 5, 10):
            assert any(f"accuracy@{k}" in l for l in lines)
        assert any("ranking_median" in l for l in lines)

    def test_recognition_section_percentages(self):
        rng = np.random.default_rng(10)
        refs = [rec(f"id{i % 4}", *rng.normal(size=3)) for i in range(12)]
        queries = [rec(f"id{i % 4}", *rng.normal(size=3)) for i in range(8)]
        sec = recognition_section(queries, refs, ks=(1, 2, 5, 10))
        assert set(sec["accuracy"]) == {1, 2, 5, 10}
        for v in sec["accuracy"].values():
            assert 0.0 <= v <= 100.0


class TestEvalFrameStride:
    def test_every_tenth_by_default(self):
        from facedeid.evaluate import eval_frame_indices

        assert eval_frame_indices(35) == [0, 10, 20, 30]
        assert eval_frame_indices(35, stride=7) == [0, 7, 14, 21, 28]
        with pytest.raises(ValidationError):
            eval_frame_indices(10, stride=0)


class TestBatchLoading:
    def test_embeddings_round_trip(self, tmp_path):
        path = tmp_path / "emb.json"
        path.write_text(json.dumps([
            {"identity": "A", "image_ref": "a1", "vector": [1, 2], "recognizer": "arc"},
            {"identity": "B", "vector": [3, 4]},
        ]))
        out = load_embeddings(path)
        assert out[0].recognizer == "arc"
        assert out[1].identity == "B"
        assert np.array_equal(out[0].vector, [1.0, 2.0])
