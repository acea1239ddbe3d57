"""Privacy-utility evaluation harness.

Covers rank-K recognition accuracy and identity ranking over embedding
distances, box-normalized landmark displacement with per-feature
breakdowns, nine-class gaze agreement under face-size thresholds,
expression agreement with a 7x7 confusion matrix, blur sweeps, and
report emission.  All metrics are pure functions over adapter-produced
records; no neural inference happens here.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .adapters import AdapterFailure
from .core import BoxGeom, FaceDeidError, ValidationError
from .privatize import BlurSpec, blur_region

EVAL_FRAME_STRIDE = 10  # evaluate every tenth frame by default


def eval_frame_indices(frame_count: int, stride: int = EVAL_FRAME_STRIDE) -> list[int]:
    """Frames the evaluation considers: every ``stride``-th frame."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    return list(range(0, frame_count, stride))

EXPRESSION_LABELS = ("Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral")

# standard 68-point landmark convention, 0-based
EYES_POINTS = tuple(range(36, 48))
NOSE_POINTS = tuple(range(27, 36))
MOUTH_POINTS = tuple(range(48, 68))

RANK_KS = (1, 2, 5, 10)


@dataclass(frozen=True)
class EmbeddingRecord:
    identity: str
    image_ref: str
    vector: np.ndarray
    recognizer: str = "default"

    def __post_init__(self):
        vec = np.asarray(self.vector, np.float64)
        if vec.ndim != 1:
            raise ValidationError(f"embedding vector must be 1-D, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"embedding for {self.image_ref!r} has non-finite values")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class LandmarkSet:
    frame: int
    box: BoxGeom
    points: np.ndarray  # (68, 2) pixel coordinates

    def __post_init__(self):
        pts = np.asarray(self.points, np.float64)
        if pts.shape != (68, 2):
            raise ValidationError(f"landmark set must have exactly 68 points, got {pts.shape}")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GazeSample:
    frame: int
    face_min_side: int
    horizontal_ratio: Optional[float] = None
    vertical_ratio: Optional[float] = None

    def __post_init__(self):
        if (self.horizontal_ratio is None) != (self.vertical_ratio is None):
            raise ValidationError(
                f"frame {self.frame}: gaze ratios must be present together or absent together"
            )


@dataclass(frozen=True)
class ExpressionLabel:
    frame: int
    label: str

    def __post_init__(self):
        if self.label not in EXPRESSION_LABELS:
            raise ValidationError(
                f"unknown expression {self.label!r}; expected one of {EXPRESSION_LABELS}"
            )


# -- recognition ----------------------------------------------------------------


def _embedding_matrix(records: Sequence[EmbeddingRecord]) -> np.ndarray:
    dims = {r.vector.shape[0] for r in records}
    if len(dims) > 1:
        raise ValidationError(f"mixed embedding dimensions: {sorted(dims)}")
    return np.stack([r.vector for r in records])


def _check_recognizers(queries, references) -> None:
    names = {r.recognizer for r in queries} | {r.recognizer for r in references}
    if len(names) > 1:
        raise ValidationError(f"queries and references mix recognizers: {sorted(names)}")


def _distance_matrix(queries, references, metric: str) -> np.ndarray:
    q = _embedding_matrix(queries)
    r = _embedding_matrix(references)
    if q.shape[1] != r.shape[1]:
        raise ValidationError(
            f"dimension mismatch: queries {q.shape[1]} vs references {r.shape[1]}"
        )
    if metric == "euclidean":
        return kernels.pairwise_sq_distances(q, r)
    if metric == "cosine":
        qn = np.linalg.norm(q, axis=1)
        rn = np.linalg.norm(r, axis=1)
        if np.any(qn == 0) or np.any(rn == 0):
            raise ValidationError("cosine distance undefined for zero vectors")
        return 1.0 - (q @ r.T) / np.outer(qn, rn)
    raise ValidationError(f"unknown distance metric {metric!r}")


def _reference_order(queries, references, metric) -> np.ndarray:
    """Per query: reference indices by ascending distance, ties by index."""
    dists = _distance_matrix(queries, references, metric)
    return np.argsort(dists, axis=1, kind="stable")


def rank_k_accuracy(
    queries: Sequence[EmbeddingRecord],
    references: Sequence[EmbeddingRecord],
    k: int,
    metric: str = "euclidean",
) -> float:
    """Fraction of queries whose true identity appears among the K nearest
    reference images."""
    if not references:
        raise ValidationError("reference set is empty")
    if not (1 <= k <= len(references)):
        raise ValidationError(f"K={k} outside [1, {len(references)}]")
    if not queries:
        raise ValidationError("query set is empty")
    _check_recognizers(queries, references)
    order = _reference_order(queries, references, metric)
    ref_ids = [r.identity for r in references]
    hits = 0
    for qi, query in enumerate(queries):
        top = order[qi, :k]
        if any(ref_ids[j] == query.identity for j in top):
            hits += 1
    return hits / len(queries)


def identity_ranking(
    queries: Sequence[EmbeddingRecord],
    references: Sequence[EmbeddingRecord],
    metric: str = "euclidean",
) -> dict:
    """1-based rank of the first true-identity reference per query, with
    median/mean/population-SD aggregates."""
    if not references:
        raise ValidationError("reference set is empty")
    if not queries:
        raise ValidationError("query set is empty")
    _check_recognizers(queries, references)
    ref_ids = [r.identity for r in references]
    available = set(ref_ids)
    missing = sorted({q.identity for q in queries} - available)
    if missing:
        raise ValidationError(f"query identities absent from references: {missing}")
    order = _reference_order(queries, references, metric)
    ranks = []
    for qi, query in enumerate(queries):
        for pos, j in enumerate(order[qi], start=1):
            if ref_ids[j] == query.identity:
                ranks.append(pos)
                break
    return {
        "ranks": ranks,
        "median": float(statistics.median(ranks)),
        "mean": float(statistics.fmean(ranks)),
        "sd": float(statistics.pstdev(ranks)),
    }


# -- landmarks --------------------------------------------------------------------


def _normalized_point_distances(original: LandmarkSet, privatized: LandmarkSet) -> np.ndarray:
    if original.box.w < 1 or original.box.h < 1:
        raise ValidationError("original face box is degenerate")
    dx = (original.points[:, 0] - privatized.points[:, 0]) / original.box.w
    dy = (original.points[:, 1] - privatized.points[:, 1]) / original.box.h
    return np.sqrt(dx * dx + dy * dy)


def landmark_distance(original: LandmarkSet, privatized: LandmarkSet) -> float:
    """Mean box-normalized Euclidean displacement over all 68 points."""
    return float(_normalized_point_distances(original, privatized).mean())


def per_feature_distance(original: LandmarkSet, privatized: LandmarkSet) -> dict:
    """The same displacement averaged over the eye, nose, and mouth subsets."""
    d = _normalized_point_distances(original, privatized)
    return {
        "eyes": float(d[list(EYES_POINTS)].mean()),
        "nose": float(d[list(NOSE_POINTS)].mean()),
        "mouth": float(d[list(MOUTH_POINTS)].mean()),
    }


def landmark_report(pairs: Iterable[tuple[LandmarkSet, LandmarkSet]]) -> dict:
    """Aggregate Eq.-style distances over all compared faces."""
    overall: list[float] = []
    feats: dict[str, list[float]] = {"eyes": [], "nose": [], "mouth": []}
    for orig, priv in pairs:
        overall.append(landmark_distance(orig, priv))
        for name, v in per_feature_distance(orig, priv).items():
            feats[name].append(v)
    if not overall:
        return {"d_norm": None, "eyes": None, "nose": None, "mouth": None, "faces_compared": 0}
    return {
        "d_norm": float(np.mean(overall)),
        "eyes": float(np.mean(feats["eyes"])),
        "nose": float(np.mean(feats["nose"])),
        "mouth": float(np.mean(feats["mouth"])),
        "faces_compared": len(overall),
    }


# -- gaze ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GazeThresholds:
    low: float = 0.35
    high: float = 0.65


GAZE_MIN_FACE_SIDE = 56
GAZE_SESSION_VALIDITY_FLOOR = 0.10


def gaze_classify(sample: GazeSample, thresholds: GazeThresholds = GazeThresholds()) -> Optional[tuple[str, str]]:
    """Nine-class gaze label: {left,center,right} x {up,center,down}."""
    if sample.horizontal_ratio is None:
        return None
    h = sample.horizontal_ratio
    v = sample.vertical_ratio
    horiz = "right" if h <= thresholds.low else ("left" if h >= thresholds.high else "center")
    vert = "down" if v <= thresholds.low else ("up" if v >= thresholds.high else "center")
    return (horiz, vert)


def gaze_agreement(
    original: Sequence[GazeSample],
    privatized: Sequence[GazeSample],
    min_side: int = GAZE_MIN_FACE_SIDE,
    session_validity_floor: float = GAZE_SESSION_VALIDITY_FLOOR,
    thresholds: GazeThresholds = GazeThresholds(),
) -> dict:
    """Gaze detection/agreement for one session's aligned sample streams.

    Frames under the size threshold are excluded; a session whose original
    stream yields valid gaze on fewer than ``session_validity_floor`` of
    the thresholded frames is excluded wholesale.
    """
    if [s.frame for s in original] != [s.frame for s in privatized]:
        raise ValidationError("gaze sample streams are not frame-aligned")
    total = len(original)
    idx = [i for i in range(total) if original[i].face_min_side >= min_side]
    result = {
        "total_faces": total,
        "pct_over_threshold": (100.0 * len(idx) / total) if total else None,
        "pct_original_detected": None,
        "pct_detected": None,
        "accuracy": None,
        "compared": 0,
        "newly_detected": 0,
        "excluded": False,
    }
    if not idx:
        return result

    orig_cls = {i: gaze_classify(original[i], thresholds) for i in idx}
    priv_cls = {i: gaze_classify(privatized[i], thresholds) for i in idx}
    orig_valid = sum(1 for c in orig_cls.values() if c is not None)
    if orig_valid / len(idx) < session_validity_floor:
        result["excluded"] = True
        return result

    priv_valid = sum(1 for c in priv_cls.values() if c is not None)
    both = [i for i in idx if orig_cls[i] is not None and priv_cls[i] is not None]
    equal = sum(1 for i in both if orig_cls[i] == priv_cls[i])
    result["pct_original_detected"] = 100.0 * orig_valid / len(idx)
    result["pct_detected"] = 100.0 * priv_valid / len(idx)
    result["accuracy"] = (100.0 * equal / len(both)) if both else None
    result["compared"] = len(both)
    result["newly_detected"] = sum(
        1 for i in idx if orig_cls[i] is None and priv_cls[i] is not None
    )
    return result


def gaze_agreement_sessions(
    session_pairs: Sequence[tuple[Sequence[GazeSample], Sequence[GazeSample]]],
    min_side: int = GAZE_MIN_FACE_SIDE,
    session_validity_floor: float = GAZE_SESSION_VALIDITY_FLOOR,
    thresholds: GazeThresholds = GazeThresholds(),
) -> dict:
    """Pool gaze metrics across sessions, dropping excluded ones wholesale."""
    kept: list[tuple[Sequence[GazeSample], Sequence[GazeSample]]] = []
    excluded = 0
    for orig, priv in session_pairs:
        per = gaze_agreement(orig, priv, min_side, session_validity_floor, thresholds)
        if per["excluded"]:
            excluded += 1
        else:
            kept.append((orig, priv))
    if not kept:
        return {
            "total_faces": 0, "pct_over_threshold": None, "pct_original_detected": None,
            "pct_detected": None, "accuracy": None, "compared": 0,
            "newly_detected": 0, "excluded": False,
            "sessions_included": 0, "sessions_excluded": excluded,
        }
    pooled = _pool_gaze(kept, min_side, thresholds)
    pooled["sessions_included"] = len(kept)
    pooled["sessions_excluded"] = excluded
    return pooled


def _pool_gaze(kept, min_side, thresholds) -> dict:
    total = thresholded = orig_valid = priv_valid = both = equal = newly = 0
    for orig, priv in kept:
        for o, p in zip(orig, priv):
            total += 1
            if o.face_min_side < min_side:
                continue
            thresholded += 1
            oc = gaze_classify(o, thresholds)
            pc = gaze_classify(p, thresholds)
            if oc is not None:
                orig_valid += 1
            if pc is not None:
                priv_valid += 1
            if oc is not None and pc is not None:
                both += 1
                if oc == pc:
                    equal += 1
            if oc is None and pc is not None:
                newly += 1
    return {
        "total_faces": total,
        "pct_over_threshold": (100.0 * thresholded / total) if total else None,
        "pct_original_detected": (100.0 * orig_valid / thresholded) if thresholded else None,
        "pct_detected": (100.0 * priv_valid / thresholded) if thresholded else None,
        "accuracy": (100.0 * equal / both) if both else None,
        "compared": both,
        "newly_detected": newly,
        "excluded": False,
    }


# -- expression -----------------------------------------------------------------------


def _distribution_order(labels: Iterable[str]) -> list[str]:
    counts = {name: 0 for name in EXPRESSION_LABELS}
    for lbl in labels:
        counts[lbl] += 1
    return sorted((n for n in EXPRESSION_LABELS if counts[n] > 0),
                  key=lambda n: (-counts[n], n))


def expression_agreement(
    original: Sequence[ExpressionLabel],
    privatized: Sequence[ExpressionLabel],
) -> dict:
    """Agreement rate and 7x7 confusion between aligned label streams.

    Frames present in only one stream are skipped and counted.
    """
    orig_by_frame = {l.frame: l.label for l in original}
    priv_by_frame = {l.frame: l.label for l in privatized}
    common = sorted(set(orig_by_frame) & set(priv_by_frame))
    skipped = len(set(orig_by_frame) ^ set(priv_by_frame))

    index = {name: i for i, name in enumerate(EXPRESSION_LABELS)}
    confusion = [[0] * len(EXPRESSION_LABELS) for _ in EXPRESSION_LABELS]
    agree = 0
    for f in common:
        o, p = orig_by_frame[f], priv_by_frame[f]
        confusion[index[o]][index[p]] += 1
        if o == p:
            agree += 1
    return {
        "agreement_rate": (100.0 * agree / len(common)) if common else None,
        "confusion": confusion,
        "labels": list(EXPRESSION_LABELS),
        "compared": len(common),
        "skipped": skipped,
        "distribution_order": {
            "original": _distribution_order(orig_by_frame.values()),
            "privatized": _distribution_order(priv_by_frame.values()),
        },
    }


# -- blur sweep -------------------------------------------------------------------------


def blur_sweep(
    queries: Sequence[tuple[str, np.ndarray]],
    scales: Sequence[float],
    embedder,
    references: Sequence[EmbeddingRecord],
    k: int = 1,
    metric: str = "euclidean",
) -> list[dict]:
    """Rank-K accuracy after blurring the query faces at each scale.

    Queries that fail re-embedding count as misses at every K and are
    reported separately.  Rows are ordered strongest blur first.
    """
    recognizer = references[0].recognizer if references else "default"
    rows = []
    for scale in sorted(scales, reverse=True):
        spec = BlurSpec(scale)
        embedded: list[EmbeddingRecord] = []
        failures = 0
        for qi, (identity, pixels) in enumerate(queries):
            h, w = pixels.shape[:2]
            blurred = blur_region(pixels, BoxGeom(0, 0, w, h), spec)
            try:
                vec = embedder.embed_array(blurred)
            except AdapterFailure:
                failures += 1
                continue
            embedded.append(EmbeddingRecord(
                identity=identity, image_ref=f"query-{qi}", vector=vec,
                recognizer=recognizer,
            ))
        hits = 0
        if embedded:
            hits = rank_k_accuracy(embedded, references, k, metric) * len(embedded)
        accuracy = hits / len(queries) if queries else 0.0
        rows.append({
            "scale": scale,
            "rank": k,
            "accuracy": accuracy,
            "embedded": len(embedded),
            "failures": failures,
        })
    return rows


# -- report -------------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Aggregated metrics for one stimulus condition; empty sections stay
    present but None-marked."""

    condition: str
    recognition: dict = field(default_factory=dict)  # recognizer -> metrics
    landmarks: Optional[dict] = None
    gaze: Optional[dict] = None
    expression: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "recognition": self.recognition,
            "landmarks": self.landmarks,
            "gaze": self.gaze,
            "expression": self.expression,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            condition=d["condition"],
            recognition=d.get("recognition") or {},
            landmarks=d.get("landmarks"),
            gaze=d.get("gaze"),
            expression=d.get("expression"),
        )


def recognition_section(
    queries: Sequence[EmbeddingRecord],
    references: Sequence[EmbeddingRecord],
    ks: Sequence[int] = RANK_KS,
    metric: str = "euclidean",
) -> dict:
    """Accuracy@K (as percentages) plus identity-ranking aggregates.
    K values beyond the reference count are omitted."""
    ranking = identity_ranking(queries, references, metric)
    accuracy = {
        int(k): 100.0 * rank_k_accuracy(queries, references, k, metric)
        for k in ks if 1 <= k <= len(references)
    }
    return {
        "accuracy": accuracy,
        "ranking": {"median": ranking["median"], "mean": ranking["mean"], "sd": ranking["sd"]},
        "queries": len(queries),
        "references": len(references),
    }


def _csv_quote(v) -> str:
    s = "" if v is None else str(v)
    if any(c in s for c in ",\"\n"):
        s = '"' + s.replace('"', '""') + '"'
    return s


def emit_report(report: EvalReport, format: str = "json") -> str:
    """Render a report deterministically as JSON or flat CSV."""
    if format == "json":
        return json.dumps(report.to_dict(), indent=2)
    if format != "csv":
        raise ValidationError(f"unknown report format {format!r}")

    rows: list[tuple[str, str, str, object]] = []
    for name in sorted(report.recognition):
        sec = report.recognition[name]
        for k in sorted(sec.get("accuracy", {})):
            rows.append(("recognition", name, f"accuracy@{k}", sec["accuracy"][k]))
        ranking = sec.get("ranking", {})
        for stat in ("median", "mean", "sd"):
            if stat in ranking:
                rows.append(("recognition", name, f"ranking_{stat}", ranking[stat]))
    lm = report.landmarks or {}
    for key in ("d_norm", "eyes", "nose", "mouth", "faces_compared"):
        rows.append(("landmarks", "", key, lm.get(key)))
    gz = report.gaze or {}
    for key in ("total_faces", "pct_over_threshold", "pct_detected", "accuracy",
                "newly_detected"):
        rows.append(("gaze", "", key, gz.get(key)))
    ex = report.expression or {}
    rows.append(("expression", "", "agreement_rate", ex.get("agreement_rate")))
    rows.append(("expression", "", "compared", ex.get("compared")))
    for cond in ("original", "privatized"):
        order = (ex.get("distribution_order") or {}).get(cond)
        rows.append(("expression", cond, "distribution_order",
                     " ".join(order) if order else None))
    if ex.get("confusion"):
        labels = ex["labels"]
        for i, row_label in enumerate(labels):
            for j, col_label in enumerate(labels):
                rows.append(("expression_confusion", row_label, col_label,
                             ex["confusion"][i][j]))

    lines = ["section,subject,metric,value"]
    lines.extend(",".join(_csv_quote(c) for c in (s, subj, m, v)) for s, subj, m, v in rows)
    return "\n".join(lines) + "\n"


# -- batch file ingestion --------------------------------------------------------------------


def load_embeddings(path: str | Path) -> list[EmbeddingRecord]:
    doc = json.loads(Path(path).read_text())
    return [
        EmbeddingRecord(
            identity=e["identity"],
            image_ref=e.get("image_ref", f"{path}#{i}"),
            vector=np.asarray(e["vector"], np.float64),
            recognizer=e.get("recognizer", "default"),
        )
        for i, e in enumerate(doc)
    ]


def load_landmarks(path: str | Path) -> list[LandmarkSet]:
    doc = json.loads(Path(path).read_text())
    return [
        LandmarkSet(
            frame=int(e["frame"]),
            box=BoxGeom.from_dict(e["box"]),
            points=np.asarray(e["points"], np.float64),
        )
        for e in doc
    ]


def load_gaze(path: str | Path) -> list[GazeSample]:
    doc = json.loads(Path(path).read_text())
    return [
        GazeSample(
            frame=int(e["frame"]),
            face_min_side=int(e["face_min_side"]),
            horizontal_ratio=e.get("horizontal_ratio"),
            vertical_ratio=e.get("vertical_ratio"),
        )
        for e in doc
    ]


def load_expressions(path: str | Path) -> list[ExpressionLabel]:
    doc = json.loads(Path(path).read_text())
    return [ExpressionLabel(frame=int(e["frame"]), label=e["label"]) for e in doc]
