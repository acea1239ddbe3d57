"""facedeid: end-to-end video face de-identification toolkit.

Sparse face detection with temporal densification, a four-pass
user-in-the-loop annotation engine, blur / face-swap privatization, and
a privacy-utility evaluation harness.  Neural models live behind
external adapter processes; nothing in here runs inference.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    AnnotationSession,
    BoxGeom,
    DetectionSet,
    FaceChain,
    FaceObservation,
    KeyFrameKind,
    KeyFrameMark,
    PresenceRegion,
    Provenance,
    SessionManifest,
    SubjectTag,
    box_center,
    deserialize_session,
    lerp_box,
    serialize_session,
)
