"""Spin up a real gateway over a synthetic session for the UI tests.

Prints one JSON line {"base","port","session_id"} once the store is
seeded, then serves until killed.
"""

import json
import socket
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from facedeid import engine
from facedeid.core import BoxGeom, DetectionSet, FaceObservation, Provenance
from facedeid.gateway.api import create_app
from facedeid.gateway.store import SessionStore


def main() -> None:
    tmp = Path(tempfile.mkdtemp(prefix="facedeid-ui-"))
    frames = tmp / "frames"
    frames.mkdir()
    frame_count = 30
    track = {}
    x, y = 12.0, 18.0
    for f in range(frame_count):
        box = BoxGeom(int(round(x)), int(round(y)), 50, 50)
        track[f] = box
        arr = np.full((240, 320, 3), 64, np.uint8)
        arr[box.y:box.y + box.h, box.x:box.x + box.w] = (250, 210, 180)
        Image.fromarray(arr).save(frames / f"{f:06d}.png")
        x += 0.9
        y += 0.4

    store = SessionStore(tmp / "store")
    session = store.create_session(frames, fps=60.0)
    observations = {
        f: (FaceObservation(frame=f, box=b, confidence=0.9,
                            provenance=Provenance.DETECTED),)
        for f, b in track.items()
    }
    dense = DetectionSet(session_id=session.manifest.session_id,
                         observations=observations,
                         sampled_frames=tuple(range(frame_count)))
    store.save_session(engine.set_detections(session, dense))

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()

    print(json.dumps({
        "base": f"http://127.0.0.1:{port}",
        "port": port,
        "session_id": session.manifest.session_id,
    }), flush=True)

    import uvicorn

    uvicorn.run(create_app(store), host="127.0.0.1", port=port, log_level="error")


if __name__ == "__main__":
    sys.exit(main())
