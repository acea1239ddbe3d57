"""Reference adapter processes for testing and offline use.

Run as ``python -m facedeid.stub_adapters <kind> [options]``:

  detect --detections FILE [--garble N]   JSON-lines detector fed from a
                                          batch detections file; --garble
                                          emits an invalid line at frame N
                                          (protocol-violation testing)
  embed [--grid 8]                        pixel-downsample embedder
  landmarks|gaze|expression --data FILE   per-frame analyzer fed from a
                                          JSON file keyed by frame
  identity-swap                           swap adapter echoing its input
  blur-swap [--scale 0.2]                 swap adapter that box-blurs the crop

These deliberately contain no models; they exist so every wire protocol
can be exercised end to end.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def _requests():
    for line in sys.stdin:
        line = line.strip()
        if line:
            yield json.loads(line)


def run_detect(args) -> None:
    by_frame: dict[int, list] = {}
    if args.detections:
        for entry in json.loads(open(args.detections).read()):
            by_frame[int(entry["frame_index"])] = entry.get("boxes", [])
    for req in _requests():
        frame = int(req["frame_index"])
        if args.garble is not None and frame == args.garble:
            sys.stdout.write("not json at all\n")
            sys.stdout.flush()
            continue
        _emit({"frame_index": frame, "boxes": by_frame.get(frame, [])})


def run_embed(args) -> None:
    from .adapters import PixelEmbedder, load_image

    embedder = PixelEmbedder(grid=args.grid)
    _emit({"dim": embedder.dim})
    for req in _requests():
        rid = req.get("id")
        try:
            vec = embedder.embed_array(load_image(req["image_path"]))
        except OSError as exc:
            _emit({"id": rid, "error": str(exc)})
            continue
        _emit({"id": rid, "vector": [float(v) for v in vec]})


def run_analyzer(op: str, args) -> None:
    data = json.loads(open(args.data).read())
    by_frame = {int(e["frame"]): e for e in data}
    _emit({"op": op, "source": args.data})
    for req in _requests():
        frame = int(req["frame_index"])
        payload = dict(by_frame.get(frame, {}))
        payload["frame_index"] = frame
        payload.pop("frame", None)
        _emit(payload)


def _read_exact(n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sys.stdin.buffer.read(n - len(buf))
        if not chunk:
            raise EOFError("stdin closed mid-message")
        buf += chunk
    return buf


def run_swap(args, blur_scale: float | None) -> None:
    stdout = sys.stdout.buffer
    while True:
        header = sys.stdin.buffer.readline()
        if not header:
            return
        req = json.loads(header)
        w, h = int(req["width"]), int(req["height"])
        pixels = np.frombuffer(_read_exact(w * h * 3), np.uint8).reshape(h, w, 3)
        if blur_scale is not None:
            from .core import BoxGeom
            from .privatize import BlurSpec, blur_region

            pixels = blur_region(pixels, BoxGeom(0, 0, w, h), BlurSpec(blur_scale))
        mask = np.full((h, w), 255, np.uint8)
        stdout.write((json.dumps({"frame_index": req["frame_index"],
                                  "width": w, "height": h}) + "\n").encode())
        stdout.write(pixels.tobytes())
        stdout.write(mask.tobytes())
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="facedeid.stub_adapters")
    sub = parser.add_subparsers(dest="kind", required=True)

    p = sub.add_parser("detect")
    p.add_argument("--detections", default=None)
    p.add_argument("--garble", type=int, default=None)

    p = sub.add_parser("embed")
    p.add_argument("--grid", type=int, default=8)

    for op in ("landmarks", "gaze", "expression"):
        p = sub.add_parser(op)
        p.add_argument("--data", required=True)

    sub.add_parser("identity-swap")
    p = sub.add_parser("blur-swap")
    p.add_argument("--scale", type=float, default=0.2)

    args = parser.parse_args(argv)
    if args.kind == "detect":
        run_detect(args)
    elif args.kind == "embed":
        run_embed(args)
    elif args.kind in ("landmarks", "gaze", "expression"):
        run_analyzer(args.kind, args)
    elif args.kind == "identity-swap":
        run_swap(args, blur_scale=None)
    elif args.kind == "blur-swap":
        run_swap(args, blur_scale=args.scale)
    return 0


if __name__ == "__main__":
    sys.exit(main())
