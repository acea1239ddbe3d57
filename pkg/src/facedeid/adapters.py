"""Clients for external model adapters.

Detector, embedding, landmark, gaze, and expression adapters speak
line-delimited JSON over the child process's stdin/stdout; the face-swap
adapter uses a JSON header line followed by raw pixel payloads.  Batch
variants read pre-computed JSON files so offline models can plug in
without a live process.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import threading
from pathlib import Path

import numpy as np
from PIL import Image

from .core import FaceDeidError


class ProtocolError(FaceDeidError):
    """The adapter violated its wire protocol; fatal for the run."""


class AdapterFailure(FaceDeidError):
    """A single adapter request failed; callers may fall back per policy."""


def load_image(path: str | Path) -> np.ndarray:
    """Load a frame or crop as HxWx3 uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(path)


class JsonLinesProcess:
    """One adapter child process; requests are serialized by an internal lock."""

    def __init__(self, cmd: list[str], expect_handshake: bool = False):
        self.cmd = cmd
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self.handshake: dict | None = None
        if expect_handshake:
            line = self._proc.stdout.readline()
            if not line:
                raise ProtocolError(f"adapter {cmd!r} exited before its handshake line")
            try:
                self.handshake = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"adapter handshake is not JSON: {line!r}") from exc

    def request(self, obj: dict, context: str = "") -> dict:
        with self._lock:
            try:
                self._proc.stdin.write(json.dumps(obj) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolError(f"adapter pipe broke {context}: {exc}") from exc
        if not line:
            raise ProtocolError(f"adapter closed its stdout {context}")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"adapter response is not JSON {context}: {line!r}") from exc

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- face detection ------------------------------------------------------------


class SubprocessDetector:
    """Live detector adapter.

    Request:  {"op":"detect","frame_index":N,"frame_path":"..."}
    Response: {"frame_index":N,"boxes":[{"x":..,"y":..,"w":..,"h":..,"confidence":..}]}

    The echoed frame_index is authoritative for which frame the boxes
    belong to.
    """

    def __init__(self, cmd: list[str]):
        self._proc = JsonLinesProcess(cmd)

    def detect(self, frame_index: int, frame_path: str) -> tuple[int, list[dict]]:
        ctx = f"at frame {frame_index}"
        resp = self._proc.request(
            {"op": "detect", "frame_index": frame_index, "frame_path": frame_path}, ctx
        )
        if "frame_index" not in resp or "boxes" not in resp:
            raise ProtocolError(f"detector response missing frame_index/boxes {ctx}: {resp}")
        boxes = resp["boxes"]
        if not isinstance(boxes, list):
            raise ProtocolError(f"detector 'boxes' is not a list {ctx}")
        return int(resp["frame_index"]), boxes

    def close(self):
        self._proc.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BatchFileDetector:
    """Offline detector: a JSON file of pre-computed responses.

    The file is a list of {"frame_index": N, "boxes": [...]} objects with
    the same box schema as the live protocol.
    """

    def __init__(self, path: str | Path):
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, list):
            raise ProtocolError(f"batch detections file {path} must be a JSON list")
        self.by_frame: dict[int, list[dict]] = {}
        for entry in doc:
            self.by_frame[int(entry["frame_index"])] = list(entry.get("boxes", []))

    def detect(self, frame_index: int, frame_path: str) -> tuple[int, list[dict]]:
        return frame_index, self.by_frame.get(frame_index, [])

    def close(self):
        pass


class CallableDetector:
    """In-process detector backed by a plain function (used in tests/synthetics)."""

    def __init__(self, fn):
        self.fn = fn

    def detect(self, frame_index: int, frame_path: str) -> tuple[int, list[dict]]:
        return frame_index, self.fn(frame_index, frame_path)

    def close(self):
        pass


# -- embeddings ----------------------------------------------------------------


class PixelEmbedder:
    """Trivial recognizer stand-in: grayscale mean-pooled pixel grid.

    Useful for protocol tests and blur-sweep fixtures; it is emphatically
    not a face recognizer.
    """

    name = "pixel"

    def __init__(self, grid: int = 8):
        self.grid = grid
        self.dim = grid * grid

    def embed_array(self, pixels: np.ndarray) -> np.ndarray:
        if pixels.ndim == 3:
            gray = pixels.astype(np.float64).mean(axis=2)
        else:
            gray = pixels.astype(np.float64)
        h, w = gray.shape
        g = self.grid
        ys = np.linspace(0, h, g + 1).astype(int)
        xs = np.linspace(0, w, g + 1).astype(int)
        out = np.empty(g * g, np.float64)
        for i in range(g):
            for j in range(g):
                cell = gray[ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)]
                out[i * g + j] = cell.mean()
        return out

    def embed_path(self, path: str | Path) -> np.ndarray:
        return self.embed_array(load_image(path))

    def close(self):
        pass


class SubprocessEmbedder:
    """Live embedding adapter.

    Handshake: {"dim": D}
    Request:   {"op":"embed","id":K,"image_path":"..."}
    Response:  {"id":K,"vector":[...]}
    """

    def __init__(self, cmd: list[str], name: str = "adapter"):
        self._proc = JsonLinesProcess(cmd, expect_handshake=True)
        self.name = name
        hs = self._proc.handshake or {}
        if "dim" not in hs:
            raise ProtocolError(f"embedder handshake missing 'dim': {hs}")
        self.dim = int(hs["dim"])
        self._counter = 0
        self._tmp = tempfile.TemporaryDirectory(prefix="facedeid-embed-")

    def embed_path(self, path: str | Path) -> np.ndarray:
        self._counter += 1
        rid = self._counter
        resp = self._proc.request(
            {"op": "embed", "id": rid, "image_path": str(path)}, f"for request {rid}"
        )
        if resp.get("error"):
            raise AdapterFailure(f"embed failed for {path}: {resp['error']}")
        vec = np.asarray(resp.get("vector", ()), np.float64)
        if vec.shape != (self.dim,):
            raise ProtocolError(
                f"embedder returned vector of shape {vec.shape}, declared dim {self.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise AdapterFailure(f"embedder returned non-finite vector for {path}")
        return vec

    def embed_array(self, pixels: np.ndarray) -> np.ndarray:
        self._counter += 1
        path = Path(self._tmp.name) / f"crop_{self._counter}.png"
        save_image(path, pixels)
        try:
            return self.embed_path(path)
        finally:
            path.unlink(missing_ok=True)

    def close(self):
        self._proc.close()
        self._tmp.cleanup()


# -- per-frame analyzers (landmarks / gaze / expression) ------------------------


class SubprocessAnalyzer:
    """Live adapter for the per-frame analysis ops.

    Handshake declares the payload schema; requests follow the detector
    pattern with op in {"landmarks","gaze","expression"}.
    """

    def __init__(self, cmd: list[str], op: str):
        if op not in ("landmarks", "gaze", "expression"):
            raise ValueError(f"unsupported analyzer op {op!r}")
        self.op = op
        self._proc = JsonLinesProcess(cmd, expect_handshake=True)
        self.schema = self._proc.handshake

    def analyze(self, frame_index: int, frame_path: str) -> dict:
        ctx = f"at frame {frame_index}"
        resp = self._proc.request(
            {"op": self.op, "frame_index": frame_index, "frame_path": frame_path}, ctx
        )
        if "frame_index" not in resp:
            raise ProtocolError(f"{self.op} response missing frame_index {ctx}")
        return resp

    def close(self):
        self._proc.close()


# -- face swap -------------------------------------------------------------------


class SwapAdapterClient:
    """Face-swap adapter over binary pipes.

    Request:  header line {"op":"swap","frame_index":N,"width":W,"height":H}
              followed by W*H*3 raw RGB bytes.
    Response: header {"frame_index":N,"width":W,"height":H} followed by
              W*H*3 swapped bytes and W*H mask bytes (0..255 -> [0,1]).
    """

    def __init__(self, cmd: list[str]):
        self.cmd = cmd
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def _read_exact(self, n: int, ctx: str) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self._proc.stdout.read(remaining)
            if not chunk:
                raise ProtocolError(f"swap adapter stream ended early {ctx}")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def swap(self, frame_index: int, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (swapped uint8 HxWx3, mask float64 HxW in [0,1])."""
        if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError("swap input must be HxWx3 uint8")
        h, w = pixels.shape[:2]
        header = json.dumps({"op": "swap", "frame_index": frame_index, "width": w, "height": h})
        ctx = f"at frame {frame_index}"
        with self._lock:
            try:
                self._proc.stdin.write(header.encode() + b"\n")
                self._proc.stdin.write(pixels.tobytes())
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolError(f"swap adapter pipe broke {ctx}: {exc}") from exc
            if not line:
                raise ProtocolError(f"swap adapter closed its stdout {ctx}")
            try:
                resp = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"swap header is not JSON {ctx}: {line!r}") from exc
            if int(resp.get("width", -1)) != w or int(resp.get("height", -1)) != h:
                raise ProtocolError(
                    f"swap adapter returned {resp.get('width')}x{resp.get('height')}, "
                    f"expected {w}x{h} {ctx}"
                )
            body = self._read_exact(w * h * 3, ctx)
            mask_raw = self._read_exact(w * h, ctx)
        swapped = np.frombuffer(body, np.uint8).reshape(h, w, 3)
        mask = np.frombuffer(mask_raw, np.uint8).reshape(h, w).astype(np.float64) / 255.0
        return swapped, mask

    def close(self):
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
