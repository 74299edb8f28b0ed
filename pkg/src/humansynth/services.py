"""Clients for the external image-generation and segmentation services.

Wire protocol (HTTP/1.1, JSON bodies, images as base64 PNG):

``POST /v1/generate``
    request  ``{"normal_png", "prompt", "negative_prompt", "steps", "width",
    "height", "control_scale", "seed"}``; response ``{"image_png"}``
``POST /v1/segment``
    request  ``{"image_png", "point": [x, y]}``; response ``{"mask_png"}``
    (grayscale, 0 = background, 255 = foreground)
``POST /v1/text``
    request  ``{"prompt", "seed"}``; response ``{"text"}``

Errors use the envelope ``{"code": str, "message": str}`` with a non-2xx
status. Frames are serialized canonically (sorted keys, no whitespace) so
that encode/decode round-trips byte for byte.

The deterministic mocks (echo, mirror, silhouette) run behind the same
client class through :class:`LocalTransport`, or over HTTP via
:func:`make_server`.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import threading
import time
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests
from PIL import Image

from .rasterizer import mask_png, png_bytes, read_mask_png, read_png

log = logging.getLogger(__name__)


class ServiceError(RuntimeError):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class TransportError(ServiceError):
    pass


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def png_size(data: bytes):
    with Image.open(io.BytesIO(data)) as im:
        return im.size


@dataclass
class GenerateRequest:
    normal_png: bytes
    prompt: str
    negative_prompt: str
    steps: int = 40
    width: int = 768
    height: int = 768
    control_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= float(self.control_scale) <= 1.0:
            raise ValueError(f"control_scale must lie in [0, 1], got {self.control_scale}")
        w, h = png_size(self.normal_png)
        if (w, h) != (self.width, self.height):
            raise ValueError(f"normal image is {w}x{h}, request says {self.width}x{self.height}")

    def encode(self) -> bytes:
        d = asdict(self)
        d["normal_png"] = b64(self.normal_png)
        return canonical(d)

    @classmethod
    def decode(cls, data: bytes) -> "GenerateRequest":
        d = json.loads(data)
        d["normal_png"] = unb64(d["normal_png"])
        return cls(**d)


@dataclass
class SegmentRequest:
    image_png: bytes
    point: tuple

    def validate(self, size=None):
        w, h = size or png_size(self.image_png)
        x, y = self.point
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"point {tuple(self.point)} outside the {w}x{h} image")

    def encode(self) -> bytes:
        return canonical({"image_png": b64(self.image_png), "point": [int(v) for v in self.point]})

    @classmethod
    def decode(cls, data: bytes) -> "SegmentRequest":
        d = json.loads(data)
        return cls(unb64(d["image_png"]), tuple(int(v) for v in d["point"]))


@dataclass
class TextRequest:
    prompt: str
    seed: int = 0

    def encode(self) -> bytes:
        return canonical(asdict(self))

    @classmethod
    def decode(cls, data: bytes) -> "TextRequest":
        return cls(**json.loads(data))


def encode_response(**fields) -> bytes:
    return canonical({k: b64(v) if isinstance(v, bytes) else v for k, v in fields.items()})


def error_envelope(code, message) -> bytes:
    return canonical({"code": code, "message": message})


# --- mocks ----------------------------------------------------------------

def _background(width, height, seed):
    a, b, c = (int(v) for v in np.random.default_rng(seed).integers(1, 7, 3))
    x = np.arange(width, dtype=np.uint16)
    y = np.arange(height, dtype=np.uint16)[:, None]
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[..., 0] = (x * a + y) % 128
    img[..., 1] = (y * b + x) % 128
    img[..., 2] = (x + y * c) % 128
    return img


def echo_image(req: GenerateRequest) -> np.ndarray:
    """Mock image: the condition's foreground painted in the upper half of the
    color range, background in the lower half. The silhouette equals the
    condition's foreground exactly."""
    normal = read_png(req.normal_png)[..., :3]
    fg = (normal != 0).any(axis=2)
    img = _background(req.width, req.height, req.seed)
    img[fg] = 128 + normal[fg] // 2
    return img


class EchoMock:
    name = "echo"

    def generate(self, req: GenerateRequest) -> bytes:
        return png_bytes(echo_image(req))


class MirrorMock:
    """Echo image flipped left-right, imitating a mirrored generation."""
    name = "mirror"

    def generate(self, req: GenerateRequest) -> bytes:
        return png_bytes(np.ascontiguousarray(echo_image(req)[:, ::-1]))


class SilhouetteMock:
    """Segments the mock key: pixels with every channel >= 128 are human.

    A point on a human pixel returns the human mask; a point on the
    background returns the background (the complement).
    """
    name = "silhouette"

    def segment(self, req: SegmentRequest) -> bytes:
        img = read_png(req.image_png)
        human = (img[..., :3] >= 128).all(axis=2)
        x, y = req.point
        out = human if human[y, x] else ~human
        return mask_png(out)


class TextMock:
    name = "text"

    def __init__(self, phrases=("in a sunlit courtyard", "at a busy market", "in a quiet studio")):
        self.phrases = list(phrases)

    def text(self, req: TextRequest) -> str:
        digest = hashlib.sha256(f"{req.prompt}|{req.seed}".encode()).digest()
        return self.phrases[digest[0] % len(self.phrases)]


GENERATORS = {"echo": EchoMock, "mirror": MirrorMock}
SEGMENTERS = {"silhouette": SilhouetteMock}


class ServiceHandler:
    """Server side of the protocol: JSON frame in, (status, JSON frame) out."""

    def __init__(self, generator=None, segmenter=None, texter=None):
        self.generator = generator or EchoMock()
        self.segmenter = segmenter or SilhouetteMock()
        self.texter = texter or TextMock()

    def handle(self, path: str, body: bytes):
        try:
            if path == "/v1/generate":
                req = GenerateRequest.decode(body)
                req.validate()
                return 200, encode_response(image_png=self.generator.generate(req))
            if path == "/v1/segment":
                req = SegmentRequest.decode(body)
                req.validate()
                return 200, encode_response(mask_png=self.segmenter.segment(req))
            if path == "/v1/text":
                return 200, encode_response(text=self.texter.text(TextRequest.decode(body)))
            return 404, error_envelope("not_found", f"no endpoint {path}")
        except (ValueError, KeyError, TypeError) as exc:
            return 400, error_envelope("bad_request", str(exc))
        except Exception as exc:  # reported to the caller, server keeps running
            log.exception("service handler failed")
            return 500, error_envelope("internal", str(exc))


# --- transports -----------------------------------------------------------

class LocalTransport:
    """In-process transport; frames still go through encode/decode."""

    def __init__(self, handler: ServiceHandler):
        self.handler = handler

    def post(self, path, body: bytes):
        return self.handler.handle(path, body)


class HttpTransport:
    def __init__(self, base_url, timeout=60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._local = threading.local()

    def _session(self):
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
        return s

    def post(self, path, body: bytes):
        try:
            r = self._session().post(self.base_url + path, data=body, timeout=self.timeout,
                                     headers={"Content-Type": "application/json"})
        except requests.RequestException as exc:
            raise TransportError("transport", str(exc)) from exc
        return r.status_code, r.content


class ServiceClient:
    """Validating, retrying client shared by mocks and remote services."""

    def __init__(self, transport, retries=2, backoff=0.05, max_in_flight=4):
        self.transport = transport
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _call(self, path, body: bytes) -> dict:
        attempt = 0
        while True:
            try:
                with self._slots:
                    status, payload = self.transport.post(path, body)
                if status >= 500:
                    raise TransportError(f"http_{status}", payload.decode("utf-8", "replace")[:200])
                break
            except TransportError:
                if attempt >= self.retries:
                    raise
                time.sleep(self.backoff * 2 ** attempt)
                attempt += 1
        try:
            data = json.loads(payload)
        except ValueError as exc:
            raise ServiceError("malformed_response", str(exc)) from exc
        if status != 200:
            raise ServiceError(data.get("code", f"http_{status}"), data.get("message", ""))
        return data

    def generate(self, req: GenerateRequest) -> bytes:
        req.validate()
        data = self._call("/v1/generate", req.encode())
        try:
            image = unb64(data["image_png"])
            size = png_size(image)
        except Exception as exc:
            raise ServiceError("malformed_response", f"bad image payload: {exc}") from exc
        if size != (req.width, req.height):
            raise ServiceError("malformed_response", f"image is {size}, expected {(req.width, req.height)}")
        return image

    def segment(self, req: SegmentRequest) -> np.ndarray:
        size = png_size(req.image_png)
        req.validate(size)
        data = self._call("/v1/segment", req.encode())
        try:
            mask = read_mask_png(unb64(data["mask_png"]))
        except Exception as exc:
            raise ServiceError("malformed_response", f"bad mask payload: {exc}") from exc
        if mask.shape != (size[1], size[0]):
            raise ServiceError("size_mismatch", f"mask is {mask.shape[::-1]}, image is {size}")
        return mask

    def text(self, prompt: str, seed: int = 0) -> str:
        data = self._call("/v1/text", TextRequest(prompt, seed).encode())
        return str(data["text"])


def generate(client: ServiceClient, req: GenerateRequest) -> bytes:
    return client.generate(req)


def segment(client: ServiceClient, req: SegmentRequest) -> np.ndarray:
    return client.segment(req)


def mock_client(generator="echo", segmenter="silhouette", **kw) -> ServiceClient:
    handler = ServiceHandler(GENERATORS[generator](), SEGMENTERS[segmenter]())
    return ServiceClient(LocalTransport(handler), **kw)


def make_client(endpoint: str, **kw) -> ServiceClient:
    """``mock:<generator>[+<segmenter>]`` or an ``http(s)://`` base URL."""
    timeout = kw.pop("timeout", 60.0)
    if endpoint.startswith("mock:"):
        gen, _, seg = endpoint[5:].partition("+")
        return mock_client(gen or "echo", seg or "silhouette", **kw)
    if endpoint.startswith(("http://", "https://")):
        return ServiceClient(HttpTransport(endpoint, timeout=timeout), **kw)
    raise ValueError(f"unknown service endpoint {endpoint!r}")


def make_server(host="127.0.0.1", port=0, handler: ServiceHandler | None = None):
    """Threaded HTTP server speaking the protocol; port 0 picks a free port."""
    handler = handler or ServiceHandler()

    class _Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            status, payload = handler.handle(self.path, self.rfile.read(length))
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return ThreadingHTTPServer((host, port), _Handler)
