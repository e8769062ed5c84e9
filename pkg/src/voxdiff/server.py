"""Minimal HTTP surface for the judging UI.

Endpoints (JSON):
  GET  /api/next-assignment?annotator=TOKEN  pair payload, never the key;
                                             issues a token when absent
  GET  /api/image/<pair_id>                  query image, fetched by the UI
                                             only after the realism vote
  POST /api/vote                             complete vote record, idempotent
                                             per (pair, annotator)
  GET  /api/progress                         anonymous completion counters

Static assets (the UI bundle) are served from an optional directory.
The sealed assignment key file is never opened by this process.
"""
from __future__ import annotations

import json
import mimetypes
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .humaneval import HumanEvalError, PairRecord, VoteRecord, VoteStore
from .toydata import read_image
from .voxel import read_grid

FORBIDDEN_PAYLOAD_FIELDS = ("ours", "assignment", "key")


def _grid_payload(path: str) -> dict:
    grid = read_grid(path)
    occupied = np.argwhere(np.asarray(grid.values) != 0)
    return {"dims": list(grid.dims), "occupied": occupied.tolist()}


def pair_payload(pair: PairRecord, base_dir: Path) -> dict:
    """UI payload: both shapes, no query image, no assignment key."""
    payload = {
        "pair_id": pair.pair_id,
        "category": pair.category,
        "shape_a": _grid_payload(str(base_dir / pair.shape_a)),
        "shape_b": _grid_payload(str(base_dir / pair.shape_b)),
    }
    for field in FORBIDDEN_PAYLOAD_FIELDS:
        assert field not in payload
    return payload


def make_server(
    store: VoteStore,
    pairs: list[PairRecord],
    base_dir,
    static_dir=None,
    host: str = "127.0.0.1",
    port: int = 8765,
) -> ThreadingHTTPServer:
    base = Path(base_dir)
    static = Path(static_dir) if static_dir else None
    pairs_by_id = {p.pair_id: p for p in pairs}

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _json(self, status: int, payload: dict) -> None:
            blob = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/api/next-assignment":
                params = parse_qs(url.query)
                annotator = params.get("annotator", [None])[0] or store.new_annotator()
                pair = store.next_pair(annotator)
                if pair is None:
                    self._json(200, {"annotator": annotator, "done": True, "pair": None})
                    return
                self._json(
                    200,
                    {"annotator": annotator, "done": False, "pair": pair_payload(pair, base)},
                )
                return
            if url.path.startswith("/api/image/"):
                pair_id = url.path.split("/api/image/", 1)[1]
                pair = pairs_by_id.get(pair_id)
                if pair is None:
                    self._json(404, {"error": f"unknown pair {pair_id!r}"})
                    return
                img = read_image(base / pair.query_image)
                self._json(
                    200,
                    {"pair_id": pair_id, "h": img.shape[0], "w": img.shape[1], "pixels": img.tolist()},
                )
                return
            if url.path == "/api/progress":
                self._json(200, store.progress())
                return
            self._serve_static(url.path)

        def _serve_static(self, path: str) -> None:
            if static is None:
                self._json(404, {"error": "not found"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (static / rel).resolve()
            if not str(target).startswith(str(static.resolve())) or not target.is_file():
                self._json(404, {"error": "not found"})
                return
            blob = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/api/vote":
                self._json(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                vote = VoteRecord.from_dict(body)
                status = store.add_vote(vote)
            except (KeyError, ValueError, HumanEvalError) as exc:
                code = 409 if "already-voted" in str(exc) else 400
                self._json(code, {"error": str(exc)})
                return
            self._json(200, {"status": status})

    return ThreadingHTTPServer((host, port), Handler)


def serve(store, pairs, base_dir, static_dir=None, host="127.0.0.1", port=8765):
    server = make_server(store, pairs, base_dir, static_dir, host, port)
    print(f"serving human-eval API on http://{host}:{server.server_address[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
