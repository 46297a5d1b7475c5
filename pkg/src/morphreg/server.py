"""Read-only HTTP endpoint over a run bundle for the front explorer UI.

Endpoints (all JSON unless asked for PNG):
  GET  /api/meta                                   manifest
  GET  /api/front?stage=i                          front table rows
  GET  /api/solution/{id}/slice?kind=source|target|transformed&z=k[&format=png]
  GET  /api/solution/{id}/dvf?z=k                  per-voxel mm displacements
  GET  /api/solution/{id}/metrics                  Dice + guidance error
  POST /api/select {"id": ...}                     persist the chosen solution
"""

from __future__ import annotations

import base64
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .bundle import RunBundle
from .driver import render_solution, solution_metrics
from .volume import save_volume


class _BundleState:
    """Lazily rendered per-solution volumes shared by request handlers."""

    def __init__(self, bundle: RunBundle):
        self.bundle = bundle
        self.problem = bundle.load_problem()
        self._rendered: dict[str, tuple] = {}
        self._metrics: dict[str, dict] = {}
        self._lock = threading.Lock()

    def rendered(self, sid: str):
        with self._lock:
            if sid not in self._rendered:
                solution = self.bundle.load_solution(sid, self.problem)
                self._rendered[sid] = render_solution(solution, self.problem)
            return self._rendered[sid]

    def metrics(self, sid: str) -> dict:
        with self._lock:
            if sid not in self._metrics:
                solution = self.bundle.load_solution(sid, self.problem)
                self._metrics[sid] = solution_metrics(solution, self.problem)
            return self._metrics[sid]


class _Handler(BaseHTTPRequestHandler):
    state: _BundleState = None

    def log_message(self, fmt, *args):
        pass

    def _send(self, code: int, payload, content_type="application/json"):
        if isinstance(payload, (dict, list)):
            body = json.dumps(payload).encode()
        elif isinstance(payload, str):
            body = payload.encode()
        else:
            body = payload
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str):
        self._send(code, {"error": message})

    def do_OPTIONS(self):
        self._send(204, b"")

    def do_GET(self):
        try:
            self._route_get()
        except KeyError as e:
            self._error(404, str(e))
        except (ValueError, IndexError) as e:
            self._error(400, str(e))

    def _route_get(self):
        url = urlparse(self.path)
        query = {k: v[0] for k, v in parse_qs(url.query).items()}
        parts = [p for p in url.path.split("/") if p]
        state = self.state
        if parts == ["api", "meta"]:
            manifest = dict(state.bundle.manifest)
            manifest["selected"] = state.bundle.read_selection()
            manifest["dims"] = [int(d) for d in state.problem.dims]
            manifest["spacing"] = [float(s) for s in state.problem.spacing]
            self._send(200, manifest)
            return
        if parts == ["api", "front"]:
            stage = int(query.get("stage", "1"))
            rows = state.bundle.front_rows(stage)
            self._send(200, rows)
            return
        if len(parts) == 4 and parts[:2] == ["api", "solution"]:
            sid = parts[2]
            state.bundle.find_record(sid)
            if parts[3] == "slice":
                self._slice(sid, query)
                return
            if parts[3] == "dvf":
                self._dvf(sid, query)
                return
            if parts[3] == "metrics":
                self._send(200, state.metrics(sid))
                return
        self._error(404, f"no such endpoint: {url.path}")

    def _volume_for(self, sid: str, kind: str):
        state = self.state
        if kind == "source":
            return state.problem.source
        if kind == "target":
            return state.problem.target
        if kind == "transformed":
            return state.rendered(sid)[0]
        raise ValueError(f"unknown slice kind {kind!r}")

    def _slice(self, sid: str, query):
        kind = query.get("kind", "transformed")
        vol = self._volume_for(sid, kind)
        nz = vol.dims[2]
        z = int(query["z"]) if "z" in query else nz // 2
        if not 0 <= z < nz:
            raise ValueError(f"z={z} outside [0, {nz})")
        rows = vol.slice_z(z)
        if query.get("format") == "png":
            from PIL import Image

            img = Image.fromarray(
                np.clip(np.rint(rows * 255.0), 0, 255).astype(np.uint8), mode="L"
            )
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            self._send(
                200,
                {
                    "kind": kind, "z": z,
                    "width": int(rows.shape[1]), "height": int(rows.shape[0]),
                    "png_base64": base64.b64encode(buf.getvalue()).decode(),
                },
            )
            return
        self._send(
            200,
            {
                "kind": kind, "z": z,
                "width": int(rows.shape[1]), "height": int(rows.shape[0]),
                "rows": [[round(float(v), 6) for v in r] for r in rows],
            },
        )

    def _dvf(self, sid: str, query):
        state = self.state
        dvf = state.rendered(sid)[2]
        nz = dvf.shape[2]
        z = int(query["z"]) if "z" in query else nz // 2
        if not 0 <= z < nz:
            raise ValueError(f"z={z} outside [0, {nz})")
        plane = dvf[:, :, z, :]  # (nx, ny, 3)
        vectors = [
            [[round(float(c), 5) for c in plane[x, y]] for x in range(plane.shape[0])]
            for y in range(plane.shape[1])
        ]
        self._send(
            200,
            {
                "z": z,
                "width": int(plane.shape[0]), "height": int(plane.shape[1]),
                "spacing": [float(s) for s in state.problem.spacing],
                "vectors": vectors,
            },
        )

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if parts != ["api", "select"]:
            self._error(404, f"no such endpoint: {url.path}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            sid = payload["id"]
            state = self.state
            state.bundle.find_record(sid)
            metrics = state.metrics(sid)
            problem = state.problem
            tsrc, ttgt, _ = state.rendered(sid)
            import os

            out = os.path.join(state.bundle.path, "selected")
            os.makedirs(out, exist_ok=True)
            save_volume(tsrc, os.path.join(out, "transformed_source.mha"))
            save_volume(ttgt, os.path.join(out, "transformed_target.mha"))
            selection = {"id": sid, "metrics": metrics}
            state.bundle.write_selection(selection)
            self._send(200, selection)
        except KeyError as e:
            self._error(404, str(e))
        except (ValueError, json.JSONDecodeError) as e:
            self._error(400, str(e))


def serve_bundle(bundle_dir, port: int = 8832) -> ThreadingHTTPServer:
    """Bind the bundle server; callers run ``serve_forever`` themselves."""
    bundle = RunBundle.open(bundle_dir)
    state = _BundleState(bundle)
    handler = type("BoundHandler", (_Handler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    return server
