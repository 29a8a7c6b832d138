"""Live session service.

HTTP + JSON control plane over running dream sessions, with frames
delivered as a server-sent event stream of base64 PNGs. One worker
thread per session advances iterations; control requests only read
immutable snapshots or enqueue patches, so they never block the loop.

Endpoints:
    POST  /sessions                   start a session
    PATCH /sessions/{id}              live-patch the active config
    GET   /sessions/{id}/frames       SSE stream (?since=, ?stride=)
    GET   /capabilities               layers, modes, slider ranges
    GET   /runs                       completed-run index
"""

from __future__ import annotations

import base64
import json
import secrets
import threading
import time
from dataclasses import asdict
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse

from .dream import PATCHABLE_FIELDS, DreamSession, LossMode, config_from_dict, config_to_dict, schedule_from_json
from .errors import DreamhoneError
from .imageio import image_from_bytes, png_bytes
from .network import Network
from .runstore import RunRecord, RunStore, sha256_hex, utc_timestamp
from .tensor_core import Tensor

__all__ = ["create_app"]

_POST_FIELDS = {
    "schedule",
    "config",
    "source_b64",
    "source_path",
    "guide_b64",
    "guide_path",
    "frame_interval_ms",
}

# advertised slider bounds; the engine itself only enforces the weaker
# invariants on DreamConfig (step_size > 0, jitter >= 0, blend in [0,1])
_FIELD_RANGES = {
    "step_size": {"type": "float", "min": 0.001, "max": 0.5, "step": 0.001},
    "guide_blend": {"type": "float", "min": 0.0, "max": 1.0, "step": 0.01},
    "jitter": {"type": "int", "min": 0, "max": 8, "step": 1},
    "patch_size": {"type": "int", "min": 1, "max": 8, "step": 1},
    "seed": {"type": "int", "min": 0, "max": 2**31 - 1, "step": 1},
}


class _LiveSession:
    """Book-keeping around one DreamSession and its frame history."""

    def __init__(
        self,
        session_id: str,
        session: DreamSession,
        run_id: str,
        config: dict,
        input_hashes: dict,
    ):
        self.id = session_id
        self.session = session
        self.run_id = run_id
        self.config = config
        self.input_hashes = input_hashes
        self.total = session.total_iterations
        self.frames: list = []  # dicts: iteration, loss, phase, png
        self.lock = threading.Lock()
        self.done = False
        self.error: Optional[str] = None

    def append_frame(self, iteration: int, loss: float, canvas: Tensor, phase: int):
        frame = {
            "iteration": int(iteration),
            "loss": float(loss),
            "phase": int(phase),
            "png": png_bytes(canvas),
        }
        with self.lock:
            self.frames.append(frame)

    def finish(self, error: Optional[str] = None):
        with self.lock:
            self.error = error
            self.done = True


def _decode_input(payload: dict, name: str, required: bool):
    """Resolve <name>_b64 / <name>_path into (raw bytes, tensor)."""
    b64 = payload.get(f"{name}_b64")
    path = payload.get(f"{name}_path")
    if b64 is not None and path is not None:
        raise HTTPException(400, f"give {name}_b64 or {name}_path, not both")
    if b64 is None and path is None:
        if required:
            raise HTTPException(400, f"missing {name}_b64 or {name}_path")
        return None, None
    try:
        if b64 is not None:
            raw = base64.b64decode(b64, validate=True)
        else:
            raw = open(path, "rb").read()
    except (ValueError, OSError) as e:
        raise HTTPException(400, f"cannot read {name}: {e}") from None
    try:
        return raw, image_from_bytes(raw)
    except DreamhoneError as e:
        raise HTTPException(400, str(e)) from None


def _parse_schedule(payload: dict) -> list:
    has_schedule = "schedule" in payload
    has_config = "config" in payload
    if has_schedule == has_config:
        raise HTTPException(400, "give exactly one of 'schedule' or 'config'")
    try:
        if has_schedule:
            return schedule_from_json(payload["schedule"])
        cfg = payload["config"]
        if not isinstance(cfg, dict):
            raise HTTPException(400, "'config' must be an object")
        return [config_from_dict(cfg)]
    except DreamhoneError as e:
        raise HTTPException(400, str(e)) from None


def _session_worker(live: _LiveSession, store: RunStore, interval_s: float, created_at: str):
    sess = live.session
    try:
        live.append_frame(0, sess.initial_loss(), sess.canvas, sess.phase_index)
        while not sess.finished:
            if interval_s > 0:
                time.sleep(interval_s)
            iteration, loss, snapshot, phase = sess.step_once()
            live.append_frame(iteration, loss, snapshot, phase)
        _persist(live, store, created_at)
    except Exception as e:  # surfaced to the stream as an error event
        live.finish(error=f"{type(e).__name__}: {e}")
        return
    live.finish()


def _persist(live: _LiveSession, store: RunStore, created_at: str):
    run_dir = store.run_dir(live.run_id)
    final_png = live.frames[-1]["png"]
    (run_dir / "final.png").write_bytes(final_png)
    rows = [(f["iteration"], f["loss"], f["phase"]) for f in live.frames]
    trajectory = store.write_trajectory(live.run_id, rows)
    record = RunRecord(
        run_id=live.run_id,
        kind="session",
        config=live.config,
        input_hashes=live.input_hashes,
        outputs={"final_png": f"{live.run_id}/final.png", "final_png_sha256": sha256_hex(final_png)},
        trajectory=trajectory,
        created_at=created_at,
        finished_at=utc_timestamp(),
    )
    store.finalize(record)


def _sse(event: str, payload: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(payload, sort_keys=True)}\n\n"


def create_app(net: Network, data_dir=None) -> FastAPI:
    app = FastAPI(title="dreamhone service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = RunStore(data_dir)
    sessions: dict = {}
    sessions_lock = threading.Lock()

    @app.post("/sessions")
    def create_session(payload: dict):
        unknown = set(payload) - _POST_FIELDS
        if unknown:
            raise HTTPException(400, f"unknown fields {sorted(unknown)}")
        schedule = _parse_schedule(payload)
        source_raw, source = _decode_input(payload, "source", required=True)
        guide_raw, guide = _decode_input(payload, "guide", required=False)
        interval_ms = payload.get("frame_interval_ms", 0)
        if not isinstance(interval_ms, (int, float)) or interval_ms < 0:
            raise HTTPException(400, f"frame_interval_ms must be >= 0, got {interval_ms!r}")
        try:
            session = DreamSession(net, source, guide, schedule)
        except DreamhoneError as e:
            raise HTTPException(400, str(e)) from None

        run_id, run_dir, created_at = store.create_run("session")
        config = {
            "schedule": [config_to_dict(c) for c in schedule],
            "frame_interval_ms": interval_ms,
        }
        (run_dir / "config.json").write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
        input_hashes = {"source.png": store.write_input(run_id, "source.png", source_raw)}
        if guide_raw is not None:
            input_hashes["guide.png"] = store.write_input(run_id, "guide.png", guide_raw)

        session_id = secrets.token_hex(8)
        live = _LiveSession(session_id, session, run_id, config, input_hashes)
        with sessions_lock:
            sessions[session_id] = live
        thread = threading.Thread(
            target=_session_worker,
            args=(live, store, interval_ms / 1000.0, created_at),
            daemon=True,
        )
        thread.start()
        return {
            "session_id": session_id,
            "run_id": run_id,
            "total_iterations": live.total,
        }

    def _get_live(session_id: str) -> _LiveSession:
        with sessions_lock:
            live = sessions.get(session_id)
        if live is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return live

    @app.patch("/sessions/{session_id}")
    def patch_session(session_id: str, patch: dict):
        live = _get_live(session_id)
        try:
            applied_at = live.session.apply_live_patch(patch)
        except DreamhoneError as e:
            status = 409 if "finished" in str(e) else 400
            raise HTTPException(status, str(e)) from None
        return {"applied_at": applied_at}

    @app.get("/sessions/{session_id}/frames")
    def stream_frames(session_id: str, since: int = -1, stride: int = 1):
        live = _get_live(session_id)
        if stride < 1:
            raise HTTPException(400, f"stride must be >= 1, got {stride}")

        def generate():
            cursor = 0
            while True:
                with live.lock:
                    chunk = live.frames[cursor:]
                    finished = live.done
                cursor += len(chunk)
                for frame in chunk:
                    it = frame["iteration"]
                    if it <= since:
                        continue
                    # decimation keeps multiples of stride plus the final frame
                    if it % stride != 0 and it != live.total:
                        continue
                    yield _sse(
                        "frame",
                        {
                            "iteration": it,
                            "loss": frame["loss"],
                            "phase": frame["phase"],
                            "png_b64": base64.b64encode(frame["png"]).decode("ascii"),
                        },
                    )
                if finished:
                    break
                if not chunk:
                    time.sleep(0.005)
            if live.error is not None:
                yield _sse("error", {"message": live.error})
            else:
                yield _sse("done", {"total_iterations": live.total, "run_id": live.run_id})

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/capabilities")
    def capabilities():
        layers = [
            spec.name for spec in net.layers if len(net.output_dims_at(spec.name)) == 3
        ]
        return {
            "layers": layers,
            "modes": [m.value for m in LossMode],
            "patchable_fields": sorted(PATCHABLE_FIELDS),
            "ranges": _FIELD_RANGES,
            "input_dims": list(net.input_dims),
        }

    @app.get("/runs")
    def list_runs():
        return {"runs": [asdict(r) for r in store.list_runs()]}

    return app
