"""Local HTTP service backing the annotation / inspection UI.

JSON over a local socket.  Endpoints (all under /api):

    POST /api/sessions                      create session {task, split, seed}
    GET  /api/sessions/<id>/observation     current frame, instruction, score
    POST /api/sessions/<id>/pick            {u, v, rot}
    POST /api/sessions/<id>/place           {u, v, rot}  -> applies the action
    POST /api/sessions/<id>/finish          persist episode (source: human)
    GET  /api/sessions/<id>/overlay?checkpoint=&head=pick|place[&u=&v=&rot=&slice=]
    GET  /api/checkpoints                   available checkpoint ids
    GET  /api/meta                          task catalog and schema info

Observations ship as base64 PNG (color) plus base64 zlib float32 (height).
Mutating requests are serialized per session; overlays are read-only.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from . import dataset, simulator, tasks
from .geometry import Observation, PixelAction, PixelPose
from .model import select_action, AffordanceMaps
from .training import load_checkpoint

SCHEMA_VERSION = 1
PICK_ROTATIONS = 1


class ProtocolError(Exception):
    """Client drove the annotation flow out of order."""

    def __init__(self, message, status=409):
        super().__init__(message)
        self.status = status


class ValidationError(Exception):
    def __init__(self, message, status=400):
        super().__init__(message)
        self.status = status


def encode_observation(obs: Observation) -> dict:
    png = io.BytesIO()
    Image.fromarray(dataset.color_to_u8(obs.color)).save(png, format="PNG")
    height = obs.height.astype(np.float32)
    return {
        "schema_version": SCHEMA_VERSION,
        "color_png_b64": base64.b64encode(png.getvalue()).decode(),
        "height_zlib_b64": base64.b64encode(zlib.compress(height.tobytes())).decode(),
        "shape": [obs.frame.height, obs.frame.width],
        "frame": obs.frame.to_dict(),
    }


@dataclass
class Session:
    session_id: str
    task_name: str
    split: str
    seed: int
    state: object
    goal: object
    obs: Observation
    records: list = field(default_factory=list)
    pending_pick: PixelPose | None = None
    finished: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def task(self):
        return tasks.get_task(self.task_name)


class AnnotationService:
    """Session registry plus request handlers; transport-agnostic core."""

    def __init__(self, data_out: Path | str = "human_data",
                 checkpoint_dir: Path | str | None = None):
        self.data_out = Path(data_out)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._models: dict[str, object] = {}
        self._models_lock = threading.Lock()

    # -- sessions -----------------------------------------------------------
    def create_session(self, task_name: str, split: str, seed: int) -> dict:
        if task_name not in tasks.TASK_NAMES:
            raise ValidationError(f"unknown task {task_name!r}")
        state, obs, goal = simulator.reset(task_name, split, seed)
        session = Session(session_id=uuid.uuid4().hex[:12], task_name=task_name,
                          split=split, seed=seed, state=state, goal=goal, obs=obs)
        with self._registry_lock:
            self.sessions[session.session_id] = session
        return self._observation_payload(session, session_id=session.session_id)

    def _get(self, session_id: str) -> Session:
        with self._registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ValidationError(f"unknown session {session_id!r}", status=404)
        return session

    def _observation_payload(self, session: Session, **extra) -> dict:
        task = session.task
        frame = session.obs.frame
        payload = {
            "schema_version": SCHEMA_VERSION,
            "observation": encode_observation(session.obs),
            "instruction": task.instruction(session.goal),
            "score": task.score(session.state, session.goal, frame),
            "steps": session.state.steps,
            "done": task.is_complete(session.state, session.goal, frame),
            "k_pick": PICK_ROTATIONS,
            "k_place": tasks.PLACE_ROTATIONS,
            "pending_pick": (session.pending_pick.to_dict()
                             if session.pending_pick else None),
        }
        payload.update(extra)
        return payload

    def get_observation(self, session_id: str) -> dict:
        return self._observation_payload(self._get(session_id))

    # -- annotation ---------------------------------------------------------
    def _check_pixel(self, session: Session, u, v, rot, k) -> PixelPose:
        frame = session.obs.frame
        try:
            u, v, rot = int(u), int(v), int(rot)
        except (TypeError, ValueError):
            raise ValidationError("u, v, rot must be integers")
        if not (0 <= u < frame.height and 0 <= v < frame.width):
            raise ValidationError(f"pixel ({u}, {v}) outside "
                                  f"{frame.height}x{frame.width} frame")
        if not (0 <= rot < k):
            raise ValidationError(f"rotation bin {rot} outside [0, {k})")
        return PixelPose(u, v, rot, k)

    def submit_pick(self, session_id: str, u, v, rot=0) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.finished:
                raise ProtocolError("episode already finished")
            if session.pending_pick is not None:
                raise ProtocolError("pick already submitted; place expected")
            session.pending_pick = self._check_pixel(session, u, v, rot,
                                                     PICK_ROTATIONS)
            return self._observation_payload(session, status="awaiting_place")

    def submit_place(self, session_id: str, u, v, rot=0) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.finished:
                raise ProtocolError("episode already finished")
            if session.pending_pick is None:
                raise ProtocolError("place submitted before pick")
            place = self._check_pixel(session, u, v, rot, tasks.PLACE_ROTATIONS)
            action = PixelAction(pick=session.pending_pick, place=place)
            task = session.task
            frame = session.obs.frame
            session.records.append(dataset.EpisodeRecord(
                observation=session.obs, instruction=task.instruction(session.goal),
                action=action))
            simulator.apply_pick_place(session.state, action, frame)
            task.update_progress(session.state, session.goal, frame)
            session.obs = simulator.render_observation(session.state, frame)
            session.pending_pick = None
            return self._observation_payload(session, status="applied")

    def finish_episode(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.finished:
                raise ProtocolError("episode already finished")
            if session.pending_pick is not None:
                raise ProtocolError("pending pick; submit place or restart")
            if not session.records:
                raise ProtocolError("no annotated steps to save")
            task = session.task
            frame = session.obs.frame
            episode = dataset.Episode(
                task=session.task_name, split=session.split, seed=session.seed,
                records=session.records,
                final_score=task.score(session.state, session.goal, frame),
                source="human")
            out_dir = self.data_out / dataset.dataset_dir_name(
                session.task_name, session.split)
            ep_dir = dataset.append_episode(out_dir, episode)
            session.finished = True
            return {
                "schema_version": SCHEMA_VERSION,
                "episode_dir": str(ep_dir),
                "final_score": episode.final_score,
                "n_steps": len(episode.records),
                "source": "human",
            }

    # -- overlays -----------------------------------------------------------
    def list_checkpoints(self) -> dict:
        if self.checkpoint_dir is None or not self.checkpoint_dir.exists():
            return {"checkpoints": []}
        ids = sorted(p.name for p in self.checkpoint_dir.glob("*.pt"))
        return {"checkpoints": ids}

    def _model(self, checkpoint_id: str):
        if self.checkpoint_dir is None:
            raise ValidationError("service started without a checkpoint dir",
                                  status=404)
        path = self.checkpoint_dir / checkpoint_id
        if not path.exists() or path.suffix != ".pt":
            raise ValidationError(f"unknown checkpoint {checkpoint_id!r}",
                                  status=404)
        with self._models_lock:
            if checkpoint_id not in self._models:
                model, _ = load_checkpoint(path)
                model.eval()
                self._models[checkpoint_id] = model
        return self._models[checkpoint_id]

    def overlay(self, session_id: str, checkpoint_id: str, head: str,
                u=None, v=None, rot=0, slice_index=None) -> dict:
        session = self._get(session_id)
        with session.lock:
            obs = session.obs.copy()
            instruction = session.task.instruction(session.goal)
        model = self._model(checkpoint_id)
        if head == "pick":
            q = model.forward_pick(obs, instruction)
        elif head == "place":
            if u is None or v is None:
                raise ValidationError("place overlay requires a pick (u, v)")
            pick = self._check_pixel(session, u, v, rot or 0, PICK_ROTATIONS)
            q = model.forward_place(obs, instruction, pick)
        else:
            raise ValidationError(f"unknown head {head!r}")
        v_map = AffordanceMaps(q, q).normalized()[0]
        au, av, ar = np.unravel_index(int(np.argmax(v_map)), v_map.shape)
        display = v_map / v_map.max()
        k = display.shape[2]
        idx = int(slice_index) if slice_index is not None else int(ar)
        if not 0 <= idx < k:
            raise ValidationError(f"slice {idx} outside [0, {k})")
        plane = display[:, :, idx].astype(np.float32)
        return {
            "schema_version": SCHEMA_VERSION,
            "head": head,
            "k": int(k),
            "slice": idx,
            "argmax": {"u": int(au), "v": int(av), "rot": int(ar), "k": int(k)},
            "map_zlib_b64": base64.b64encode(zlib.compress(plane.tobytes())).decode(),
            "shape": list(plane.shape),
        }

    def meta(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tasks": list(tasks.TASK_NAMES),
            "splits": ["seen", "unseen"],
            "k_pick": PICK_ROTATIONS,
            "k_place": tasks.PLACE_ROTATIONS,
            "templates": tasks.load_task_config(),
        }


def make_handler(service: AnnotationService, frontend_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _error(self, err: Exception):
            status = getattr(err, "status", 500)
            self._send(status, {"error": str(err)})

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError as err:
                raise ValidationError(f"malformed JSON body: {err}")

        def _serve_static(self, path: str):
            if frontend_dir is None:
                self._send(404, {"error": "no frontend directory configured"})
                return
            rel = "index.html" if path in ("/", "") else path.lstrip("/")
            target = (frontend_dir / rel).resolve()
            if not str(target).startswith(str(frontend_dir.resolve())) \
                    or not target.is_file():
                self._send(404, {"error": f"not found: {path}"})
                return
            ctype = {"html": "text/html", "js": "text/javascript",
                     "css": "text/css", "map": "application/json",
                     "png": "image/png"}.get(target.suffix.lstrip("."),
                                             "application/octet-stream")
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            try:
                parsed = urlparse(self.path)
                parts = [p for p in parsed.path.split("/") if p]
                if not parts or parts[0] != "api":
                    self._serve_static(parsed.path)
                    return
                if parts[1:] == ["meta"]:
                    self._send(200, service.meta())
                elif parts[1:] == ["checkpoints"]:
                    self._send(200, service.list_checkpoints())
                elif len(parts) == 4 and parts[1] == "sessions" \
                        and parts[3] == "observation":
                    self._send(200, service.get_observation(parts[2]))
                elif len(parts) == 4 and parts[1] == "sessions" \
                        and parts[3] == "overlay":
                    q = {k: vs[0] for k, vs in parse_qs(parsed.query).items()}
                    self._send(200, service.overlay(
                        parts[2], q.get("checkpoint", ""), q.get("head", "pick"),
                        u=q.get("u"), v=q.get("v"), rot=q.get("rot", 0),
                        slice_index=q.get("slice")))
                else:
                    self._send(404, {"error": f"no such endpoint {parsed.path}"})
            except (ProtocolError, ValidationError) as err:
                self._error(err)
            except Exception as err:   # noqa: BLE001 - keep the server alive
                self._error(err)

        def do_POST(self):
            try:
                parts = [p for p in urlparse(self.path).path.split("/") if p]
                body = self._body()
                if parts == ["api", "sessions"]:
                    self._send(200, service.create_session(
                        body.get("task", ""), body.get("split", "seen"),
                        int(body.get("seed", 0))))
                elif len(parts) == 4 and parts[:2] == ["api", "sessions"]:
                    sid, verb = parts[2], parts[3]
                    if verb == "pick":
                        self._send(200, service.submit_pick(
                            sid, body.get("u"), body.get("v"), body.get("rot", 0)))
                    elif verb == "place":
                        self._send(200, service.submit_place(
                            sid, body.get("u"), body.get("v"), body.get("rot", 0)))
                    elif verb == "finish":
                        self._send(200, service.finish_episode(sid))
                    else:
                        self._send(404, {"error": f"no such verb {verb!r}"})
                else:
                    self._send(404, {"error": "no such endpoint"})
            except (ProtocolError, ValidationError) as err:
                self._error(err)
            except Exception as err:   # noqa: BLE001
                self._error(err)

    return Handler


def serve(host: str = "127.0.0.1", port: int = 8642,
          data_out: Path | str = "human_data",
          checkpoint_dir: Path | str | None = None,
          frontend_dir: Path | str | None = None) -> ThreadingHTTPServer:
    """Create (but do not start) the HTTP server; callers run serve_forever."""
    service = AnnotationService(data_out=data_out, checkpoint_dir=checkpoint_dir)
    handler = make_handler(service,
                           Path(frontend_dir) if frontend_dir else None)
    server = ThreadingHTTPServer((host, port), handler)
    server.service = service
    return server
