import base64
import json
import threading
import urllib.request
import zlib

import numpy as np
import pytest
import torch

from pickplace import dataset, service, simulator, tasks
from pickplace.model import AffordanceModel, ModelConfig
from pickplace.service import AnnotationService, ProtocolError, ValidationError
from pickplace.training import save_checkpoint


@pytest.fixture()
def svc(tmp_path):
    return AnnotationService(data_out=tmp_path / "human")


def expert_clicks(task_name, split, seed):
    """Scripted pick/place pixel sequence from the oracle expert."""
    score, traj = __import__("pickplace.evaluation", fromlist=["run_episode"]) \
        .run_episode(__import__("pickplace.evaluation",
                                fromlist=["ExpertPolicy"]).ExpertPolicy(),
                     task_name, split, seed)
    return [(r.action.pick, r.action.place) for r in traj], score


class TestSessionFlow:
    def test_full_scripted_episode_replays_bit_exactly(self, svc, tmp_path):
        clicks, _ = expert_clicks("put-blocks-in-bowls", "seen", 21)
        created = svc.create_session("put-blocks-in-bowls", "seen", 21)
        sid = created["session_id"]
        for pick, place in clicks:
            svc.submit_pick(sid, pick.u, pick.v, pick.rot)
            out = svc.submit_place(sid, place.u, place.v, place.rot)
        assert out["done"] and out["score"] == 100.0
        finished = svc.finish_episode(sid)
        assert finished["final_score"] == 100.0
        ep = dataset.load_episode(__import__("pathlib").Path(finished["episode_dir"]))
        assert ep.source == "human"
        assert dataset.replay_episode(ep)

    def test_pick_twice_is_protocol_error(self, svc):
        sid = svc.create_session("put-blocks-in-bowls", "seen", 0)["session_id"]
        svc.submit_pick(sid, 10, 10)
        with pytest.raises(ProtocolError, match="pick already submitted"):
            svc.submit_pick(sid, 11, 11)

    def test_place_before_pick_is_protocol_error(self, svc):
        sid = svc.create_session("put-blocks-in-bowls", "seen", 0)["session_id"]
        with pytest.raises(ProtocolError, match="before pick"):
            svc.submit_place(sid, 10, 10, 0)

    def test_out_of_bounds_pixel_rejected(self, svc):
        sid = svc.create_session("put-blocks-in-bowls", "seen", 0)["session_id"]
        with pytest.raises(ValidationError, match="outside"):
            svc.submit_pick(sid, 500, 10)

    def test_sessions_are_isolated(self, svc):
        a = svc.create_session("put-blocks-in-bowls", "seen", 1)["session_id"]
        b = svc.create_session("put-blocks-in-bowls", "seen", 1)["session_id"]
        svc.submit_pick(a, 10, 10)
        svc.submit_pick(b, 64, 64)
        svc.submit_place(b, 20, 20, 0)
        sa = svc.get_observation(a)
        sb = svc.get_observation(b)
        assert sa["steps"] == 0 and sb["steps"] == 1
        assert sa["pending_pick"] is not None
        assert sb["pending_pick"] is None

    def test_unknown_session(self, svc):
        with pytest.raises(ValidationError, match="unknown session"):
            svc.get_observation("nope")

    def test_observation_payload_roundtrip(self, svc):
        created = svc.create_session("towers-of-hanoi-seq", "seen", 3)
        enc = created["observation"]
        height = np.frombuffer(
            zlib.decompress(base64.b64decode(enc["height_zlib_b64"])),
            dtype=np.float32).reshape(enc["shape"])
        state, obs, _ = simulator.reset("towers-of-hanoi-seq", "seen", 3)
        np.testing.assert_array_equal(height, obs.height)
        from PIL import Image
        import io
        png = Image.open(io.BytesIO(base64.b64decode(enc["color_png_b64"])))
        np.testing.assert_array_equal(np.asarray(png),
                                      dataset.color_to_u8(obs.color))


class TestOverlay:
    @pytest.fixture()
    def svc_with_checkpoint(self, tmp_path):
        torch.manual_seed(0)
        cfg = ModelConfig()
        model = AffordanceModel(cfg)
        ckdir = tmp_path / "ckpts"
        save_checkpoint(model, 0, ckdir / "step_000000.pt")
        return AnnotationService(data_out=tmp_path / "human",
                                 checkpoint_dir=ckdir), model

    def test_pick_overlay_normalized_and_consistent(self, svc_with_checkpoint):
        svc, model = svc_with_checkpoint
        sid = svc.create_session("put-blocks-in-bowls", "seen", 5)["session_id"]
        out = svc.overlay(sid, "step_000000.pt", "pick")
        plane = np.frombuffer(
            zlib.decompress(base64.b64decode(out["map_zlib_b64"])),
            dtype=np.float32).reshape(out["shape"])
        assert plane.min() >= 0.0 and plane.max() == pytest.approx(1.0)
        # Argmax must equal the model's own pick argmax on the same inputs.
        obs = svc._get(sid).obs
        instruction = svc._get(sid).task.instruction(svc._get(sid).goal)
        q = model.forward_pick(obs, instruction)
        u, v, r = np.unravel_index(int(np.argmax(q)), q.shape)
        assert out["argmax"] == {"u": int(u), "v": int(v), "rot": int(r), "k": 1}

    def test_place_overlay_requires_pick(self, svc_with_checkpoint):
        svc, _ = svc_with_checkpoint
        sid = svc.create_session("put-blocks-in-bowls", "seen", 5)["session_id"]
        with pytest.raises(ValidationError, match="requires a pick"):
            svc.overlay(sid, "step_000000.pt", "place")
        out = svc.overlay(sid, "step_000000.pt", "place", u=40, v=40)
        assert out["k"] == 36

    def test_unknown_checkpoint_404(self, svc_with_checkpoint):
        svc, _ = svc_with_checkpoint
        sid = svc.create_session("put-blocks-in-bowls", "seen", 5)["session_id"]
        with pytest.raises(ValidationError, match="unknown checkpoint"):
            svc.overlay(sid, "missing.pt", "pick")

    def test_overlay_is_side_effect_free(self, svc_with_checkpoint):
        svc, _ = svc_with_checkpoint
        sid = svc.create_session("put-blocks-in-bowls", "seen", 5)["session_id"]
        before = svc.get_observation(sid)
        svc.overlay(sid, "step_000000.pt", "pick")
        svc.overlay(sid, "step_000000.pt", "pick")
        after = svc.get_observation(sid)
        assert before["observation"] == after["observation"]
        assert before["steps"] == after["steps"]


class TestHttpTransport:
    @pytest.fixture()
    def server(self, tmp_path):
        srv = service.serve(port=0, data_out=tmp_path / "human")
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        yield srv
        srv.shutdown()

    def _post(self, server, path, payload):
        host, port = server.server_address
        req = urllib.request.Request(
            f"http://{host}:{port}{path}",
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())

    def _get(self, server, path):
        host, port = server.server_address
        with urllib.request.urlopen(f"http://{host}:{port}{path}") as resp:
            return json.loads(resp.read())

    def test_meta_endpoint(self, server):
        meta = self._get(server, "/api/meta")
        assert set(meta["tasks"]) == set(tasks.TASK_NAMES)
        assert meta["k_place"] == 36

    def test_session_over_http(self, server):
        created = self._post(server, "/api/sessions",
                             {"task": "put-blocks-in-bowls", "split": "seen",
                              "seed": 7})
        sid = created["session_id"]
        assert created["instruction"].startswith("put the")
        out = self._post(server, f"/api/sessions/{sid}/pick",
                         {"u": 10, "v": 10, "rot": 0})
        assert out["status"] == "awaiting_place"
        out = self._post(server, f"/api/sessions/{sid}/place",
                         {"u": 90, "v": 90, "rot": 0})
        assert out["steps"] == 1

    def test_http_error_status(self, server):
        created = self._post(server, "/api/sessions",
                             {"task": "put-blocks-in-bowls", "seed": 0})
        sid = created["session_id"]
        with pytest.raises(urllib.error.HTTPError) as exc:
            self._post(server, f"/api/sessions/{sid}/place",
                       {"u": 1, "v": 1, "rot": 0})
        assert exc.value.code == 409
        body = json.loads(exc.value.read())
        assert "before pick" in body["error"]
