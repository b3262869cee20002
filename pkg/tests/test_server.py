import time

import pytest
from fastapi.testclient import TestClient

from tfevolve.evaluate import HeuristicJudge
from tfevolve.render import image_from_png_bytes
from tfevolve.server import ApiError, build_judge, create_app


class SlowJudge:
    """Heuristic judge with an artificial delay, to widen the busy window."""

    name = "slow"

    def __init__(self, delay=0.03):
        self.inner = HeuristicJudge()
        self.delay = delay

    def decide(self, image_a, image_b, aspects, intent):
        time.sleep(self.delay)
        return self.inner.decide(image_a, image_b, aspects, intent)


def make_client(tmp_path, judge=None, judge_config=None):
    app = create_app(tmp_path / "data", judge=judge, judge_config=judge_config)
    return TestClient(app)


def create_body(**overrides):
    body = {
        "volume": {"kind": "synthetic", "name": "nested_spheres", "dims": [12, 12, 12]},
        "config": {"population_size": 5, "max_generations": 3, "rng_seed": 11},
        "image_size": [24, 24],
        "gene_count": 3,
        "shading": "none",
    }
    body.update(overrides)
    return body


def new_session(client, **overrides):
    response = client.post("/sessions", json=create_body(**overrides))
    assert response.status_code == 200, response.text
    return response.json()["session_id"]


def wait_idle(client, session_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        data = client.get(f"/sessions/{session_id}/progress").json()
        if not data["busy"]:
            return data
        time.sleep(0.02)
    raise TimeoutError("step did not finish in time")


def step_and_wait(client, session_id, count=1):
    response = client.post(f"/sessions/{session_id}/step", json={"count": count})
    assert response.status_code == 202, response.text
    data = wait_idle(client, session_id)
    assert data["error"] is None, data["error"]
    return data


def test_healthz(tmp_path):
    client = make_client(tmp_path)
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_unknown_volume_path_is_bad_request(tmp_path):
    client = make_client(tmp_path)
    response = client.post("/sessions", json={"volume": "/nope/missing.json"})
    assert response.status_code == 400
    assert response.json()["code"] == "bad_request"


def test_missing_session_is_not_found(tmp_path):
    client = make_client(tmp_path)
    response = client.get("/sessions/doesnotexist")
    assert response.status_code == 404
    assert response.json()["code"] == "not_found"


def test_create_and_summarize_session(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    data = client.get(f"/sessions/{session_id}").json()
    assert data["session_id"] == session_id
    assert data["stage"] == "exploration"
    assert data["generation"] == 0
    assert data["intent"] == {"kind": "none", "text": None}
    assert data["frozen_gene_indices"] == []
    assert data["population_size"] == 5
    assert data["busy"] is False


def test_step_advances_and_gallery_dereferences(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    step_and_wait(client, session_id)
    assert client.get(f"/sessions/{session_id}").json()["generation"] == 1

    gallery = client.get(f"/sessions/{session_id}/gallery", params={"k": 3}).json()
    assert len(gallery["entries"]) == 3
    ratings = [e["rating"] for e in gallery["entries"]]
    assert ratings == sorted(ratings, reverse=True)
    for entry in gallery["entries"]:
        fetched = client.get(entry["url"])
        assert fetched.status_code == 200
        assert fetched.headers["content-type"] == "image/png"


def test_step_count_runs_multiple_generations(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    step_and_wait(client, session_id, count=2)
    assert client.get(f"/sessions/{session_id}").json()["generation"] == 2


def test_second_step_while_busy_conflicts(tmp_path):
    client = make_client(tmp_path, judge=SlowJudge())
    session_id = new_session(client)
    assert client.post(f"/sessions/{session_id}/step", json={}).status_code == 202
    denied = client.post(f"/sessions/{session_id}/step", json={})
    assert denied.status_code == 409
    assert denied.json()["code"] == "conflict"
    # reads stay available during the step
    assert client.get(f"/sessions/{session_id}").status_code == 200
    assert client.get(f"/sessions/{session_id}/gallery").status_code == 200
    assert client.get(f"/sessions/{session_id}/history").status_code == 200
    wait_idle(client, session_id)


def test_step_after_budget_exhaustion_conflicts(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(
        client, config={"population_size": 4, "max_generations": 1, "rng_seed": 3}
    )
    step_and_wait(client, session_id)
    denied = client.post(f"/sessions/{session_id}/step", json={})
    assert denied.status_code == 409
    assert "intent" in denied.json()["message"]


def test_bad_step_count_is_rejected(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    response = client.post(f"/sessions/{session_id}/step", json={"count": 0})
    assert response.status_code == 400


def test_intent_moves_stage_to_customization(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    response = client.post(
        f"/sessions/{session_id}/intent", json={"kind": "text", "text": "warm colors"}
    )
    assert response.status_code == 200
    assert response.json()["stage"] == "customization"
    summary = client.get(f"/sessions/{session_id}").json()
    assert summary["stage"] == "customization"
    assert summary["intent"] == {"kind": "text", "text": "warm colors"}

    bad = client.post(f"/sessions/{session_id}/intent", json={"kind": "wish"})
    assert bad.status_code == 400
    empty = client.post(f"/sessions/{session_id}/intent", json={"kind": "text"})
    assert empty.status_code == 400


def test_image_intent_round_trips(tmp_path):
    import base64

    client = make_client(tmp_path)
    session_id = new_session(client)
    gallery = client.get(f"/sessions/{session_id}/gallery", params={"k": 1}).json()
    png = client.get(gallery["entries"][0]["url"]).content
    response = client.post(
        f"/sessions/{session_id}/intent",
        json={"kind": "image", "image_base64": base64.b64encode(png).decode()},
    )
    assert response.status_code == 200
    assert response.json()["intent"]["kind"] == "image"


def _make_visible_best(client, session_id):
    """Override the current best genome with one that renders solidly."""
    gallery = client.get(f"/sessions/{session_id}/gallery", params={"k": 1}).json()
    best_id = gallery["entries"][0]["genome_id"]
    genome = client.get(f"/sessions/{session_id}/genome/{best_id}").json()
    genome["genes"][0].update({"mu": 0.5, "sigma": 0.25, "w": 1.0, "color": [1, 0.2, 0.1]})
    response = client.put(f"/sessions/{session_id}/genome/{best_id}", json=genome)
    assert response.status_code == 200, response.text
    return best_id


def test_pick_hits_and_misses(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    _make_visible_best(client, session_id)

    hit = client.post(f"/sessions/{session_id}/pick", json={"x": 12, "y": 12})
    assert hit.status_code == 200, hit.text
    assert hit.json()["gene_index"] == 0

    miss = client.post(f"/sessions/{session_id}/pick", json={"x": 0, "y": 0})
    assert miss.status_code == 404
    assert miss.json()["message"] == "no_feature"

    off = client.post(f"/sessions/{session_id}/pick", json={"x": 999, "y": 0})
    assert off.status_code == 400


def test_refine_freezes_and_advances_stage(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    response = client.post(
        f"/sessions/{session_id}/refine",
        json={"gene_index": 1, "directive": "thinner shell"},
    )
    assert response.status_code == 200
    data = response.json()
    assert data["stage"] == "refinement"
    assert data["frozen_gene_indices"] == [0, 2]
    summary = client.get(f"/sessions/{session_id}").json()
    assert summary["stage"] == "refinement"
    assert "thinner shell" in summary["intent"]["text"]

    out_of_range = client.post(
        f"/sessions/{session_id}/refine", json={"gene_index": 9}
    )
    assert out_of_range.status_code == 400


def test_history_urls_dereference(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    step_and_wait(client, session_id)
    records = client.get(f"/sessions/{session_id}/history").json()["records"]
    assert [r["generation_index"] for r in records] == [0, 1]
    for record in records:
        for entry in record["entries"]:
            assert client.get(entry["url"]).status_code == 200


def test_render_endpoint_returns_requested_size(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    response = client.get(
        f"/sessions/{session_id}/render",
        params={"yaw": 10, "pitch": -20, "dist": 1.8, "size": 16},
    )
    assert response.status_code == 200
    image = image_from_png_bytes(response.content)
    assert (image.width, image.height) == (16, 16)

    unknown = client.get(
        f"/sessions/{session_id}/render", params={"genome": "zzzzzzzz"}
    )
    assert unknown.status_code == 404
    too_big = client.get(f"/sessions/{session_id}/render", params={"size": 99999})
    assert too_big.status_code == 400


def test_features_listing_and_thumbnails(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    data = client.get(f"/sessions/{session_id}/features").json()
    assert [f["gene_index"] for f in data["features"]] == [0, 1, 2]
    for feature in data["features"]:
        fetched = client.get(feature["url"])
        assert fetched.status_code == 200
        assert fetched.headers["content-type"] == "image/png"
    missing = client.get(f"/sessions/{session_id}/features/9.png")
    assert missing.status_code == 404


def test_genome_get_and_put(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    gallery = client.get(f"/sessions/{session_id}/gallery", params={"k": 1}).json()
    genome_id = gallery["entries"][0]["genome_id"]

    fetched = client.get(f"/sessions/{session_id}/genome/{genome_id}").json()
    assert fetched["id"] == genome_id
    assert len(fetched["genes"]) == 3

    fetched["genes"][0]["w"] = 0.9
    stored = client.put(f"/sessions/{session_id}/genome/{genome_id}", json=fetched)
    assert stored.status_code == 200
    assert stored.json()["genes"][0]["w"] == 0.9

    mismatched = client.put(
        f"/sessions/{session_id}/genome/otherid", json=fetched
    )
    assert mismatched.status_code == 400

    fetched["id"] = "ffffffff"
    absent = client.put(f"/sessions/{session_id}/genome/ffffffff", json=fetched)
    assert absent.status_code == 404

    fetched["id"] = genome_id
    fetched["genes"][0]["mu"] = 4.2
    invalid = client.put(f"/sessions/{session_id}/genome/{genome_id}", json=fetched)
    assert invalid.status_code == 400


def test_rollback_clones_into_new_session(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    step_and_wait(client, session_id)
    response = client.post(f"/sessions/{session_id}/rollback", json={"generation": 0})
    assert response.status_code == 200
    clone_id = response.json()["new_session_id"]
    assert clone_id != session_id
    summary = client.get(f"/sessions/{clone_id}").json()
    assert summary["generation"] == 0
    gallery = client.get(f"/sessions/{clone_id}/gallery", params={"k": 2}).json()
    for entry in gallery["entries"]:
        assert client.get(entry["url"]).status_code == 200

    missing = client.post(f"/sessions/{session_id}/rollback", json={"generation": 9})
    assert missing.status_code == 404


def test_sessions_survive_server_restart(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    step_and_wait(client, session_id)

    reborn = TestClient(create_app(tmp_path / "data"))
    summary = reborn.get(f"/sessions/{session_id}")
    assert summary.status_code == 200
    assert summary.json()["generation"] == 1
    step = reborn.post(f"/sessions/{session_id}/step", json={})
    assert step.status_code == 202
    data = wait_idle(reborn, session_id)
    assert data["error"] is None
    assert reborn.get(f"/sessions/{session_id}").json()["generation"] == 2


def test_file_route_rejects_traversal(tmp_path):
    client = make_client(tmp_path)
    session_id = new_session(client)
    response = client.get(f"/sessions/{session_id}/files/../../../etc/passwd")
    assert response.status_code in (400, 404)


def test_misconfigured_mllm_judge_reports_unavailable(tmp_path):
    client = make_client(tmp_path, judge_config={"kind": "mllm"})
    assert client.get("/healthz").status_code == 200
    session_id = new_session(client)
    denied = client.post(f"/sessions/{session_id}/step", json={})
    assert denied.status_code == 503
    assert denied.json()["code"] == "judge_unavailable"


def test_build_judge_kinds():
    judge, error = build_judge(None)
    assert error is None and judge is not None
    judge, error = build_judge({"kind": "mllm", "url": "http://x", "model": "m"})
    assert error is None and judge.name == "mllm"
    judge, error = build_judge({"kind": "tarot"})
    assert judge is None and "tarot" in error


def test_api_error_rejects_unknown_code():
    with pytest.raises(ValueError):
        ApiError("teapot", "nope")
