"""HTTP editing service: sessions, previews, edits, undo, blending, pixel
probes, journals, and exports."""

import io
import threading

import numpy as np
import pytest

fastapi = pytest.importorskip("fastapi")
from fastapi.testclient import TestClient  # noqa: E402

from glut3d.cglut import (  # noqa: E402
    blend,
    deserialize_cglut,
    init_cglut,
    materialize_style,
    serialize_cglut,
)
from glut3d.edit_service import create_app  # noqa: E402
from glut3d.glut_core import deserialize, evaluate, serialize  # noqa: E402
from glut3d.lut_io import encode_png_bytes, parse_cube  # noqa: E402

from conftest import random_model  # noqa: E402


@pytest.fixture()
def client():
    return TestClient(create_app())


def png_bytes(w=32, h=24, seed=0):
    rng = np.random.default_rng(seed)
    return encode_png_bytes(rng.uniform(0, 1, (h, w, 3)))


def model_bytes(n=8, seed=1):
    return serialize(random_model(n, seed=seed))


def create_session(client, *, image=None, model=None, style=None):
    data = {} if style is None else {"style": str(style)}
    return client.post("/sessions", files={
        "image": ("img.png", image or png_bytes(), "image/png"),
        "model": ("model.bin", model or model_bytes(),
                  "application/octet-stream"),
    }, data=data)


def test_create_session_and_preview(client):
    r = create_session(client)
    assert r.status_code == 201
    info = r.json()
    assert info["revision"] == 0
    assert info["styles"] is None
    assert info["gaussians"] == 8
    assert info["preview_width"] == 32 and info["preview_height"] == 24
    p = client.get(info["preview_url"])
    assert p.status_code == 200
    assert p.headers["content-type"] == "image/png"
    assert p.content.startswith(b"\x89PNG")


def test_create_session_rejections(client):
    # not a PNG
    r = client.post("/sessions", files={
        "image": ("img.png", b"JFIFnotapng", "image/png"),
        "model": ("m.bin", model_bytes(), "application/octet-stream")})
    assert r.status_code == 415
    # corrupt model
    r = create_session(client, model=model_bytes()[:-5])
    assert r.status_code == 400
    # style index on a single-style model
    r = create_session(client, style=0)
    assert r.status_code == 400
    # missing session
    assert client.get("/sessions/nope/preview.png").status_code == 404


def test_edit_contracts_residual_via_api(client):
    sid = create_session(client).json()["session_id"]
    r = client.post(f"/sessions/{sid}/edit", json={
        "c_in": [0.4, 0.5, 0.6], "c_out": [0.7, 0.3, 0.5], "k": 4, "s": 0.8})
    assert r.status_code == 200
    out = r.json()
    assert out["revision"] == 1
    before = np.array(out["residual_before"])
    after = np.array(out["residual_after"])
    expect = (1.0 - 0.8 * out["m"]) * before
    assert np.max(np.abs(after - expect)) < 1e-9
    assert len(out["touched"]) == 4


def test_zero_strength_edit_keeps_revision_and_preview(client):
    sid = create_session(client).json()["session_id"]
    png0 = client.get(f"/sessions/{sid}/preview.png").content
    r = client.post(f"/sessions/{sid}/edit", json={
        "c_in": [0.4, 0.5, 0.6], "c_out": [0.7, 0.3, 0.5], "s": 0.0})
    assert r.status_code == 200
    assert r.json()["revision"] == 0  # nothing changed
    assert client.get(f"/sessions/{sid}/preview.png").content == png0
    # the no-op still lands in the journal for undo symmetry
    assert len(client.get(f"/sessions/{sid}/journal").json()["records"]) == 1


def test_edit_validation_and_degeneracy(client):
    sid = create_session(client).json()["session_id"]
    r = client.post(f"/sessions/{sid}/edit", json={
        "c_in": [0.4, 0.5], "c_out": [0.7, 0.3, 0.5]})
    assert r.status_code == 422
    r = client.post(f"/sessions/{sid}/edit", json={
        "c_in": [0.4, 0.5, 1.7], "c_out": [0.7, 0.3, 0.5]})
    assert r.status_code == 422

    # a model with no support near the query: degenerate edit -> 409
    from glut3d.glut_core import softplus_inv
    tight = random_model(4, seed=9)
    tight.means[:] = 0.5
    tight.chol_raw[:, :3] = softplus_inv(0.004)
    tight.chol_raw[:, 3:] = 0.0
    sid2 = create_session(client, model=serialize(tight)).json()["session_id"]
    r = client.post(f"/sessions/{sid2}/edit", json={
        "c_in": [1.0, 1.0, 1.0], "c_out": [0.0, 0.0, 0.0]})
    assert r.status_code == 409


def test_undo_restores_uploaded_model_bitwise(client):
    blob = model_bytes(seed=3)
    sid = create_session(client, model=blob).json()["session_id"]
    for i in range(3):
        assert client.post(f"/sessions/{sid}/edit", json={
            "c_in": [0.3 + 0.1 * i, 0.5, 0.6],
            "c_out": [0.6, 0.4, 0.3]}).status_code == 200
    for _ in range(3):
        assert client.post(f"/sessions/{sid}/undo").status_code == 200
    assert client.post(f"/sessions/{sid}/undo").status_code == 409  # empty
    exported = client.get(f"/sessions/{sid}/export.model").content
    assert exported == blob


def test_pixel_probe_matches_direct_evaluation(client):
    blob = model_bytes(seed=4)
    sid = create_session(client, model=blob).json()["session_id"]
    r = client.get(f"/sessions/{sid}/pixel", params={"x": 5, "y": 7})
    assert r.status_code == 200
    out = r.json()
    model = deserialize(blob)
    src = np.array(out["source"])
    assert np.allclose(out["current"], evaluate(model, src), atol=1e-12)
    assert client.get(f"/sessions/{sid}/pixel",
                      params={"x": 900, "y": 0}).status_code == 422


def test_export_cube(client):
    blob = model_bytes(seed=5)
    sid = create_session(client, model=blob).json()["session_id"]
    r = client.get(f"/sessions/{sid}/export.cube", params={"size": 9})
    assert r.status_code == 200
    lut = parse_cube(r.content)
    assert lut.size == 9
    model = deserialize(blob)
    from glut3d.lut_io import lattice_colors
    assert np.max(np.abs(lut.entries
                         - evaluate(model, lattice_colors(9)))) < 1e-6
    assert client.get(f"/sessions/{sid}/export.cube",
                      params={"size": 500}).status_code == 422


def conditional_blob(l=3, n=8, seed=6):
    cm = init_cglut(l, n, d=8, h=16, seed=seed)
    rng = np.random.default_rng(seed + 1)
    cm.embeddings += rng.normal(0, 0.4, cm.embeddings.shape)
    cm.gen["local_color.2.w"] += rng.normal(
        0, 0.05, cm.gen["local_color.2.w"].shape)
    return serialize_cglut(cm)


def test_conditional_session_and_blend(client):
    blob = conditional_blob()
    r = create_session(client, model=blob, style=2)
    assert r.status_code == 201
    info = r.json()
    assert info["styles"] == 3
    sid = info["session_id"]

    # exported model must equal the materialized style of the f32 upload
    cm = deserialize_cglut(blob)
    assert (client.get(f"/sessions/{sid}/export.model").content
            == serialize(materialize_style(cm, 2)))

    # blending resets the session to the interpolated model
    r = client.post(f"/sessions/{sid}/blend",
                    json={"l1": 0, "l2": 1, "alpha": 0.5})
    assert r.status_code == 200
    assert r.json()["journal_length"] == 0
    assert (client.get(f"/sessions/{sid}/export.model").content
            == serialize(blend(cm, 0, 1, 0.5)))

    # out-of-range style and alpha
    assert create_session(client, model=blob, style=3).status_code == 400
    assert client.post(f"/sessions/{sid}/blend",
                       json={"l1": 0, "l2": 1, "alpha": 1.5}).status_code == 422


def test_blend_rejected_for_single_style_session(client):
    sid = create_session(client).json()["session_id"]
    r = client.post(f"/sessions/{sid}/blend",
                    json={"l1": 0, "l2": 1, "alpha": 0.5})
    assert r.status_code == 422


def test_concurrent_edits_serialize_revisions(client):
    sid = create_session(client).json()["session_id"]
    results = []
    lock = threading.Lock()

    def worker(i):
        r = client.post(f"/sessions/{sid}/edit", json={
            "c_in": [0.2 + 0.05 * i, 0.5, 0.5], "c_out": [0.6, 0.4, 0.5]})
        with lock:
            results.append(r.json()["revision"])

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # every edit moved the model, so the eight revisions are exactly 1..8
    assert sorted(results) == list(range(1, 9))
    journal = client.get(f"/sessions/{sid}/journal").json()["records"]
    assert len(journal) == 8
