from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from dualrag.pipeline import DualRAG
from dualrag.server import create_app

CASE_TEXT = "Which film has the director who was born later, El Extraño Viaje or Love In Pawn?"


@pytest.fixture(scope="module")
def client(case_backend, case_docs):
    model = DualRAG(backend=case_backend).fit(case_docs)
    with TestClient(create_app(model)) as c:
        yield c


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200 and resp.json() == {"status": "ok"}


def test_answer_case(client):
    resp = client.post("/answer", json={"question": CASE_TEXT, "id": "case"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["answer"] == "El extraño viaje" and body["rounds"] == 2 and body["trace_id"]


@pytest.mark.parametrize("body", [{}, {"question": ""}, {"question": "   "}, {"question": 3}, {"id": "x"}])
def test_malformed_body(client, body):
    assert client.post("/answer", json=body).status_code == 400


def test_non_json_body(client):
    resp = client.post("/answer", content=b"not json", headers={"Content-Type": "application/json"})
    assert resp.status_code == 400


def test_failed_run_is_502(client):
    resp = client.post("/answer", json={"question": "Not scripted?", "id": "nope"})
    assert resp.status_code == 502 and "trace_id" in resp.json()


def test_concurrent_requests(client):
    with ThreadPoolExecutor(4) as pool:
        results = list(pool.map(lambda _: client.post("/answer", json={"question": CASE_TEXT, "id": "case"}), range(8)))
    assert all(r.status_code == 200 and r.json()["rounds"] == 2 for r in results)
    assert len({r.json()["trace_id"] for r in results}) == 8
