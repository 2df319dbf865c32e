import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from dualrag.datasets import load_dataset
from dualrag.llm import ScriptedBackend
from dualrag.retrieval import BM25Index, read_corpus

CASE_DIR = Path(__file__).parent / "fixtures" / "case"
CASE_DATASET = CASE_DIR / "case_2wiki.json"
CASE_CORPUS = CASE_DIR / "case_corpus.jsonl"
CASE_SCRIPT = CASE_DIR / "case_script.jsonl"


@pytest.fixture(scope="session")
def case_question():
    questions, _ = load_dataset(CASE_DATASET, "twowiki")
    return questions[0]


@pytest.fixture(scope="session")
def case_docs():
    return read_corpus(CASE_CORPUS)


@pytest.fixture(scope="session")
def case_index(case_docs):
    return BM25Index().fit(case_docs)


@pytest.fixture(scope="session")
def case_backend():
    return ScriptedBackend.from_jsonl(CASE_SCRIPT)


# -- stub HTTP server ----------------------------------------------------------


class StubServer:
    """Tiny JSON server. ``routes[(method, path)]`` is either a callable
    ``body -> (status, payload)`` or a list of ``(status, payload)`` consumed
    one per request (the last entry repeats)."""

    def __init__(self):
        self.routes = {}
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def _serve(self, method):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                body = json.loads(raw) if raw else None
                stub.requests.append((method, self.path, body, dict(self.headers)))
                route = stub.routes.get((method, self.path))
                if route is None:
                    status, payload = 404, {"error": "no route"}
                elif callable(route):
                    status, payload = route(body)
                else:
                    status, payload = route.pop(0) if len(route) > 1 else route[0]
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    with StubServer() as server:
        yield server


def completion(text):
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}


# -- acceptance report ---------------------------------------------------------

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance" not in item.nodeid:
        return
    doc = (getattr(item.function, "__doc__", None) or item.name).strip().splitlines()[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE.append((status, doc))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, doc in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {doc}")
