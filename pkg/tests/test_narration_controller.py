import requests

from narration_controller import NarrationController
from narrators.ollama_api import OllamaNarrator
from run_config import ExplainConfig

PROMPT = {"record_id": "r00001", "prediction_kg": 120.5, "s_visual": 0.6, "s_meta": 0.4, "shapley_top3": []}


class FakeResponse:
    def __init__(self, text="", payload=None, status=200):
        self.text = text
        self._payload = payload or {}
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code} error")

    def json(self):
        return self._payload


def test_http_narrator_posts_prompt(monkeypatch):
    calls = []

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append((url, json, timeout))
        return FakeResponse(text="Roughly 120 kg of scrap.")

    monkeypatch.setattr(requests, "post", fake_post)
    controller = NarrationController(ExplainConfig(narrator="http", endpoint_url="http://x/gen", model="m",
                                                   timeout_ms=1500))
    assert controller.narrate(PROMPT) == "Roughly 120 kg of scrap."
    url, body, timeout = calls[0]
    assert url == "http://x/gen"
    assert body["model"] == "m" and body["prediction_kg"] == 120.5
    assert timeout == 1.5


def test_failure_degrades_to_empty_text(monkeypatch, caplog):
    def down(*args, **kwargs):
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", down)
    controller = NarrationController(ExplainConfig(narrator="http", endpoint_url="http://x/gen"))
    assert controller.narrate(PROMPT) == ""
    assert "template-only" in caplog.text


def test_http_error_status(monkeypatch):
    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse(status=503))
    controller = NarrationController(ExplainConfig(narrator="http", endpoint_url="http://x/gen"))
    assert controller.narrate(PROMPT) == ""


def test_empty_reply_is_ignored(monkeypatch, caplog):
    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse(text="   "))
    controller = NarrationController(ExplainConfig(narrator="http", endpoint_url="http://x/gen"))
    assert controller.narrate(PROMPT) == ""
    assert "empty reply" in caplog.text


def test_http_without_url_is_disabled(caplog):
    controller = NarrationController(ExplainConfig(narrator="http"))
    assert not controller.is_initialized
    assert controller.narrate(PROMPT) == ""


def test_no_narrator_by_default():
    assert NarrationController(ExplainConfig()).narrate(PROMPT) == ""


def test_ollama_reads_response_field(monkeypatch):
    seen = {}

    def fake_post(url, json=None, timeout=None):
        seen.update(url=url, body=json)
        return FakeResponse(payload={"response": "About 120 kg."})

    monkeypatch.setattr(requests, "post", fake_post)
    narrator = OllamaNarrator("http://localhost:11434/", model="llama3")
    assert narrator.narrate(PROMPT) == "About 120 kg."
    assert seen["url"] == "http://localhost:11434/api/generate"
    assert seen["body"]["stream"] is False
    assert "120.5" in seen["body"]["prompt"]
