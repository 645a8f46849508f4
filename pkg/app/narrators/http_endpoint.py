import requests

from narrators.base import Narrator


class HttpEndpointNarrator(Narrator):
    """POSTs the prompt JSON to a text-generation endpoint; the reply body is plain text."""

    def __init__(self, url: str, model: str = "", timeout_ms: int = 10000):
        self.url = url
        self.model = model
        self.timeout = timeout_ms / 1000.0

    def narrate(self, prompt: dict[str, any]) -> str:
        body = {**prompt, "model": self.model} if self.model else dict(prompt)
        response = requests.post(self.url, json=body, headers={"Content-type": "application/json"},
                                 timeout=self.timeout)
        response.raise_for_status()
        return response.text
