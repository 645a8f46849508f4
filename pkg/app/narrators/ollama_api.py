import json

import requests

from narrators.base import Narrator


class OllamaNarrator(Narrator):
    def __init__(self, ollama_url: str = "http://localhost:11434", model: str = "llama2", timeout_ms: int = 10000):
        """
        Narrator backed by a local Ollama server

        Args:
            ollama_url (str): URL of the Ollama server
            model (str): Ollama model to use
            timeout_ms (int): request timeout
        """
        self.ollama_url = ollama_url.rstrip("/")
        self.model = model or "llama2"
        self.timeout = timeout_ms / 1000.0

    def _create_prompt(self, prompt: dict[str, any]) -> str:
        return (
            "You explain the output of a waste weight estimation model to a facility operator.\n"
            "Write three or four plain sentences. Use only the numbers below; do not invent new ones.\n"
            "Mention the predicted weight, how much the image and the metadata contributed, and the\n"
            "physical features that moved the estimate most (positive values raised it).\n\n"
            f"EXPLANATION DATA:\n{json.dumps(prompt, indent=2)}\n"
        )

    def narrate(self, prompt: dict[str, any]) -> str:
        response = requests.post(
            f"{self.ollama_url}/api/generate",
            json={
                "model": self.model,
                "prompt": self._create_prompt(prompt),
                "stream": False,
                "options": {"temperature": 0.3, "num_predict": 400},
            },
            timeout=self.timeout,
        )
        response.raise_for_status()
        return response.json().get("response", "")
