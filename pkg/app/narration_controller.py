import logging

import requests

from narrators.base import Narrator
from narrators.http_endpoint import HttpEndpointNarrator
from narrators.ollama_api import OllamaNarrator

logger = logging.getLogger(__name__)


class NarrationController:
    """
    Owns the optional external narrator. Any failure degrades to the
    template-only report with a warning; nothing here raises.
    """

    def __init__(self, explain_cfg):
        self.cfg = explain_cfg
        self.narrator: Narrator | None = None
        self.is_initialized = self.initialize()

    def initialize(self) -> bool:
        kind = self.cfg.narrator
        if kind == "http":
            if not self.cfg.endpoint_url:
                logger.warning("HTTP narrator selected but no endpoint URL is configured")
                return False
            self.narrator = HttpEndpointNarrator(self.cfg.endpoint_url, self.cfg.model, self.cfg.timeout_ms)
        elif kind == "ollama":
            self.narrator = OllamaNarrator(self.cfg.ollama_url, self.cfg.model, self.cfg.timeout_ms)
        else:
            return False
        return True

    def narrate(self, prompt: dict[str, any]) -> str:
        if not self.is_initialized:
            return ""
        try:
            text = self.narrator.narrate(prompt)
        except (requests.RequestException, ValueError) as e:
            logger.warning("Narrator unavailable, keeping the template-only report: %s", e)
            return ""
        if not text or not text.strip():
            logger.warning("Narrator returned an empty reply, keeping the template-only report")
            return ""
        return text
