from abc import ABC, abstractmethod


class Narrator(ABC):

    @abstractmethod
    def narrate(self, prompt: dict[str, any]) -> str:
        """
        Turn a structured explanation prompt into prose. Must be implemented by subclasses.

        Args:
            prompt (dict): prediction_kg, s_visual, s_meta, shapley_top3 and related fields

        Returns:
            str: generated text (may be empty)

        Raises:
            requests.RequestException: the service is unreachable or answered with an error
        """
        pass
