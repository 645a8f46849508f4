import re
from pathlib import Path

from jinja2 import Environment, StrictUndefined, TemplateSyntaxError, UndefinedError

from errors import DatasetIOError, TemplateError

DEFAULT_TEMPLATE = Path(__file__).resolve().parent.parent / "static" / "explanation_template.txt"


class ReportRenderer:
    def __init__(self, template_path: str | Path = DEFAULT_TEMPLATE):
        """
        Initialize the explanation report renderer

        Args:
            template_path (str): Path to the text template
        """
        self.template_path = Path(template_path)
        self.environment = Environment(undefined=StrictUndefined, trim_blocks=True,
                                       keep_trailing_newline=True, autoescape=False)

    def load_template(self) -> str:
        try:
            return self.template_path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DatasetIOError(f"Template file not found: {self.template_path}") from None

    def render(self, context: dict, template_text: str | None = None) -> str:
        """
        Render report fields into text

        Args:
            context (dict): template fields
            template_text (str): template source; defaults to the template file

        Returns:
            str: rendered report

        Raises:
            TemplateError: a placeholder has no value (names the placeholder)
        """
        source = self.load_template() if template_text is None else template_text
        try:
            template = self.environment.from_string(source)
            return template.render(**context)
        except UndefinedError as e:
            match = re.search(r"'([^']+)' is undefined", str(e))
            raise TemplateError(match.group(1) if match else str(e)) from e
        except TemplateSyntaxError as e:
            raise TemplateError(f"template syntax: {e.message}") from e
