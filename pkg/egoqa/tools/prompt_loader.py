"""
Prompt loader for the chat gateway's text templates
"""
from pathlib import Path

from jinja2 import Environment, FileSystemLoader, StrictUndefined, Template, TemplateNotFound, UndefinedError

from egoqa.errors import MissingInput

PROMPTS_DIR = Path(__file__).parent.parent / "prompts"


class PromptLoader:
    """Load prompt templates from egoqa/prompts/{name}.txt"""

    # Jinja caches compiled templates per environment
    _env = Environment(
        loader=FileSystemLoader(str(PROMPTS_DIR), encoding="utf-8"),
        undefined=StrictUndefined,
        keep_trailing_newline=False,
        autoescape=False,
    )

    @classmethod
    def load(cls, name: str) -> Template:
        """
        Load a prompt template by name

        Args:
            name: Prompt name (e.g., 'judge_open', 'caption_task')

        Returns:
            Jinja2 Template object ready for rendering

        Raises:
            MissingInput: No template with that name
        """
        try:
            return cls._env.get_template(f"{name}.txt")
        except TemplateNotFound as e:
            raise MissingInput(f"Prompt template not found: {PROMPTS_DIR / (name + '.txt')}") from e

    @classmethod
    def render(cls, name: str, **values) -> str:
        """
        Render a prompt; every variable the template uses must be supplied.

        Example:
            PromptLoader.render("judge_binary", question="...", ground_truth="...", prediction="...", previous=None)
        """
        try:
            return cls.load(name).render(**values)
        except UndefinedError as e:
            raise MissingInput(f"Prompt '{name}' is missing a value: {e.message}") from e

    @classmethod
    def clear_cache(cls):
        cls._env.cache.clear()
