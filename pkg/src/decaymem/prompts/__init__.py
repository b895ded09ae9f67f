"""System prompts for each gateway role, bundled as text assets."""

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def system_prompt(role: str) -> str:
    return resources.files(__name__).joinpath(f"{role}.md").read_text(encoding="utf-8")
