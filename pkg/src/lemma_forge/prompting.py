"""Prompt templates: packaged text files with ``{{placeholder}}`` slots."""

from __future__ import annotations

import re
from importlib import resources

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")

TEMPLATE_NAMES = (
    "enumerate_objects.txt",
    "extract.txt",
    "sc_judge.txt",
    "prove.txt",
    "proof_judge.txt",
)


def load_template(name: str) -> str:
    return (resources.files("lemma_forge") / "prompts" / name).read_text(encoding="utf-8")


def render(name: str, **values: str) -> str:
    """Fill a template; unknown or leftover placeholders are hard errors."""
    template = load_template(name)
    slots = set(_PLACEHOLDER_RE.findall(template))
    extra = set(values) - slots
    if extra:
        raise ValueError(f"template {name} has no slot for {sorted(extra)}")
    missing = slots - set(values)
    if missing:
        raise ValueError(f"template {name} missing values for {sorted(missing)}")
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)
