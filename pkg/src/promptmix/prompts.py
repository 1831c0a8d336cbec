"""Shared prompt assembly: class blocks + instruction templates.

Templates live as text resources under ``promptmix/templates`` so the exact
bytes are versioned; golden-file tests pin the rendered output.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .data import ClassSpec


@lru_cache(maxsize=None)
def template(name: str) -> str:
    ref = resources.files("promptmix").joinpath("templates", f"{name}.txt")
    return ref.read_text(encoding="utf-8").rstrip("\n")


def class_block(cls: ClassSpec, *, include_description: bool = True) -> str:
    """One class section: name, optional description, numbered seed examples.

    The examples section is omitted entirely for zero-shot classes (k=0).
    """
    lines = [f"Class name: {cls.name}"]
    if include_description:
        lines.append(f"Description: {cls.description}")
    if cls.seed_examples:
        lines.append("Examples:")
        lines.extend(f"{i}. {text}" for i, text in enumerate(cls.seed_examples, start=1))
    return "\n".join(lines)


def class_section(classes: list[ClassSpec], *, include_descriptions: bool = True) -> str:
    blocks = [class_block(c, include_description=include_descriptions) for c in classes]
    return template("header") + "\n\n" + "\n\n".join(blocks)
