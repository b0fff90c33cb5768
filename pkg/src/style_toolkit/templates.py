"""Sentence-template banks for prompt engineering.

Embedding a class name through many paraphrasing templates and averaging the
results denoises the class embedding. The default bank is the standard
80-template set used for zero-shot image classification; custom banks load
from newline-delimited text files whose lines each contain exactly one ``{}``
slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

DEFAULT_BANK_ID = "imagenet80"

DEFAULT_TEMPLATES: tuple[str, ...] = (
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a sculpture of a {}.",
    "a photo of the hard to see {}.",
    "a low resolution photo of the {}.",
    "a rendering of a {}.",
    "graffiti of a {}.",
    "a bad photo of the {}.",
    "a cropped photo of the {}.",
    "a tattoo of a {}.",
    "the embroidered {}.",
    "a photo of a hard to see {}.",
    "a bright photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a drawing of a {}.",
    "a photo of my {}.",
    "the plastic {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a black and white photo of the {}.",
    "a painting of the {}.",
    "a painting of a {}.",
    "a pixelated photo of the {}.",
    "a sculpture of the {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a plastic {}.",
    "a photo of the dirty {}.",
    "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a rendering of the {}.",
    "a {} in a video game.",
    "a photo of one {}.",
    "a doodle of a {}.",
    "a close-up photo of the {}.",
    "a photo of a {}.",
    "the origami {}.",
    "the {} in a video game.",
    "a sketch of a {}.",
    "a doodle of the {}.",
    "a origami {}.",
    "a low resolution photo of a {}.",
    "the toy {}.",
    "a rendition of the {}.",
    "a photo of the clean {}.",
    "a photo of a large {}.",
    "a rendition of a {}.",
    "a photo of a nice {}.",
    "a photo of a weird {}.",
    "a blurry photo of a {}.",
    "a cartoon {}.",
    "art of a {}.",
    "a sketch of the {}.",
    "a embroidered {}.",
    "a pixelated photo of a {}.",
    "itap of the {}.",
    "a jpeg corrupted photo of the {}.",
    "a good photo of a {}.",
    "a plushie {}.",
    "a photo of the nice {}.",
    "a photo of the small {}.",
    "a photo of the weird {}.",
    "the cartoon {}.",
    "art of the {}.",
    "a drawing of the {}.",
    "a photo of the large {}.",
    "a black and white photo of a {}.",
    "the plushie {}.",
    "a dark photo of a {}.",
    "itap of a {}.",
    "graffiti of the {}.",
    "a toy {}.",
    "itap of my {}.",
    "a photo of a cool {}.",
    "a photo of a small {}.",
    "a tattoo of the {}.",
)


def _validate_template(template: str) -> str:
    if template.count("{}") != 1:
        raise ValueError(f"template must contain exactly one {{}} slot: {template!r}")
    return template


@dataclass(frozen=True)
class TemplateBank:
    """An ordered, validated list of single-slot sentence templates."""

    bank_id: str
    templates: tuple[str, ...]

    def __post_init__(self):
        templates = tuple(_validate_template(t) for t in self.templates)
        if not templates:
            raise ValueError("template bank must contain at least one template")
        object.__setattr__(self, "templates", templates)

    def __len__(self) -> int:
        return len(self.templates)

    def expand(self, class_text: str) -> list[str]:
        """Substitute a class name into every template."""
        return [t.format(class_text) for t in self.templates]

    @classmethod
    def default(cls) -> "TemplateBank":
        return cls(DEFAULT_BANK_ID, DEFAULT_TEMPLATES)

    @classmethod
    def from_file(cls, path, bank_id: str | None = None) -> "TemplateBank":
        """Load a newline-delimited bank; blank lines are skipped."""
        path = Path(path)
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        return cls(bank_id or path.stem, tuple(ln for ln in lines if ln))


def get_bank(bank_id: str) -> TemplateBank:
    if bank_id == DEFAULT_BANK_ID:
        return TemplateBank.default()
    raise KeyError(f"unknown template bank {bank_id!r}")
