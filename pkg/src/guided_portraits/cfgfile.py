"""Line-oriented ``key = value`` files with repeatable ``[section]`` headers.

``configparser`` merges or rejects repeated section names, but registries and
suites list one ``[expert]`` / ``[category]`` block per entry, so sections are
kept as an ordered list here.

    # comment
    [expert]
    id = anything-v5
    tags = anime, cartoon
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError


@dataclass
class Section:
    name: str
    values: dict[str, str] = field(default_factory=dict)
    line: int = 0

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        try:
            return self.values[key]
        except KeyError:
            raise ValidationError(f"[{self.name}] block at line {self.line} is missing key {key!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float | None:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ValidationError(f"[{self.name}] {key} = {raw!r} is not a number") from None

    def get_list(self, key: str) -> list[str]:
        raw = self.values.get(key, "")
        return [item.strip() for item in raw.split(",") if item.strip()]


def parse(text: str) -> list[Section]:
    """Parse config text; keys before any header go to a section named ``""``."""
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = Section(line[1:-1].strip(), {}, lineno)
            sections.append(current)
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"line {lineno}: empty key")
        if current is None:
            current = Section("", {}, lineno)
            sections.append(current)
        if key in current.values:
            raise ValidationError(f"line {lineno}: duplicate key {key!r} in [{current.name}]")
        current.values[key] = value.strip()
    return sections


def load(path) -> list[Section]:
    return parse(Path(path).read_text(encoding="utf-8"))


def dump(sections: list[Section], header: str | None = None) -> str:
    out = []
    if header:
        out.extend(f"# {line}" if line else "#" for line in header.splitlines())
        out.append("")
    for i, sec in enumerate(sections):
        if i:
            out.append("")
        if sec.name:
            out.append(f"[{sec.name}]")
        for key, value in sec.values.items():
            text = str(value)
            if "\n" in text:
                raise ValidationError(f"value for {key!r} spans several lines")
            out.append(f"{key} = {text}")
    return "\n".join(out) + "\n"


def sections_named(sections: list[Section], name: str) -> list[Section]:
    return [s for s in sections if s.name == name]
