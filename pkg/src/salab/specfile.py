"""Flat key-value experiment files with section headers.

The format is INI-shaped on purpose: sections in brackets, one `key =
value` per line, `#` comments.  Values are plain scalars, comma lists, or
semicolon-separated matrix rows.  Errors carry the file line so batch
runs fail with an addressable message.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

_SECTION_RE = re.compile(r"^\s*\[([A-Za-z0-9_-]+)\]\s*(?:#.*)?$")
_PAIR_RE = re.compile(r"^\s*([A-Za-z0-9_.-]+)\s*=\s*(.*?)\s*$")


class SpecError(Exception):
    """Spec validation failure; the CLI maps this to exit status 2."""

    def __init__(self, message: str, path: str = "<spec>", line: int | None = None):
        at = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(at + message)
        self.path = path
        self.line = line


@dataclass
class SpecFile:
    path: str
    sections: dict = field(default_factory=dict)          # section -> {key: value}
    lines: dict = field(default_factory=dict)             # (section, key) -> line no
    section_lines: dict = field(default_factory=dict)     # section -> line no

    @classmethod
    def parse(cls, path) -> "SpecFile":
        spec = cls(path=str(path))
        current = None
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].rstrip()
                if not line.strip():
                    continue
                m = _SECTION_RE.match(raw)
                if m:
                    current = m.group(1)
                    spec.sections.setdefault(current, {})
                    spec.section_lines.setdefault(current, lineno)
                    continue
                m = _PAIR_RE.match(line)
                if not m:
                    raise SpecError(f"unparseable line {line.strip()!r}", spec.path, lineno)
                if current is None:
                    raise SpecError("key-value pair before any [section]", spec.path, lineno)
                key, value = m.group(1), m.group(2)
                if key in spec.sections[current]:
                    raise SpecError(f"duplicate key {key!r} in [{current}]", spec.path, lineno)
                spec.sections[current][key] = value
                spec.lines[(current, key)] = lineno
        return spec

    # -- typed getters -----------------------------------------------------

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    def err(self, section: str, key: str, message: str) -> SpecError:
        line = self.lines.get((section, key), self.section_lines.get(section))
        return SpecError(f"[{section}] {key}: {message}", self.path, line)

    def _raw(self, section: str, key: str, default):
        if section not in self.sections:
            if default is not _REQUIRED:
                return default
            raise SpecError(f"missing section [{section}]", self.path)
        if key not in self.sections[section]:
            if default is not _REQUIRED:
                return default
            raise SpecError(f"[{section}] is missing key {key!r}", self.path,
                            self.section_lines.get(section))
        return self.sections[section][key]

    def get_str(self, section, key, default=None) -> str | None:
        raw = self._raw(section, key, default)
        return raw if raw is None else str(raw)

    def get_float(self, section, key, default=None) -> float | None:
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, float):
            return raw
        try:
            return float(raw)
        except ValueError:
            raise self.err(section, key, f"expected a number, got {raw!r}") from None

    def get_int(self, section, key, default=None) -> int | None:
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, int):
            return raw
        try:
            return int(str(raw))
        except ValueError:
            raise self.err(section, key, f"expected an integer, got {raw!r}") from None

    def get_bool(self, section, key, default=False) -> bool:
        raw = self._raw(section, key, default)
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise self.err(section, key, f"expected a boolean, got {raw!r}")

    def get_floats(self, section, key, default=None) -> list[float] | None:
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, list):
            return raw
        try:
            return [float(tok) for tok in re.split(r"[,\s]+", str(raw).strip()) if tok]
        except ValueError:
            raise self.err(section, key, f"expected a number list, got {raw!r}") from None

    def get_ints(self, section, key, default=None) -> list[int] | None:
        vals = self.get_floats(section, key, default)
        if vals is None or all(isinstance(v, int) for v in vals):
            return vals
        out = []
        for v in vals:
            if v != int(v):
                raise self.err(section, key, f"expected integers, got {v!r}")
            out.append(int(v))
        return out

    def get_matrix(self, section, key, default=None) -> np.ndarray | None:
        raw = self._raw(section, key, default)
        if raw is None or isinstance(raw, np.ndarray):
            return raw
        try:
            rows = [[float(tok) for tok in re.split(r"[,\s]+", row.strip()) if tok]
                    for row in str(raw).split(";")]
            mat = np.array(rows, dtype=float)
        except ValueError:
            raise self.err(section, key, f"expected matrix rows, got {raw!r}") from None
        if mat.ndim != 2 or len({len(r) for r in rows}) != 1:
            raise self.err(section, key, "matrix rows have unequal lengths")
        return mat


_REQUIRED = object()


def required(spec: SpecFile, getter: str, section: str, key: str):
    """Fetch a value, raising a line-addressed SpecError when absent."""
    return getattr(spec, getter)(section, key, _REQUIRED)
