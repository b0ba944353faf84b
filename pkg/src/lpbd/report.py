"""Flat key-value report files.

Layout (UTF-8):

    # lpbd report v1
    [section]
    key = value

Sections and keys keep insertion order; values are rendered with repr for
floats (infinity becomes the sentinel "infinite"), so identical runs
produce byte-identical files. No timestamps are written.
"""

import math

from .errors import DataFormatError

HEADER = "# lpbd report v1"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "infinite" if value > 0 else "-infinite"
        return repr(value)
    return str(value)


def render_report(sections: dict[str, dict]) -> str:
    lines = [HEADER]
    for section, body in sections.items():
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in body.items():
            lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def write_report(path: str, sections: dict[str, dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report(sections))


def parse_report(text: str) -> dict[str, dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise DataFormatError(f"missing report header line {HEADER!r}")
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if current is None or " = " not in line:
            raise DataFormatError(f"malformed report line {lineno}: {line!r}")
        key, value = line.split(" = ", 1)
        current[key] = value
    return sections


def read_report(path: str) -> dict[str, dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_report(fh.read())


def parse_number(value: str) -> float:
    if value == "infinite":
        return math.inf
    if value == "-infinite":
        return -math.inf
    return float(value)
