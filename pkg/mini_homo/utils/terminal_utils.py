"""终端表格显示工具

计算可见宽度时忽略 ANSI 颜色码，中日韩宽字符按 2 列计。
"""

import re
import unicodedata

ANSI_ESCAPE_RE = re.compile(r"\x1b\[[0-9;]*m")


def calculate_display_width(text: str) -> int:
    """文本在终端中占用的列数。

    Examples:
        >>> calculate_display_width("PME")
        3
        >>> calculate_display_width("类别")
        4
    """
    width = 0
    for char in ANSI_ESCAPE_RE.sub("", text):
        if unicodedata.combining(char):
            continue
        width += 2 if unicodedata.east_asian_width(char) in ("W", "F") else 1
    return width


def pad_to_width(text: str, target_width: int, align: str = "left") -> str:
    """按可见宽度补齐空格。

    Raises:
        ValueError: align 不是 left/right
    """
    padding = max(0, target_width - calculate_display_width(text))
    if align == "left":
        return text + " " * padding
    if align == "right":
        return " " * padding + text
    raise ValueError(f"Invalid align value: {align}. Must be 'left' or 'right'")


def format_cell(value: object, precision: int = 4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{precision}f}"
    return str(value)


def format_table(headers: list[str], rows: list[list[object]], precision: int = 4) -> str:
    """把表头和行渲染成对齐的纯文本表格（数字右对齐）。"""
    cells = [[format_cell(v, precision) for v in row] for row in rows]
    widths = [calculate_display_width(h) for h in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], calculate_display_width(cell))

    def render(row: list[str], raw: list[object] | None) -> str:
        parts = []
        for i, cell in enumerate(row):
            numeric = raw is not None and isinstance(raw[i], (int, float)) and not isinstance(raw[i], bool)
            parts.append(pad_to_width(cell, widths[i], "right" if numeric else "left"))
        return "  ".join(parts).rstrip()

    lines = [render(headers, None), "  ".join("─" * w for w in widths)]
    lines.extend(render(row, raw) for row, raw in zip(cells, rows))
    return "\n".join(lines)
