"""mini-homo 工具模块。"""

from .seeding import child_seed, derive_seed, make_rng
from .terminal_utils import calculate_display_width, format_table, pad_to_width

__all__ = [
    "calculate_display_width",
    "child_seed",
    "derive_seed",
    "format_table",
    "make_rng",
    "pad_to_width",
]
