"""图像类型上的栅格操作与读写。"""

from .io import load_image, load_mask, save_image, save_mask
from .raster import (
    center_crop,
    feature_array,
    feature_extract,
    fully_covered,
    gradient_magnitude,
    gray_array,
    normalize_intensity,
    resize_array,
    seam_energy,
    to_grayscale,
    warp,
    warp_array,
    warp_mask,
)

__all__ = [
    "center_crop",
    "feature_array",
    "feature_extract",
    "fully_covered",
    "gradient_magnitude",
    "gray_array",
    "load_image",
    "load_mask",
    "normalize_intensity",
    "resize_array",
    "save_image",
    "save_mask",
    "seam_energy",
    "to_grayscale",
    "warp",
    "warp_array",
    "warp_mask",
]
