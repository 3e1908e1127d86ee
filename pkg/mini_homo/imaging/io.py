"""图像读写

8 位 PNG 与 PGM/PPM（按后缀选择格式），浮点到 8 位按 floor(x * 255 + 0.5) 四舍五入。
"""

from pathlib import Path

import numpy as np
from PIL import Image

from ..schema import ImageBuf, PlaneMask

SUPPORTED_SUFFIXES = {".png", ".pgm", ".ppm"}


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _check_suffix(path: Path) -> None:
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ValueError(f"不支持的图像格式: {path.suffix}（支持 {sorted(SUPPORTED_SUFFIXES)}）")


def save_image(img: ImageBuf, path: str | Path) -> Path:
    """保存图像；归一化图像不能直接保存。

    Returns:
        写入的路径
    """
    path = Path(path)
    _check_suffix(path)
    if img.normalized:
        raise ValueError("归一化图像不能保存为 8 位图像")
    if path.suffix.lower() == ".pgm" and img.channels != 1:
        raise ValueError("PGM 只能保存单通道图像")
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(img.data)
    if img.channels == 1:
        pil = Image.fromarray(pixels[:, :, 0])
    else:
        pil = Image.fromarray(pixels)
    pil.save(path)
    return path


def load_image(path: str | Path, grayscale: bool = False) -> ImageBuf:
    """读取图像为 [0, 1] 浮点 ImageBuf。

    Raises:
        FileNotFoundError: 文件不存在
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"图像不存在: {path}")
    _check_suffix(path)
    with Image.open(path) as pil:
        if grayscale or pil.mode in ("L", "1", "P", "I", "I;16"):
            pixels = np.asarray(pil.convert("L"), dtype=np.float64)
        else:
            pixels = np.asarray(pil.convert("RGB"), dtype=np.float64)
    return ImageBuf(data=pixels / 255.0)


def save_mask(mask: PlaneMask, path: str | Path) -> Path:
    return save_image(ImageBuf(data=mask.weights), path)


def load_mask(path: str | Path) -> PlaneMask:
    return PlaneMask(weights=load_image(path, grayscale=True).data[:, :, 0])
