"""
Image files, preprocessing and IR/VIS pair discovery.

Images are handled as 2-D uint8 arrays (``GrayImageU8``). Binary PGM (P5)
is read and written natively; PNG goes through Pillow.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.amfusion.errors import DataIOError, FormatError, ShapeError
from src.amfusion.tensor import Tensor

logger = logging.getLogger(__name__)

GrayImageU8 = np.ndarray

IMAGE_SUFFIXES = (".pgm", ".png")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")

PathLike = Union[str, Path]


@dataclass
class ImagePair:
    id: str
    ir: Tensor
    vis: Tensor


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def decode_pgm(payload: bytes, source: str = "<bytes>") -> GrayImageU8:
    """
    Decode a binary 8-bit PGM (P5).

    Raises:
        FormatError: On a non-P5 header, a maxval other than 255 or short data
    """
    pos = 0
    fields = []
    for _ in range(4):
        match = _PGM_TOKEN.match(payload, pos)
        if match is None:
            raise FormatError(f"{source}: truncated PGM header")
        fields.append(match.group(1))
        pos = match.end()
    magic, width, height, maxval = fields
    if magic != b"P5":
        raise FormatError(f"{source}: unsupported PGM magic {magic!r} (only binary P5)")
    try:
        w, h, maxv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{source}: malformed PGM header") from exc
    if maxv != 255:
        raise FormatError(f"{source}: unsupported PGM bit depth (maxval {maxv}, need 255)")
    if w < 1 or h < 1:
        raise FormatError(f"{source}: PGM has empty dimensions {w}x{h}")
    # a single whitespace byte separates the header from the raster
    pos += 1
    raster = payload[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"{source}: PGM raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def encode_pgm(img: GrayImageU8) -> bytes:
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def rgb_to_gray(rgb: np.ndarray) -> GrayImageU8:
    """floor(0.299 R + 0.587 G + 0.114 B + 0.5) per pixel."""
    wr, wg, wb = LUMA_WEIGHTS
    rgb = rgb.astype(np.float64)
    luma = wr * rgb[..., 0] + wg * rgb[..., 1] + wb * rgb[..., 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def _decode_png(path: Path) -> GrayImageU8:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return np.asarray(im, dtype=np.uint8).copy()
            if mode == "LA":
                return np.asarray(im.getchannel("L"), dtype=np.uint8).copy()
            if mode in ("RGB", "RGBA", "P"):
                return rgb_to_gray(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"{path}: cannot decode PNG ({exc})") from exc
    raise FormatError(f"{path}: unsupported PNG mode {mode} (need 8-bit gray or RGB)")


def load_gray(path: PathLike) -> GrayImageU8:
    """
    Load a PGM or PNG file as an 8-bit grayscale image.

    Raises:
        DataIOError: If the file cannot be read
        FormatError: If the format or bit depth is unsupported
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return decode_pgm(_read_bytes(path), str(path))
    if suffix == ".png":
        if not path.is_file():
            raise DataIOError(f"cannot read {path}: no such file")
        return _decode_png(path)
    raise FormatError(f"{path}: unsupported image format {suffix!r} (use .pgm or .png)")


def crop_center(img: GrayImageU8, height: int, width: int) -> GrayImageU8:
    """
    Center crop with floor-biased offsets floor((dim - size) / 2).

    Raises:
        ShapeError: If the image is smaller than the crop
    """
    h, w = img.shape
    if h < height or w < width:
        raise ShapeError(f"image {h}x{w} is smaller than the {height}x{width} crop")
    top = (h - height) // 2
    left = (w - width) // 2
    return img[top:top + height, left:left + width]


def preprocess(img: GrayImageU8, side: int) -> Tensor:
    """Center-crop to side x side and map v -> v / 127.5 - 1 (1 x 1 x side x side)."""
    cropped = crop_center(np.asarray(img), side, side).astype(np.float64)
    return Tensor((cropped / 127.5 - 1.0)[None, None])


def to_tensor(img: GrayImageU8) -> Tensor:
    """Full-frame variant of ``preprocess`` (no crop)."""
    return Tensor((np.asarray(img, dtype=np.float64) / 127.5 - 1.0)[None, None])


def quantize(t: Union[Tensor, np.ndarray]) -> GrayImageU8:
    """floor((v + 1) * 127.5 + 0.5) clamped to [0, 255]; accepts 1 x 1 x H x W or H x W."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 4:
        if data.shape[:2] != (1, 1):
            raise ShapeError(f"quantize expects a single 1-channel image, got {data.shape}")
        data = data[0, 0]
    if data.ndim != 2:
        raise ShapeError(f"quantize expects a 2-D image, got shape {data.shape}")
    return np.clip(np.floor((data + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def save_gray(t: Union[Tensor, np.ndarray], path: PathLike):
    """
    Write an image as PGM or PNG chosen by extension. Tensors in [-1, 1]
    are quantized first; uint8 arrays are written as they are.
    """
    path = Path(path)
    arr = np.asarray(t) if not isinstance(t, Tensor) else None
    img = arr if arr is not None and arr.dtype == np.uint8 and arr.ndim == 2 else quantize(t)
    suffix = path.suffix.lower()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if suffix == ".pgm":
            path.write_bytes(encode_pgm(img))
        elif suffix == ".png":
            Image.fromarray(img).save(path, format="PNG")
        else:
            raise FormatError(f"{path}: unsupported image format {suffix!r} (use .pgm or .png)")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    logger.debug("saved image path=%s shape=%s", path, img.shape)


def _image_stems(directory: Path) -> dict:
    if not directory.is_dir():
        raise DataIOError(f"not a directory: {directory}")
    found = {}
    for entry in sorted(directory.iterdir()):
        if entry.is_file() and entry.suffix.lower() in IMAGE_SUFFIXES:
            if entry.stem in found:
                logger.warning("duplicate stem %s in %s, keeping %s", entry.stem, directory, found[entry.stem].name)
                continue
            found[entry.stem] = entry
    return found


def discover_pairs(ir_dir: PathLike, vis_dir: PathLike) -> List[Tuple[str, Path, Path]]:
    """
    Match IR and VIS images by identical (case-sensitive) filename stem.

    Returns:
        Sorted list of (stem, ir_path, vis_path); unmatched files are logged
        as warnings
    """
    ir = _image_stems(Path(ir_dir))
    vis = _image_stems(Path(vis_dir))
    for stem in sorted(set(ir) ^ set(vis)):
        side = "IR" if stem in ir else "VIS"
        logger.warning("unmatched %s image: %s", side, (ir if stem in ir else vis)[stem])
    pairs = [(stem, ir[stem], vis[stem]) for stem in sorted(set(ir) & set(vis))]
    logger.info("discovered pairs=%d ir_dir=%s vis_dir=%s", len(pairs), ir_dir, vis_dir)
    return pairs


def load_pair(stem: str, ir_path: PathLike, vis_path: PathLike, side: int) -> ImagePair:
    """
    Load and preprocess one registered pair.

    Raises:
        ShapeError: If the two images differ in size or are smaller than side
    """
    ir = load_gray(ir_path)
    vis = load_gray(vis_path)
    if ir.shape != vis.shape:
        raise ShapeError(f"pair {stem}: IR {ir.shape} and VIS {vis.shape} differ in size")
    return ImagePair(stem, preprocess(ir, side), preprocess(vis, side))
