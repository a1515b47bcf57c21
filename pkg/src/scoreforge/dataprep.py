"""Staff-image ingestion: grayscale conversion, square crops and dataset manifests.

Crops live on disk as 8-bit grayscale PNGs named ``<domain>_<source_id>_<offset>.png``.
A manifest is a JSON index over one domain's crops with a train/eval split that
is assigned per source page, so crops cut from the same staff never straddle
both splits.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MANIFEST_SUFFIX = ".json"


class Domain(str, enum.Enum):
    HANDWRITTEN = "handwritten"
    PRINTED = "printed"


@dataclass
class SourceImage:
    pixels: np.ndarray
    domain: Domain
    source_id: str

    def __post_init__(self):
        self.domain = Domain(self.domain)
        px = np.asarray(self.pixels)
        if px.ndim not in (2, 3):
            raise ValueError(f"expected H x W or H x W x C pixels, got shape {px.shape}")
        if px.ndim == 3 and px.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"empty image {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        self.pixels = px

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]


@dataclass
class ImageCrop:
    pixels: np.ndarray
    domain: Domain
    source_id: str
    offset_x: int

    @property
    def filename(self) -> str:
        return crop_filename(self.domain, self.source_id, self.offset_x)


@dataclass
class ManifestEntry:
    path: str
    source_id: str
    offset: int
    split: str = "train"


@dataclass
class DatasetManifest:
    domain: Domain
    crop_size: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default=Path("."), compare=False)
    rejects: list[tuple[str, str]] = field(default_factory=list, compare=False)

    @property
    def count(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def split(self) -> dict[str, str]:
        return {e.path: e.split for e in self.entries}

    def indices(self, split: str | None = None) -> list[int]:
        return [i for i, e in enumerate(self.entries) if split is None or e.split == split]

    def to_dict(self) -> dict:
        return {
            "domain": Domain(self.domain).value,
            "crop_size": self.crop_size,
            "entries": [
                {"path": e.path, "source_id": e.source_id, "offset": e.offset, "split": e.split}
                for e in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        entries = [ManifestEntry(e["path"], e["source_id"], int(e["offset"]), e["split"])
                   for e in data["entries"]]
        return cls(Domain(data["domain"]), int(data["crop_size"]), entries, root=path.parent)


def crop_filename(domain, source_id: str, offset: int) -> str:
    return f"{Domain(domain).value}_{source_id}_{int(offset)}.png"


def parse_crop_filename(name: str) -> tuple[Domain, str, int]:
    """Split ``<domain>_<source_id>_<offset>.png``; the source id may itself hold underscores."""
    stem = Path(name).stem
    head, sep, rest = stem.partition("_")
    source_id, sep2, offset = rest.rpartition("_")
    if not sep or not sep2 or not source_id:
        raise ValueError(f"not a crop filename: {name!r}")
    return Domain(head), source_id, int(offset)


def to_grayscale(image: SourceImage) -> SourceImage:
    if image.channels == 1:
        if image.pixels.ndim == 3:
            return SourceImage(image.pixels[:, :, 0], image.domain, image.source_id)
        return image
    rgb = image.pixels.astype(np.float64)
    luma = rgb @ np.asarray(LUMA_WEIGHTS)
    # np.rint rounds half to even
    gray = np.clip(np.rint(luma), 0, 255).astype(np.uint8)
    return SourceImage(gray, image.domain, image.source_id)


def _resize_height(pixels: np.ndarray, height: int) -> np.ndarray:
    if pixels.shape[0] == height:
        return pixels
    img = Image.fromarray(pixels.astype(np.uint8))
    return np.asarray(img.resize((pixels.shape[1], height), resample=Image.BOX))


def extract_square_crops(image: SourceImage, crop_size: int, stride: int | None = None) -> list[ImageCrop]:
    """Cut a staff image into ``crop_size`` squares from left to right.

    The image height is first rescaled to ``crop_size`` (vertical scaling only),
    then windows are taken at offsets ``0, stride, 2*stride, ...``. ``stride``
    defaults to ``crop_size`` which gives non-overlapping crops.
    """
    stride = crop_size if stride is None else stride
    if image.channels != 1:
        raise ValueError("extract_square_crops expects a grayscale image")
    if crop_size < 1 or stride < 1:
        raise ValueError(f"crop_size and stride must be >= 1, got {crop_size}, {stride}")
    pixels = image.pixels if image.pixels.ndim == 2 else image.pixels[:, :, 0]
    height, width = pixels.shape
    if crop_size > height:
        raise ValueError(f"crop_size {crop_size} exceeds image height {height}")
    if width < crop_size:
        logger.warning("source %s is narrower (%d px) than crop size %d; no crops taken",
                       image.source_id, width, crop_size)
        return []
    band = _resize_height(pixels, crop_size)
    n = (width - crop_size) // stride + 1
    return [
        ImageCrop(band[:, x:x + crop_size].copy(), image.domain, image.source_id, x)
        for x in range(0, n * stride, stride)
    ]


def save_crops(crops: Iterable[ImageCrop], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for crop in crops:
        path = directory / crop.filename
        Image.fromarray(crop.pixels.astype(np.uint8)).save(path)
        paths.append(path)
    return paths


def _split_for(source_id: str, eval_fraction: float) -> str:
    digest = hashlib.sha256(source_id.encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0**64
    return "eval" if u < eval_fraction else "train"


def build_manifest(directory: str | Path, domain, eval_fraction: float = 0.0) -> DatasetManifest:
    """Index every ``<domain>_*.png`` crop in ``directory``.

    Unreadable, non-square or inconsistently sized files are collected in
    ``manifest.rejects`` as ``(filename, reason)`` and left out.
    """
    if not 0.0 <= eval_fraction <= 1.0:
        raise ValueError(f"eval_fraction must be in [0, 1], got {eval_fraction}")
    domain = Domain(domain)
    directory = Path(directory)
    rows = []
    rejects = []
    crop_size = None
    for path in sorted(directory.glob(f"{domain.value}_*.png")):
        try:
            _, source_id, offset = parse_crop_filename(path.name)
            with Image.open(path) as img:
                img.load()
                w, h = img.size
        except Exception as exc:  # PIL raises a zoo of exception types
            rejects.append((path.name, f"{type(exc).__name__}: {exc}"))
            continue
        if w != h:
            rejects.append((path.name, f"not square ({w}x{h})"))
            continue
        if crop_size is None:
            crop_size = w
        elif w != crop_size:
            rejects.append((path.name, f"size {w} differs from {crop_size}"))
            continue
        rows.append((source_id, offset, path.name))

    rows.sort(key=lambda r: (r[0], r[1]))
    entries = [ManifestEntry(name, sid, off, _split_for(sid, eval_fraction)) for sid, off, name in rows]
    for r in rejects:
        logger.warning("rejected %s: %s", *r)
    return DatasetManifest(domain, crop_size or 0, entries, root=directory, rejects=rejects)


def manifest_path(directory: str | Path, domain) -> Path:
    return Path(directory) / f"manifest_{Domain(domain).value}{MANIFEST_SUFFIX}"


def read_grayscale(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("L"))


def to_unit_range(pixels) -> torch.Tensor:
    """Map 8-bit intensities linearly onto [-1, 1]."""
    return torch.as_tensor(np.asarray(pixels), dtype=torch.float32) / 127.5 - 1.0


def to_uint8(images: torch.Tensor) -> np.ndarray:
    x = images.detach().cpu().double().clamp(-1.0, 1.0).numpy()
    return np.rint((x + 1.0) * 127.5).astype(np.uint8)


def area_resize(batch: torch.Tensor, resolution: int) -> torch.Tensor:
    if batch.shape[-1] == resolution and batch.shape[-2] == resolution:
        return batch
    return F.interpolate(batch, size=(resolution, resolution), mode="area")


def load_batch(manifest: DatasetManifest, indices: Sequence[int], resolution: int) -> torch.Tensor:
    """Read crops into a ``(N, 1, resolution, resolution)`` float batch in [-1, 1]."""
    if manifest.crop_size and resolution > manifest.crop_size:
        raise ValueError(f"resolution {resolution} exceeds crop size {manifest.crop_size}")
    for i in indices:
        if not 0 <= int(i) < manifest.count:
            raise IndexError(f"index {i} out of range for manifest with {manifest.count} entries")
    if len(indices) == 0:
        return torch.empty(0, 1, resolution, resolution)
    arrays = [read_grayscale(manifest.root / manifest.entries[int(i)].path) for i in indices]
    batch = torch.as_tensor(np.stack(arrays)[:, None], dtype=torch.float32)
    batch = area_resize(batch, resolution)
    return (batch / 127.5 - 1.0).clamp(-1.0, 1.0)


def load_source_images(directory: str | Path, domain) -> tuple[list[SourceImage], list[tuple[str, str]]]:
    """Read every image file in ``directory`` as a source staff (source id = file stem)."""
    images, rejects = [], []
    for path in sorted(p for p in Path(directory).iterdir() if p.is_file()):
        try:
            with Image.open(path) as img:
                img.load()
                arr = np.asarray(img.convert("RGB") if img.mode not in ("L", "RGB") else img)
        except Exception as exc:
            rejects.append((path.name, f"{type(exc).__name__}: {exc}"))
            continue
        images.append(SourceImage(arr, domain, path.stem.replace(" ", "-")))
    return images, rejects


def load_image_dir(directory: str | Path, resolution: int | None = None) -> tuple[list[str], torch.Tensor]:
    """Read every PNG in ``directory`` into a [-1, 1] batch.

    Images are area-resampled to ``resolution`` when given; otherwise they must
    all share one size.
    """
    paths = sorted(Path(directory).glob("*.png"))
    tensors = [to_unit_range(read_grayscale(p))[None, None] for p in paths]
    if resolution is not None:
        tensors = [area_resize(t, resolution) for t in tensors]
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) > 1:
        raise ValueError(f"images in {directory} have mixed sizes {sorted(shapes)}")
    if not tensors:
        return [], torch.empty(0, 1, resolution or 0, resolution or 0)
    return [p.stem for p in paths], torch.cat(tensors)
