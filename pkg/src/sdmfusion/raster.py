"""Multi-band raster patches: spectral indices, resizing, windows, augmentation.

Patches are immutable values. Every transform returns a new patch; the
``landcover`` band always goes through nearest-neighbour sampling so that it
keeps integer class IDs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

LANDCOVER = "landcover"
N_LANDCOVER_CLASSES = 10

PATCH_MAGIC = b"ASDM"
_NAME_BYTES = 16


@dataclass(frozen=True, eq=False)
class RasterPatch:
    """A stack of equally sized bands, stored as a (bands, height, width) array."""

    bands: tuple[str, ...]
    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[None]
        if px.ndim != 3:
            raise ValueError(f"pixels must be (bands, h, w), got shape {px.shape}")
        bands = tuple(self.bands)
        if len(bands) != px.shape[0]:
            raise ValueError(f"{len(bands)} band names for {px.shape[0]} bands")
        if len(set(bands)) != len(bands):
            raise ValueError(f"duplicate band names {bands}")
        if px.shape[1] < 1 or px.shape[2] < 1:
            raise ValueError("patch height and width must be positive")
        if not np.all(np.isfinite(px)):
            raise ValueError("patch pixels must be finite")
        if LANDCOVER in bands:
            lc = px[bands.index(LANDCOVER)]
            if np.any(lc != np.round(lc)) or lc.min() < 0 or lc.max() >= N_LANDCOVER_CLASSES:
                raise ValueError("landcover band must hold integer class IDs 0-9")
        px.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def band(self, name: str) -> np.ndarray:
        try:
            return self.pixels[self.bands.index(name)]
        except ValueError:
            raise KeyError(f"patch has no band {name!r} (bands: {', '.join(self.bands)})") from None

    def select(self, *names: str) -> "RasterPatch":
        return RasterPatch(names, np.stack([self.band(n) for n in names]))

    def __eq__(self, other):
        if not isinstance(other, RasterPatch):
            return NotImplemented
        return self.bands == other.bands and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"RasterPatch(bands={self.bands}, {self.height}x{self.width})"


@dataclass(frozen=True)
class AugmentationConfig:
    hflip_prob: float = 0.5
    rotation_deg: tuple[float, float] = (-10.0, 10.0)
    scale: tuple[float, float] = (0.6, 1.4)
    resize_targets: tuple[tuple[int, int], ...] = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        lo, hi = self.rotation_deg
        if lo > hi:
            raise ValueError(f"rotation range {self.rotation_deg} is reversed")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ValueError(f"scale range must be positive and ordered, got {self.scale}")
        for h, w in self.resize_targets:
            if h < 1 or w < 1:
                raise ValueError(f"resize target {(h, w)} must be positive")


def _normalized_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = a - b
    den = a + b
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    # reflectances are non-negative in practice; clip guards odd inputs
    return np.clip(out, -1.0, 1.0)


def ndvi(patch: RasterPatch) -> RasterPatch:
    """(NIR - Red) / (NIR + Red); zero-denominator pixels map to 0."""
    return RasterPatch(("ndvi",), _normalized_difference(patch.band("nir"), patch.band("red"))[None])


def ndwi(patch: RasterPatch) -> RasterPatch:
    """(Green - NIR) / (Green + NIR); zero-denominator pixels map to 0."""
    return RasterPatch(("ndwi",), _normalized_difference(patch.band("green"), patch.band("nir"))[None])


def dominant_class(patch: RasterPatch) -> int:
    """Most frequent landcover class; ties go to the lowest class ID."""
    lc = patch.band(LANDCOVER).astype(int).ravel()
    return int(np.argmax(np.bincount(lc, minlength=N_LANDCOVER_CLASSES)))


def _sample_band(band: np.ndarray, rows: np.ndarray, cols: np.ndarray, nearest: bool) -> np.ndarray:
    """Sample ``band`` at fractional (rows, cols), clamping to the edge pixels."""
    if nearest:
        r = np.clip(np.floor(rows + 0.5).astype(int), 0, band.shape[0] - 1)
        c = np.clip(np.floor(cols + 0.5).astype(int), 0, band.shape[1] - 1)
        return band[r, c]
    return ndimage.map_coordinates(band, [rows, cols], order=1, mode="nearest")


def _remap(patch: RasterPatch, rows: np.ndarray, cols: np.ndarray) -> RasterPatch:
    out = [_sample_band(patch.pixels[i], rows, cols, name == LANDCOVER)
           for i, name in enumerate(patch.bands)]
    return RasterPatch(patch.bands, np.stack(out))


def resize_patch(patch: RasterPatch, target_h: int, target_w: int) -> RasterPatch:
    """Resize with half-pixel-centre sampling.

    Continuous bands are bilinear, landcover is nearest-neighbour.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"resize target must be positive, got ({target_h}, {target_w})")
    h, w = patch.height, patch.width
    if (h, w) == (target_h, target_w):
        return patch
    rr = (np.arange(target_h) + 0.5) * h / target_h - 0.5
    cc = (np.arange(target_w) + 0.5) * w / target_w - 0.5
    rows, cols = np.meshgrid(rr, cc, indexing="ij")
    out = []
    for i, name in enumerate(patch.bands):
        if name == LANDCOVER:
            ri = np.minimum(np.floor((np.arange(target_h) + 0.5) * h / target_h).astype(int), h - 1)
            ci = np.minimum(np.floor((np.arange(target_w) + 0.5) * w / target_w).astype(int), w - 1)
            out.append(patch.pixels[i][np.ix_(ri, ci)])
        else:
            out.append(_sample_band(patch.pixels[i], rows, cols, nearest=False))
    return RasterPatch(patch.bands, np.stack(out))


def sliding_window(patch: RasterPatch, win_h: int, win_w: int, stride: int) -> list[RasterPatch]:
    """All fully contained windows in row-major order."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if win_h < 1 or win_w < 1:
        raise ValueError("window dims must be positive")
    if win_h > patch.height or win_w > patch.width:
        raise ValueError(f"window {win_h}x{win_w} larger than patch {patch.height}x{patch.width}")
    out = []
    for r in range(0, patch.height - win_h + 1, stride):
        for c in range(0, patch.width - win_w + 1, stride):
            out.append(RasterPatch(patch.bands, patch.pixels[:, r:r + win_h, c:c + win_w]))
    return out


def hflip(patch: RasterPatch) -> RasterPatch:
    return RasterPatch(patch.bands, patch.pixels[:, :, ::-1])


def rotate(patch: RasterPatch, angle_deg: float) -> RasterPatch:
    """Rotate counter-clockwise (as displayed, row 0 on top) about the patch
    centre; out-of-frame pixels are clamped to the nearest edge pixel."""
    if angle_deg == 0:
        return patch
    h, w = patch.height, patch.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.radians(angle_deg)
    y, x = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse map: output pixel -> source location
    src_r = cy + np.cos(t) * y + np.sin(t) * x
    src_c = cx - np.sin(t) * y + np.cos(t) * x
    return _remap(patch, src_r, src_c)


def zoom(patch: RasterPatch, factor: float) -> RasterPatch:
    """Scale content about the centre by ``factor`` keeping the patch size."""
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    if factor == 1:
        return patch
    h, w = patch.height, patch.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    y, x = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    return _remap(patch, cy + y / factor, cx + x / factor)


def augment(patch: RasterPatch, cfg: AugmentationConfig,
            rng: np.random.Generator | None = None) -> RasterPatch:
    """Random flip, rotation, zoom and resize, in that order.

    All four random draws are taken on every call, so the stream position
    after the call does not depend on which transforms fired.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    do_flip = rng.random() < cfg.hflip_prob
    angle = rng.uniform(*cfg.rotation_deg)
    factor = rng.uniform(*cfg.scale)
    target_idx = int(rng.integers(len(cfg.resize_targets))) if cfg.resize_targets else -1

    out = hflip(patch) if do_flip else patch
    out = rotate(out, angle)
    out = zoom(out, factor)
    if target_idx >= 0:
        out = resize_patch(out, *cfg.resize_targets[target_idx])
    return out


# -- binary patch files ------------------------------------------------------

def encode_patch(patch: RasterPatch) -> bytes:
    if max(patch.height, patch.width, len(patch.bands)) > 0xFFFF:
        raise ValueError("patch dimensions exceed u16")
    buf = io.BytesIO()
    buf.write(PATCH_MAGIC)
    buf.write(struct.pack("<HHH", len(patch.bands), patch.height, patch.width))
    for i, name in enumerate(patch.bands):
        raw = name.encode("ascii")
        if len(raw) > _NAME_BYTES:
            raise ValueError(f"band name {name!r} longer than {_NAME_BYTES} bytes")
        buf.write(raw.ljust(_NAME_BYTES, b"\0"))
        buf.write(patch.pixels[i].astype("<f4").tobytes(order="C"))
    return buf.getvalue()


def decode_patch(data: bytes) -> RasterPatch:
    if data[:4] != PATCH_MAGIC:
        raise ValueError("not an ASDM patch (bad magic)")
    n_bands, h, w = struct.unpack_from("<HHH", data, 4)
    off = 10
    band_bytes = 4 * h * w
    names, arrays = [], []
    for _ in range(n_bands):
        if off + _NAME_BYTES + band_bytes > len(data):
            raise ValueError("truncated ASDM patch")
        names.append(data[off:off + _NAME_BYTES].rstrip(b"\0").decode("ascii"))
        off += _NAME_BYTES
        arrays.append(np.frombuffer(data, dtype="<f4", count=h * w, offset=off).reshape(h, w))
        off += band_bytes
    if off != len(data):
        raise ValueError(f"{len(data) - off} trailing bytes after ASDM patch")
    return RasterPatch(tuple(names), np.stack(arrays).astype(np.float64))


def write_patch(patch: RasterPatch, path) -> None:
    Path(path).write_bytes(encode_patch(patch))


def read_patch(path) -> RasterPatch:
    return decode_patch(Path(path).read_bytes())


def patch_path(directory, row: int, col: int, modality: str) -> Path:
    """Conventional file name for one cell's patch of one modality."""
    return Path(directory) / f"r{row:04d}_c{col:04d}_{modality.lower()}.asdm"


def dump_band(patch: RasterPatch, band: str) -> str:
    """Plain-text matrix of one band, one row per line."""
    buf = io.StringIO()
    np.savetxt(buf, patch.band(band), fmt="%.6g")
    return buf.getvalue()
