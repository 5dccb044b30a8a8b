"""Image loading, canonical rescaling, and per-patch descriptor extraction.

Images are 8-bit RGB held as numpy arrays of shape (height, width, 3).
Each patch yields a 32-dim descriptor: a 24-dim CIELAB color block
(8 bins per channel, marginal histograms, jointly L1-normalized) followed
by an 8-bin magnitude-weighted gradient-orientation histogram computed on
luminance.  The gradient block is all-zero for patches with no gradient
energy, otherwise L1-normalized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, patch_at

DEFAULT_COLOR_BINS = 8
DEFAULT_GRADIENT_BINS = 8


def descriptor_dim(color_bins: int = DEFAULT_COLOR_BINS,
                   gradient_bins: int = DEFAULT_GRADIENT_BINS) -> int:
    return 3 * color_bins + gradient_bins


class PpmError(ValueError):
    """Base class for PPM decoding problems."""


class MalformedHeaderError(PpmError):
    pass


class UnsupportedFormatError(PpmError):
    pass


class TruncatedPayloadError(PpmError):
    pass


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster; pixels has shape (height, width, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def load_image(path) -> RgbImage:
    """Decode a binary PPM (P6, maxval 255) file bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_ppm(data)


def decode_ppm(data: bytes) -> RgbImage:
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("unexpected end of PPM header")
        return data[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise MalformedHeaderError(f"not a binary PPM (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric PPM header field: {exc}") from exc
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # exactly one whitespace byte separates header and payload
    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, expected {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(pixels=pixels.copy())


def save_image(path, img: RgbImage) -> None:
    """Write a binary PPM (P6, maxval 255)."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


def scale_to_canonical(img: RgbImage, grid: GridSpec) -> RgbImage:
    """Bilinear resample to the grid's canonical image size.

    Identity when the image already has the canonical size.  Sample centers
    follow the half-pixel convention: output pixel x maps to source
    coordinate (x + 0.5) * (src / dst) - 0.5, clamped at the borders.
    Values are rounded half up before the uint8 cast.
    """
    out_w, out_h = grid.image_width, grid.image_height
    if img.width == out_w and img.height == out_h:
        return RgbImage(pixels=img.pixels.copy())

    src = img.pixels.astype(np.float64)

    def axis_coords(dst: int, length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(dst, dtype=np.float64) + 0.5) * length / dst - 0.5
        pos = np.clip(pos, 0.0, length - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, length - 1)
        return lo, hi, pos - lo

    x_lo, x_hi, wx = axis_coords(out_w, img.width)
    y_lo, y_hi, wy = axis_coords(out_h, img.height)

    top = src[y_lo][:, x_lo] * (1 - wx)[None, :, None] + src[y_lo][:, x_hi] * wx[None, :, None]
    bot = src[y_hi][:, x_lo] * (1 - wx)[None, :, None] + src[y_hi][:, x_hi] * wx[None, :, None]
    blended = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return RgbImage(pixels=np.floor(blended + 0.5).clip(0, 255).astype(np.uint8))


def rgb_to_lab(pixels: np.ndarray) -> np.ndarray:
    """sRGB bytes (h, w, 3) to CIELAB (D65), float64."""
    rgb = pixels.astype(np.float64) / 255.0
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    m = np.array([[0.4124564, 0.3575761, 0.1804375],
                  [0.2126729, 0.7151522, 0.0721750],
                  [0.0193339, 0.1191920, 0.9503041]])
    xyz = linear @ m.T
    white = np.array([0.95047, 1.0, 1.08883])
    t = xyz / white
    f = np.where(t > (6 / 29) ** 3, np.cbrt(t), t / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Y = 0.299 R + 0.587 G + 0.114 B on byte values."""
    p = pixels.astype(np.float64)
    return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


# Channel bin ranges for CIELAB histograms.
_LAB_RANGES = ((0.0, 100.0), (-128.0, 128.0), (-128.0, 128.0))


def _soft_channel_weights(values: np.ndarray, lo: float, hi: float,
                          bins: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linear soft assignment onto bin centers (clamped at the range ends).

    Returns (low bin, high bin, low weight, high weight) per pixel; weights
    sum to 1.  A value at a bin center puts all mass in that bin; between
    centers the mass splits proportionally, which keeps descriptors stable
    under small perturbations.
    """
    width = (hi - lo) / bins
    pos = np.clip((values - lo) / width - 0.5, 0.0, bins - 1.0)
    low = np.floor(pos).astype(np.int64)
    low = np.minimum(low, bins - 2) if bins > 1 else np.zeros_like(low)
    frac = pos - low if bins > 1 else np.zeros_like(pos)
    return low, low + 1 if bins > 1 else low, 1.0 - frac, frac


def _gradient_orientation(y_plane: np.ndarray, gradient_bins: int):
    """Soft circular orientation assignment and magnitude per pixel.

    Central differences in the interior, one-sided at borders (np.gradient).
    Bin centers sit at -pi + k * (2 pi / bins), so axis-aligned gradients
    land on a single bin; intermediate angles split between neighbors.
    """
    gy, gx = np.gradient(y_plane)
    magnitude = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)
    width = 2.0 * np.pi / gradient_bins
    pos = (angle + np.pi) / width
    low = np.floor(pos).astype(np.int64)
    frac = pos - low
    return low % gradient_bins, (low + 1) % gradient_bins, 1.0 - frac, frac, magnitude


def extract_descriptors(img: RgbImage, grid: GridSpec,
                        color_bins: int = DEFAULT_COLOR_BINS,
                        gradient_bins: int = DEFAULT_GRADIENT_BINS) -> np.ndarray:
    """Per-patch descriptors in zig-zag order, shape (n_patches, dim).

    Histograms are accumulated through per-bin summed-area tables so each
    patch costs a handful of lookups regardless of patch size.
    """
    if img.width != grid.image_width or img.height != grid.image_height:
        raise ValueError(
            f"image {img.width}x{img.height} does not match grid canvas "
            f"{grid.image_width}x{grid.image_height}")

    lab = rgb_to_lab(img.pixels)
    g_lo, g_hi, g_wlo, g_whi, grad_mag = _gradient_orientation(luminance(img.pixels),
                                                               gradient_bins)

    h, w = img.height, img.width
    n_color = 3 * color_bins
    planes = np.zeros((n_color + gradient_bins, h, w), dtype=np.float64)
    rows_idx, cols_idx = np.indices((h, w))
    for ch, (lo, hi) in enumerate(_LAB_RANGES):
        b_lo, b_hi, w_lo, w_hi = _soft_channel_weights(lab[..., ch], lo, hi, color_bins)
        np.add.at(planes, (ch * color_bins + b_lo, rows_idx, cols_idx), w_lo)
        np.add.at(planes, (ch * color_bins + b_hi, rows_idx, cols_idx), w_hi)
    np.add.at(planes, (n_color + g_lo, rows_idx, cols_idx), g_wlo * grad_mag)
    np.add.at(planes, (n_color + g_hi, rows_idx, cols_idx), g_whi * grad_mag)

    # Summed-area tables with a zero top row / left column.
    sat = np.zeros((planes.shape[0], h + 1, w + 1), dtype=np.float64)
    sat[:, 1:, 1:] = np.cumsum(np.cumsum(planes, axis=1), axis=2)

    descriptors = np.empty((grid.n_patches, n_color + gradient_bins), dtype=np.float64)
    pw, ph = grid.patch_width, grid.patch_height
    for k in range(grid.n_patches):
        ref = patch_at(grid, k)
        x0, y0 = ref.col * grid.stride_x, ref.row * grid.stride_y
        counts = (sat[:, y0 + ph, x0 + pw] - sat[:, y0, x0 + pw]
                  - sat[:, y0 + ph, x0] + sat[:, y0, x0])
        color = counts[:n_color]
        grad = counts[n_color:]
        descriptors[k, :n_color] = color / color.sum()
        grad_total = grad.sum()
        if grad_total > 0.0:
            descriptors[k, n_color:] = grad / grad_total
        else:
            descriptors[k, n_color:] = 0.0
    return descriptors
