"""Patch lattice over a fixed-size image: indexing, zig-zag order, distances.

A grid decomposes a canonical image into overlapping patches laid out on a
regular stride lattice.  Patches are enumerated in boustrophedon ("zig-zag")
order: even rows scan left to right, odd rows right to left, so consecutive
ordinals are always spatially adjacent.  The stride distance between two
patches of the same grid is the absolute difference of their ordinals.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class GridSpec:
    """Lattice of patch_width x patch_height patches over a fixed image size."""

    image_width: int
    image_height: int
    patch_width: int
    patch_height: int
    stride_x: int
    stride_y: int

    def __post_init__(self) -> None:
        if min(self.image_width, self.image_height, self.patch_width,
               self.patch_height, self.stride_x, self.stride_y) < 1:
            raise ConfigurationError(f"grid dimensions must be positive: {self}")
        if self.patch_width > self.image_width or self.patch_height > self.image_height:
            raise ConfigurationError(
                f"patch {self.patch_width}x{self.patch_height} exceeds image "
                f"{self.image_width}x{self.image_height}")
        if (self.image_width - self.patch_width) % self.stride_x != 0:
            raise ConfigurationError(f"horizontal extent not divisible by stride_x: {self}")
        if (self.image_height - self.patch_height) % self.stride_y != 0:
            raise ConfigurationError(f"vertical extent not divisible by stride_y: {self}")

    @property
    def n_cols(self) -> int:
        return (self.image_width - self.patch_width) // self.stride_x + 1

    @property
    def n_rows(self) -> int:
        return (self.image_height - self.patch_height) // self.stride_y + 1

    @property
    def n_patches(self) -> int:
        return self.n_rows * self.n_cols


@dataclass(frozen=True)
class PatchRef:
    """One lattice cell: grid row/col plus its zig-zag ordinal."""

    row: int
    col: int
    ordinal: int


def zigzag_ordinal(grid: GridSpec, row: int, col: int) -> int:
    """Boustrophedon ordinal of cell (row, col): odd rows run right to left."""
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise ValueError(f"cell ({row}, {col}) outside {grid.n_rows}x{grid.n_cols} grid")
    if row % 2 == 0:
        return row * grid.n_cols + col
    return row * grid.n_cols + (grid.n_cols - 1 - col)


def patch_at(grid: GridSpec, ordinal: int) -> PatchRef:
    """Inverse of zigzag_ordinal."""
    if not 0 <= ordinal < grid.n_patches:
        raise ValueError(f"ordinal {ordinal} outside [0, {grid.n_patches})")
    row, offset = divmod(ordinal, grid.n_cols)
    col = offset if row % 2 == 0 else grid.n_cols - 1 - offset
    return PatchRef(row=row, col=col, ordinal=ordinal)


def patch_origin(grid: GridSpec, patch: PatchRef) -> tuple[int, int]:
    """Top-left pixel (x, y) of a patch."""
    _check_member(grid, patch)
    return patch.col * grid.stride_x, patch.row * grid.stride_y


def patch_positions(grid: GridSpec) -> list[PatchRef]:
    """All patches of the grid in zig-zag order."""
    return [patch_at(grid, k) for k in range(grid.n_patches)]


def zigzag_distance(grid: GridSpec, a: PatchRef, b: PatchRef) -> int:
    """Strides needed to walk from a to b along the zig-zag scan order."""
    _check_member(grid, a)
    _check_member(grid, b)
    return abs(a.ordinal - b.ordinal)


def colocated_patch(probe_grid: GridSpec, gallery_grid: GridSpec, p: PatchRef) -> PatchRef:
    """Gallery patch whose pixel origin is nearest to p's origin.

    Ties in Euclidean distance between origins are broken by the smaller
    gallery ordinal.
    """
    if (probe_grid.image_width, probe_grid.image_height) != \
            (gallery_grid.image_width, gallery_grid.image_height):
        raise ValueError("probe and gallery grids cover different image sizes")
    _check_member(probe_grid, p)
    px, py = patch_origin(probe_grid, p)

    def axis_candidates(target: int, stride: int, count: int) -> list[int]:
        lo = min(max(target // stride, 0), count - 1)
        hi = min(lo + 1, count - 1)
        return sorted({lo, hi})

    best: tuple[int, int] | None = None  # (squared distance, ordinal)
    for row in axis_candidates(py, gallery_grid.stride_y, gallery_grid.n_rows):
        for col in axis_candidates(px, gallery_grid.stride_x, gallery_grid.n_cols):
            d2 = (col * gallery_grid.stride_x - px) ** 2 + (row * gallery_grid.stride_y - py) ** 2
            key = (d2, zigzag_ordinal(gallery_grid, row, col))
            if best is None or key < best:
                best = key
    assert best is not None
    return patch_at(gallery_grid, best[1])


def _check_member(grid: GridSpec, patch: PatchRef) -> None:
    if not (0 <= patch.row < grid.n_rows and 0 <= patch.col < grid.n_cols):
        raise ValueError(f"patch {patch} outside {grid.n_rows}x{grid.n_cols} grid")
    if patch.ordinal != zigzag_ordinal(grid, patch.row, patch.col):
        raise ValueError(f"patch {patch} has inconsistent ordinal for this grid")
