"""Overlapping patch grids and column-wise grouping.

Axis convention, used everywhere in the package: array axis 0 is the
width (column) coordinate and axis 1 the height (row) coordinate, so
``P1`` acts on axis 0 and ``P2`` on axis 1.  Group ``k`` collects every
patch whose column start is ``col_starts[k]`` and stacks them along a
fourth axis in ascending row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _starts(dim: int, m: int, stride: int) -> list[int]:
    starts = list(range(0, dim - m + 1, stride))
    if starts[-1] != dim - m:
        starts.append(dim - m)  # clamp the final patch to the edge
    return starts


@dataclass(frozen=True)
class PatchGrid:
    """Start offsets of the HR patches.

    Attributes
    ----------
    image_w, image_h : int
        HR image size.
    patch : int
        Patch side ``m``.
    overlap : int
        Overlap ``p`` between neighbouring patches.
    sf : int
        Scale factor, so LR starts are ``start // sf``.
    col_starts, row_starts : tuple of int
    """

    image_w: int
    image_h: int
    patch: int
    overlap: int
    sf: int
    col_starts: tuple[int, ...]
    row_starts: tuple[int, ...]

    @property
    def stride(self) -> int:
        return self.patch - self.overlap

    @property
    def groups(self) -> int:
        return len(self.col_starts)

    @property
    def patches_per_group(self) -> int:
        return len(self.row_starts)


def plan_grid(w: int, h: int, m: int, p: int, sf: int = 1) -> PatchGrid:
    """Plan a grid of ``m x m`` patches overlapping by ``p`` pixels.

    Raises
    ------
    ValueError
        If ``p >= m``, ``m`` exceeds the image, or ``sf`` does not divide
        ``m``, ``p`` and the image size.
    """
    if sf < 1:
        raise ValueError(f"scale factor must be positive, got {sf}")
    if not 0 <= p < m:
        raise ValueError(f"overlap must satisfy 0 <= p < m, got p={p}, m={m}")
    if m > min(w, h):
        raise ValueError(f"patch {m} exceeds image {w}x{h}")
    for name, val in (("patch", m), ("overlap", p), ("width", w), ("height", h)):
        if val % sf:
            raise ValueError(f"scale factor {sf} does not divide {name} {val}")
    stride = m - p
    return PatchGrid(w, h, m, p, sf, tuple(_starts(w, m, stride)), tuple(_starts(h, m, stride)))


@dataclass
class GroupTensors:
    """Observations of one column group.

    ``h`` is ``(m/sf, m/sf, S, I4)`` and ``m`` is ``(m, m, s, I4)``.
    """

    h: np.ndarray
    m: np.ndarray
    index: int
    row_starts: tuple[int, ...]


def _stack(img: np.ndarray, col: int, rows, size: int) -> np.ndarray:
    return np.stack([img[col:col + size, r:r + size, :] for r in rows], axis=3)


def extract_groups(hsi: np.ndarray, msi: np.ndarray, grid: PatchGrid) -> list[GroupTensors]:
    """Cut the observed pair into column groups of 4th-order tensors."""
    sf, m = grid.sf, grid.patch
    if msi.shape[:2] != (grid.image_w, grid.image_h):
        raise ValueError(f"MSI is {msi.shape[:2]}, grid expects {(grid.image_w, grid.image_h)}")
    if hsi.shape[:2] != (grid.image_w // sf, grid.image_h // sf):
        raise ValueError(f"HSI is {hsi.shape[:2]}, expected {(grid.image_w // sf, grid.image_h // sf)}")
    lr_rows = [r // sf for r in grid.row_starts]
    return [
        GroupTensors(
            h=_stack(hsi, c // sf, lr_rows, m // sf),
            m=_stack(msi, c, grid.row_starts, m),
            index=k,
            row_starts=grid.row_starts,
        )
        for k, c in enumerate(grid.col_starts)
    ]


def extract_patches(img: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    """HR group tensors of a single full-resolution image."""
    return [_stack(img, c, grid.row_starts, grid.patch) for c in grid.col_starts]


def aggregate(groups: list[np.ndarray], grid: PatchGrid) -> np.ndarray:
    """Average fused group tensors back into a ``W x H x S`` image."""
    if len(groups) != grid.groups:
        raise ValueError(f"expected {grid.groups} groups, got {len(groups)}")
    m = grid.patch
    bands = groups[0].shape[2]
    total = np.zeros((grid.image_w, grid.image_h, bands))
    count = np.zeros((grid.image_w, grid.image_h))
    for c, z in zip(grid.col_starts, groups):
        if z.shape != (m, m, bands, grid.patches_per_group):
            raise ValueError(f"group tensor has shape {z.shape}")
        for i, r in enumerate(grid.row_starts):
            total[c:c + m, r:r + m] += z[..., i]
            count[c:c + m, r:r + m] += 1
    assert count.min() >= 1, "grid leaves pixels uncovered"
    return total / count[:, :, None]
