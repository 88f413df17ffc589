"""Voxelization, tiling and flood fill of the unit-cell geometries"""
from typing import Tuple

import numpy as np
from loguru import logger
from scipy import ndimage

from ionhom.core.errors import InvariantViolationError, ResolutionMismatchError
from ionhom.models.geometry import Shape, UnitCellGeometry
from ionhom.models.state import InterfaceFaces, Subdomain, TaggedGrid

MIN_RESOLUTION = 8
RESOLUTION_TOL = 1e-9


def voxelize_unit_cell(geom: UnitCellGeometry, n: int) -> TaggedGrid:
    """
    Tag the cells of an n x n grid of Y = (0,1)^2

    Args:
        geom: Unit-cell geometry
        n: Cells per side

    Returns:
        TaggedGrid with epsilon_inv = 1

    Raises:
        ResolutionMismatchError: if n < 8 or the geometry does not land on grid faces
    """
    if n < MIN_RESOLUTION:
        raise ResolutionMismatchError(
            f"resolution {n} is below the minimum {MIN_RESOLUTION}", {"n": n}
        )
    mask = _intracellular_mask(geom, n)
    return grid_from_mask(mask, epsilon_inv=1, n_per_cell=n)


def tile_domain(geom: UnitCellGeometry, epsilon_inv: int, n_per_cell: int) -> TaggedGrid:
    """
    Tile the unit cell epsilon_inv times per side into Omega = (0,1)^2

    Args:
        geom: Unit-cell geometry
        epsilon_inv: Number of cells per side (1/epsilon)
        n_per_cell: Cells per side of each unit cell

    Returns:
        TaggedGrid of (epsilon_inv*n_per_cell)^2 cells
    """
    if epsilon_inv < 1:
        raise ResolutionMismatchError(f"epsilon_inv must be >= 1, got {epsilon_inv}", {"epsilon_inv": epsilon_inv})
    unit = voxelize_unit_cell(geom, n_per_cell)
    mask = np.tile(unit.intracellular, (epsilon_inv, epsilon_inv))
    grid = grid_from_mask(mask, epsilon_inv=epsilon_inv, n_per_cell=n_per_cell)

    count_I, _ = connected_components(grid, Subdomain.I)
    count_E, _ = connected_components(grid, Subdomain.E)
    if geom.shape == Shape.CENTERED_SQUARE and count_I != epsilon_inv ** 2:
        raise InvariantViolationError(
            f"expected {epsilon_inv ** 2} intracellular blocks, found {count_I}",
            {"components": count_I},
        )
    if geom.shape == Shape.CROSS_CHANNEL and count_I != 1:
        raise InvariantViolationError(
            f"intracellular cross is not connected ({count_I} components)", {"components": count_I}
        )

    logger.info(
        f"Tiled {geom.label()} with epsilon=1/{epsilon_inv}, n={grid.n}: "
        f"|Omega_I|={grid.area_I:.4f}, |Omega_E|={grid.area_E:.4f}, "
        f"interface length={grid.gamma:.4f}, components I={count_I} E={count_E}"
    )
    return grid


def connected_components(grid: TaggedGrid, tag: Subdomain) -> Tuple[int, np.ndarray]:
    """
    Label the 4-connected components of one subdomain

    Args:
        grid: Tagged grid (treated as non-periodic)
        tag: Subdomain to label

    Returns:
        (component count, (n, n) label array with 0 outside the subdomain)
    """
    mask = grid.intracellular if Subdomain(tag) == Subdomain.I else ~grid.intracellular
    structure = ndimage.generate_binary_structure(2, 1)
    labels, count = ndimage.label(mask, structure=structure)
    return int(count), labels


def grid_from_mask(mask: np.ndarray, epsilon_inv: int = 1, n_per_cell: int = 0) -> TaggedGrid:
    """Build a TaggedGrid and enumerate its interior interface faces"""
    mask = np.array(mask, dtype=bool, copy=True)
    n = mask.shape[0]
    if mask.shape != (n, n):
        raise ResolutionMismatchError(f"grid must be square, got {mask.shape}")
    mask.setflags(write=False)
    return TaggedGrid(
        n=n,
        intracellular=mask,
        faces=interface_faces(mask),
        epsilon_inv=epsilon_inv,
        n_per_cell=n_per_cell or n,
    )


def interface_faces(mask: np.ndarray) -> InterfaceFaces:
    """Faces between differently tagged neighbours, excluding the outer boundary"""
    n = mask.shape[0]
    index = np.arange(n * n).reshape(n, n)
    inner, outer, axis, sign = [], [], [], []
    for ax in (0, 1):
        if ax == 0:
            lo, hi = index[:-1, :], index[1:, :]
            m_lo, m_hi = mask[:-1, :], mask[1:, :]
        else:
            lo, hi = index[:, :-1], index[:, 1:]
            m_lo, m_hi = mask[:, :-1], mask[:, 1:]
        cut = m_lo != m_hi
        lo_in = m_lo[cut]
        lo_idx, hi_idx = lo[cut], hi[cut]
        inner.append(np.where(lo_in, lo_idx, hi_idx))
        outer.append(np.where(lo_in, hi_idx, lo_idx))
        axis.append(np.full(lo_idx.size, ax, dtype=np.int64))
        sign.append(np.where(lo_in, 1, -1).astype(np.int64))
    return InterfaceFaces(
        inner=np.concatenate(inner).astype(np.int64),
        outer=np.concatenate(outer).astype(np.int64),
        axis=np.concatenate(axis),
        sign=np.concatenate(sign),
    )


def _intracellular_mask(geom: UnitCellGeometry, n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    if geom.shape == Shape.EMPTY:
        return mask

    k = geom.size * n
    k_int = int(round(k))
    if abs(k - k_int) > RESOLUTION_TOL or not 0 < k_int < n:
        raise ResolutionMismatchError(
            f"{geom.label()} does not resolve on n={n}: size*n = {k!r} is not an integer in (0, n)",
            {"shape": geom.shape.value, "size": geom.size, "n": n},
        )
    if (n - k_int) % 2 != 0:
        raise ResolutionMismatchError(
            f"{geom.label()} cannot be centred on n={n}: n - size*n = {n - k_int} is odd",
            {"shape": geom.shape.value, "size": geom.size, "n": n},
        )
    lo = (n - k_int) // 2
    band = slice(lo, lo + k_int)

    if geom.shape == Shape.CENTERED_SQUARE:
        mask[band, band] = True
    elif geom.shape == Shape.CROSS_CHANNEL:
        mask[band, :] = True
        mask[:, band] = True
    elif geom.shape == Shape.STRIPE:
        # extracellular band across x1, spanning x2
        mask[:, :] = True
        mask[band, :] = False
    return mask
