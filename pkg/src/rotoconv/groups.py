"""Rotation group algebra and the operators that act on pixel grids.

Covers three layers of machinery:

* ``GroupElement`` - discrete rotation index plus planar translation, with the
  3x3 homogeneous-matrix view under which composition is matrix multiplication.
* grid operators - exact quarter-turn permutations, Gaussian/bilinear
  interpolated rotations (as sparse matrices), orientation rolls, and their
  composition on orientation-stacked feature maps.
* ``unitarity_defect`` - measures how far an operator is from preserving the
  inner product that group convolutions are built on.

Angle convention: rotation index ``r`` of a group of order ``n`` means a
counter-clockwise turn by ``r * 2*pi/n``; one quarter turn of an ``HxW`` array
matches ``numpy.rot90`` on the last two axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


def _rotation_2x2(rot: int, order: int) -> np.ndarray:
    """2x2 rotation matrix for index ``rot``; exact integers at quarter turns."""
    rot = rot % order
    if (4 * rot) % order == 0:
        q = (4 * rot) // order
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][q % 4]
        return np.array([[c, -s], [s, c]], dtype=np.float64)
    theta = 2.0 * math.pi * rot / order
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


@dataclass(frozen=True)
class GroupElement:
    """A planar roto-translation: rotation index plus (x, y) translation."""

    rot: int
    translation: tuple = (0.0, 0.0)
    order: int = 8

    def __post_init__(self):
        object.__setattr__(self, "rot", self.rot % self.order)
        tx, ty = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty)))

    @property
    def angle(self) -> float:
        return 2.0 * math.pi * self.rot / self.order

    def homogeneous(self) -> np.ndarray:
        """3x3 matrix [[R, z], [0, 1]]."""
        m = np.eye(3, dtype=np.float64)
        m[:2, :2] = _rotation_2x2(self.rot, self.order)
        m[:2, 2] = self.translation
        return m

    @classmethod
    def identity(cls, order: int = 8) -> "GroupElement":
        return cls(0, (0.0, 0.0), order)


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """(R, z)(S, x) = (RS, Rx + z)."""
    if g.order != h.order:
        raise ValueError(f"mixed group orders {g.order} and {h.order}")
    r = _rotation_2x2(g.rot, g.order)
    moved = r @ np.asarray(h.translation) + np.asarray(g.translation)
    return GroupElement((g.rot + h.rot) % g.order, (moved[0], moved[1]), g.order)


def inverse(g: GroupElement) -> GroupElement:
    """(R, z)^-1 = (R^-1, -R^-1 z)."""
    rinv = _rotation_2x2(-g.rot, g.order)
    moved = -(rinv @ np.asarray(g.translation))
    return GroupElement((-g.rot) % g.order, (moved[0], moved[1]), g.order)


# -- exact grid rotations ------------------------------------------------------


def rotate_exact90(x: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Counter-clockwise quarter turns of the last two axes (pure permutation)."""
    if x.shape[-1] != x.shape[-2]:
        raise ValueError(f"square spatial extent required, got {x.shape[-2]}x{x.shape[-1]}")
    return np.ascontiguousarray(np.rot90(x, int(quarter_turns) % 4, axes=(-2, -1)))


# -- interpolated rotation operators ----------------------------------------------


def _source_coords(size: int, angle: float) -> np.ndarray:
    """Inverse-rotated source location for every target pixel, about the grid center."""
    c = (size - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dy = ys - c
    dx = xs - c
    cos, sin = math.cos(angle), math.sin(angle)
    sy = c + cos * dy + sin * dx
    sx = c - sin * dy + cos * dx
    return np.stack([sy, sx], axis=-1).reshape(-1, 2)


def _permutation_matrix(size: int, quarter_turns: int) -> sparse.csr_matrix:
    grid = np.arange(size * size).reshape(size, size)
    src = np.rot90(grid, quarter_turns % 4).reshape(-1)
    data = np.ones(size * size, dtype=np.float64)
    return sparse.csr_matrix((data, (np.arange(size * size), src)),
                             shape=(size * size, size * size))


def rotation_matrix(size: int, angle: float, method: str = "gaussian",
                    sigma: float = 0.5, kernel_size: int = 3) -> sparse.csr_matrix:
    """Sparse matrix rotating a flattened ``size x size`` image by ``angle`` CCW.

    ``gaussian``: weights exp(-d^2 / 2 sigma^2) over the ``kernel_size`` square
    integer neighborhood of the inverse-rotated source point. ``bilinear``:
    the four surrounding pixels. Out-of-grid neighbors are dropped and the
    remaining weights renormalized to sum 1; angles that are exact multiples
    of 90 degrees short-circuit to the grid permutation.
    """
    if method not in ("gaussian", "bilinear", "exact90"):
        raise ValueError(f"unknown rotation method {method!r}")
    quarter = angle / (math.pi / 2)
    if abs(quarter - round(quarter)) < 1e-12:
        return _permutation_matrix(size, int(round(quarter)))
    if method == "exact90":
        raise ValueError("exact90 method only supports multiples of 90 degrees")
    src = _source_coords(size, angle)
    rows, cols, vals = [], [], []
    half = kernel_size // 2
    for target, (sy, sx) in enumerate(src):
        if method == "gaussian":
            cy, cx = int(round(sy)), int(round(sx))
            offs = range(-half, half + 1)
            neighbors = [(cy + dy, cx + dx) for dy in offs for dx in offs]
            weights = [math.exp(-((gy - sy) ** 2 + (gx - sx) ** 2) / (2 * sigma * sigma))
                       for gy, gx in neighbors]
        else:
            fy, fx = math.floor(sy), math.floor(sx)
            ay, ax = sy - fy, sx - fx
            neighbors = [(fy, fx), (fy, fx + 1), (fy + 1, fx), (fy + 1, fx + 1)]
            weights = [(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax]
        keep = [(w, gy, gx) for w, (gy, gx) in zip(weights, neighbors)
                if 0 <= gy < size and 0 <= gx < size and w > 0.0]
        total = sum(w for w, _, _ in keep)
        if total <= 0.0:
            continue
        for w, gy, gx in keep:
            rows.append(target)
            cols.append(gy * size + gx)
            vals.append(w / total)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(size * size, size * size))


@dataclass
class RotationOperators:
    """The family of rotation maps for one grid size, indexed by rotation index.

    ``method`` tags how non-quarter-turn angles are interpolated; quarter
    turns are always the exact permutation.
    """

    size: int
    order: int = 8
    method: str = "gaussian"
    sigma: float = 0.5
    kernel_size: int = 3
    _matrices: list = field(default_factory=list, repr=False)
    _transposes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._matrices:
            self._matrices = [
                rotation_matrix(self.size, 2.0 * math.pi * r / self.order,
                                self.method, self.sigma, self.kernel_size)
                for r in range(self.order)
            ]

    def matrix(self, r: int) -> sparse.csr_matrix:
        return self._matrices[r % self.order]

    def _cast(self, r: int, dtype, transposed: bool) -> sparse.csr_matrix:
        r = r % self.order
        key = (r, np.dtype(dtype).str, transposed)
        if key not in self._transposes:
            m = self._matrices[r].T.tocsr() if transposed else self._matrices[r]
            self._transposes[key] = m.astype(dtype, copy=False)
        return self._transposes[key]

    def matrix_t(self, r: int) -> sparse.csr_matrix:
        return self._cast(r, np.float64, True)

    def is_exact(self, r: int) -> bool:
        return (4 * (r % self.order)) % self.order == 0

    def apply(self, x: np.ndarray, r: int) -> np.ndarray:
        """Rotate the last two axes of ``x`` by index ``r``."""
        r = r % self.order
        if x.shape[-1] != self.size or x.shape[-2] != self.size:
            raise ValueError(f"operator built for {self.size}x{self.size}, "
                             f"got {x.shape[-2]}x{x.shape[-1]}")
        if self.is_exact(r):
            return rotate_exact90(x, (4 * r) // self.order)
        return self.apply_flat(x.reshape(-1, self.size ** 2).T, r).T.reshape(x.shape)

    def apply_flat(self, columns: np.ndarray, r: int) -> np.ndarray:
        """Apply to flattened images stacked as columns [n_pixels, n_images]."""
        return self._cast(r, columns.dtype, False) @ columns

    def apply_flat_t(self, columns: np.ndarray, r: int) -> np.ndarray:
        return self._cast(r, columns.dtype, True) @ columns


def rotate_interp(x: np.ndarray, r: int, method: str = "gaussian", order: int = 8,
                  sigma: float = 0.5, kernel_size: int = 3) -> np.ndarray:
    """One-shot interpolated rotation by index ``r`` (builds the operator)."""
    if x.shape[-1] != x.shape[-2]:
        raise ValueError(f"square spatial extent required, got {x.shape[-2]}x{x.shape[-1]}")
    ops = RotationOperators(x.shape[-1], order, method, sigma, kernel_size)
    return ops.apply(x, r)


# -- orientation axis ------------------------------------------------------------


def roll_orientations(f: np.ndarray, r: int, order: int | None = None,
                      axis: int = -3) -> np.ndarray:
    """Cyclic shift of the orientation axis: output slice s is input slice s - r."""
    n = f.shape[axis]
    if order is not None and n != order:
        raise ValueError(f"orientation axis has extent {n}, expected {order}")
    return np.roll(f, int(r) % n, axis=axis)


def act_on_group_feature_map(f: np.ndarray, r: int, ops: RotationOperators,
                             axis: int = -3) -> np.ndarray:
    """Induced rotation action: rotate within each slice, then roll the slices."""
    if f.shape[axis] != ops.order:
        raise ValueError(f"orientation axis has extent {f.shape[axis]}, "
                         f"expected {ops.order}")
    return roll_orientations(ops.apply(f, r), r, axis=axis)


# -- diagnostics ---------------------------------------------------------------


def unitarity_defect(ops: RotationOperators, r: int, trials: int = 32,
                     seed: int = 0) -> float:
    """Worst relative change of <f, psi> under the operator, over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = ops.size ** 2
    worst = 0.0
    for _ in range(trials):
        f = rng.standard_normal(n)
        psi = rng.standard_normal(n)
        before = float(f @ psi)
        lf = ops.apply_flat(f[:, None], r)[:, 0]
        lpsi = ops.apply_flat(psi[:, None], r)[:, 0]
        after = float(lf @ lpsi)
        worst = max(worst, abs(after - before) / abs(before))
    return worst


def export_triplets(matrix: sparse.spmatrix, path) -> None:
    """Write a sparse matrix as one ``row col value`` line per entry."""
    coo = matrix.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def import_triplets(path, shape) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            i, j, v = line.split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)
