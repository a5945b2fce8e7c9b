"""Weighted-sum spatial pooling.

A pooling unit ``l`` owns a weight map ``w[l, j, k]`` over the ``M`` grid
positions for every code coordinate ``k`` and produces
``a[l, k] = sum_j w[l, j, k] * u[j, k]``.  Indicator weights recover
hand-crafted spatial pyramid regions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .features import CodeGrid

INIT_KINDS = ("spm_quadrants", "spm_whole", "random_gaussian", "constant")


@dataclass
class PoolingWeights:
    """Weights of shape (L, M, K); position ``j`` is row-major on a grid_h x grid_w grid."""

    weights: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[1] != self.grid_h * self.grid_w:
            raise InvalidArgument(
                f"weights of shape {self.weights.shape} do not fit a {self.grid_h}x{self.grid_w} grid")

    @property
    def L(self):
        return self.weights.shape[0]

    @property
    def M(self):
        return self.weights.shape[1]

    @property
    def K(self):
        return self.weights.shape[2]

    def maps(self):
        """View as (L, grid_h, grid_w, K)."""
        return self.weights.reshape(self.L, self.grid_h, self.grid_w, self.K)

    def copy(self):
        return PoolingWeights(self.weights.copy(), self.grid_h, self.grid_w)


def _codes(U):
    return U.codes if isinstance(U, CodeGrid) else np.asarray(U, dtype=np.float64)


def pool_unit(weights_l, U):
    """Pool one unit: element-wise product with the codes, summed over positions."""
    weights_l = np.asarray(weights_l, dtype=np.float64)
    codes = _codes(U)
    if weights_l.shape != codes.shape:
        raise InvalidArgument(f"unit weights {weights_l.shape} and codes {codes.shape} disagree")
    return np.einsum("jk,jk->k", weights_l, codes)


def pool_all(W, U):
    """Concatenate every unit's pooled vector, unit-major, giving L*K features.

    ``U`` may be a CodeGrid, an (M, K) array or an (n, M, K) stack; a stack
    yields an (n, L*K) feature matrix.
    """
    codes = _codes(U)
    if codes.shape[-2:] != (W.M, W.K):
        raise InvalidArgument(
            f"codes with trailing shape {codes.shape[-2:]} do not match weights (M={W.M}, K={W.K})")
    if codes.ndim == 2:
        return np.einsum("ljk,jk->lk", W.weights, codes).reshape(-1)
    return pool_stack(W.weights, codes)


def pool_stack(weights, codes):
    """(L, M, K) weights against (n, M, K) codes -> (n, L*K) features."""
    n = codes.shape[0]
    L, M, K = weights.shape
    # batched GEMM over k: (K, n, M) @ (K, M, L)
    out = np.matmul(codes.transpose(2, 0, 1), weights.transpose(2, 1, 0))
    return out.transpose(1, 2, 0).reshape(n, L * K)


def quadrant_masks(grid_h, grid_w):
    """Four boolean (grid_h, grid_w) masks: top-left, top-right, bottom-left, bottom-right.

    The split is at floor(size / 2), so an odd middle row or column falls
    into the lower or right quadrants.
    """
    if grid_h < 2 or grid_w < 2:
        raise InvalidArgument("quadrant pooling needs a grid of at least 2x2")
    rows = np.arange(grid_h)[:, None] >= grid_h // 2
    cols = np.arange(grid_w)[None, :] >= grid_w // 2
    return [~rows & ~cols, ~rows & cols, rows & ~cols, rows & cols]


def init_pooling(kind, L, grid_h, grid_w, K, seed=0, mean=0.5, std=0.1, value=1.0):
    M = grid_h * grid_w
    if L < 1 or K < 1 or M < 1:
        raise InvalidArgument("L, K and the grid size must be positive")
    if kind == "spm_quadrants":
        if L != 4:
            raise InvalidArgument(f"spm_quadrants needs exactly 4 pooling units, got L={L}")
        masks = np.stack([m.reshape(M) for m in quadrant_masks(grid_h, grid_w)])
        weights = np.repeat(masks[:, :, None].astype(np.float64), K, axis=2)
    elif kind == "spm_whole":
        weights = np.ones((L, M, K))
    elif kind == "random_gaussian":
        rng = np.random.default_rng(seed)
        weights = np.clip(rng.normal(mean, std, size=(L, M, K)), 0.0, 1.0)
    elif kind == "constant":
        weights = np.full((L, M, K), float(value))
    else:
        raise InvalidArgument(f"unknown init scheme {kind!r}; expected one of {INIT_KINDS}")
    return PoolingWeights(weights, grid_h, grid_w)


def block_starts(size, S):
    """Start offsets of the S-wide blocks; a ragged tail joins the last block."""
    n_blocks = max(1, size // S)
    return np.arange(n_blocks) * S


def prepool(U, S, grid_h=None, grid_w=None):
    """Sum codes over S x S spatial blocks.

    Accepts a CodeGrid (returns a CodeGrid) or an (n, M, K) stack together
    with its grid shape (returns ``(stack, (new_h, new_w))``).
    """
    if S < 1:
        raise InvalidArgument("pre-pooling size must be at least 1")
    if isinstance(U, CodeGrid):
        stack, (h, w) = prepool(U.codes[None], S, U.grid_h, U.grid_w)
        return CodeGrid(stack[0], h, w)
    codes = np.asarray(U, dtype=np.float64)
    n, M, K = codes.shape
    if grid_h is None or grid_w is None or grid_h * grid_w != M:
        raise InvalidArgument("a code stack needs a grid shape matching its M")
    if S == 1:
        return codes.copy(), (grid_h, grid_w)
    rows, cols = block_starts(grid_h, S), block_starts(grid_w, S)
    grid = codes.reshape(n, grid_h, grid_w, K)
    grid = np.add.reduceat(grid, rows, axis=1)
    grid = np.add.reduceat(grid, cols, axis=2)
    h, w = len(rows), len(cols)
    return np.ascontiguousarray(grid.reshape(n, h * w, K)), (h, w)
