"""Patch extraction, normalization, ZCA whitening, K-means and triangle coding.

Images are float arrays of shape (channels, height, width) with values in
[0, 1].  A patch is flattened channel-planar and row-major inside each
channel, i.e. ``window[c, y, x]`` with ``c`` varying slowest, which is the
same ordering as the CIFAR binary layout.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, NumericFailure

#: Normalization constant applied to 0-255 scaled patches.
DEFAULT_VAR_FLOOR = 10.0
DEFAULT_ZCA_EPSILON = 0.1
PIXEL_SCALE = 255.0


@dataclass
class WhitenTransform:
    mean: np.ndarray
    matrix: np.ndarray
    epsilon: float

    @property
    def dim(self):
        return self.mean.shape[0]

    def apply(self, patches):
        """Whiten a single patch or a (n, dim) stack of patches."""
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape[-1] != self.dim:
            raise InvalidArgument(
                f"patch dimension {patches.shape[-1]} does not match whitening dimension {self.dim}")
        return (patches - self.mean) @ self.matrix


@dataclass
class Dictionary:
    centroids: np.ndarray

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]


@dataclass
class CodeGrid:
    """Codes of one image; row ``j`` of ``codes`` is grid cell ``(j // grid_w, j % grid_w)``."""

    codes: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2 or self.codes.shape[0] != self.grid_h * self.grid_w:
            raise InvalidArgument(
                f"codes of shape {self.codes.shape} do not fit a {self.grid_h}x{self.grid_w} grid")

    @property
    def M(self):
        return self.grid_h * self.grid_w

    @property
    def K(self):
        return self.codes.shape[1]


def as_image(image):
    """Return ``image`` as a float (C, H, W) array; 2-D input is one channel."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3:
        raise InvalidArgument(f"expected a (C, H, W) image, got shape {image.shape}")
    return image


def patch_grid_shape(height, width, patch_side, stride=1):
    if patch_side < 1 or stride < 1:
        raise InvalidArgument("patch side and stride must be positive")
    if patch_side > min(height, width):
        raise InvalidArgument(
            f"patch side {patch_side} exceeds image size {height}x{width}")
    return (height - patch_side) // stride + 1, (width - patch_side) // stride + 1


def extract_patches(image, patch_side, stride=1):
    """Extract all dense patches of ``image`` in row-major grid order.

    Returns ``(patches, positions)`` where ``patches`` has one flattened
    patch per row and ``positions[i]`` is the (row, col) grid cell of
    patch ``i``.
    """
    image = as_image(image)
    channels, height, width = image.shape
    gh, gw = patch_grid_shape(height, width, patch_side, stride)
    windows = sliding_window_view(image, (patch_side, patch_side), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :gh, :gw]
    # (C, gh, gw, p, p) -> (gh, gw, C, p, p)
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(gh * gw, channels * patch_side * patch_side)
    rows, cols = np.divmod(np.arange(gh * gw), gw)
    return np.ascontiguousarray(patches), np.stack([rows, cols], axis=1)


def normalize_patch(patch, var_floor=DEFAULT_VAR_FLOOR):
    """Subtract the per-patch mean and divide by sqrt(variance + var_floor).

    Works on one patch or on a (n, dim) stack; the variance is the
    population variance of each patch.
    """
    if not var_floor > 0:
        raise InvalidArgument("var_floor must be positive")
    patch = np.asarray(patch, dtype=np.float64)
    mean = patch.mean(axis=-1, keepdims=True)
    var = patch.var(axis=-1, keepdims=True)
    return (patch - mean) / np.sqrt(var + var_floor)


def fit_zca(patches, epsilon=DEFAULT_ZCA_EPSILON):
    """Fit a ZCA transform V diag(1/sqrt(lambda + eps)) V^T on ``patches``.

    The covariance is the population covariance of the rows.  ``epsilon``
    may be zero only when that covariance is full rank.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2:
        raise InvalidArgument("fit_zca expects a (n, dim) array of patches")
    n, dim = patches.shape
    if n < dim + 1:
        raise InvalidArgument(f"need at least {dim + 1} patches to whiten dimension {dim}, got {n}")
    if epsilon < 0:
        raise InvalidArgument("epsilon must be nonnegative")
    mean = patches.mean(axis=0)
    centered = patches - mean
    cov = centered.T @ centered / n
    try:
        eigval, eigvec = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigendecomposition of patch covariance failed: {exc}") from exc
    shifted = eigval + epsilon
    if np.any(shifted <= 0) or not np.all(np.isfinite(shifted)):
        raise NumericFailure("patch covariance is singular; use a positive epsilon")
    matrix = (eigvec / np.sqrt(shifted)) @ eigvec.T
    matrix = 0.5 * (matrix + matrix.T)
    return WhitenTransform(mean=mean, matrix=matrix, epsilon=float(epsilon))


def _sq_distances(x, centroids, c_sq=None):
    if c_sq is None:
        c_sq = np.einsum("kd,kd->k", centroids, centroids)
    x_sq = np.einsum("nd,nd->n", x, x)
    d2 = x_sq[:, None] - 2.0 * (x @ centroids.T) + c_sq[None, :]
    return np.maximum(d2, 0.0)


def lloyd(points, K, iterations, seed=0, chunk=65536):
    """Plain Lloyd iterations from K distinct seeded data points.

    Returns ``(centroids, distortions)``; ``distortions[t]`` is the mean
    squared distance of the points to their nearest centroid at the
    assignment step of iteration ``t``.
    """
    points = np.asarray(points, dtype=np.float64)
    n, dim = points.shape
    if K < 1:
        raise InvalidArgument("K must be at least 1")
    if n < K:
        raise InvalidArgument(f"cannot fit {K} centroids to {n} patches")
    if iterations < 1:
        raise InvalidArgument("need at least one K-means iteration")
    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(n, size=K, replace=False)].copy()
    distortions = []
    for _ in range(iterations):
        sums = np.zeros((K, dim))
        counts = np.zeros(K, dtype=np.int64)
        total = 0.0
        c_sq = np.einsum("kd,kd->k", centroids, centroids)
        for start in range(0, n, chunk):
            block = points[start:start + chunk]
            d2 = _sq_distances(block, centroids, c_sq)
            nearest = d2.argmin(axis=1)
            total += d2[np.arange(len(block)), nearest].sum()
            counts += np.bincount(nearest, minlength=K)
            onehot = np.zeros((len(block), K))
            onehot[np.arange(len(block)), nearest] = 1.0
            sums += onehot.T @ block
        distortions.append(total / n)
        empty = counts == 0
        centroids[~empty] = sums[~empty] / counts[~empty, None]
        if empty.any():
            centroids[empty] = points[rng.choice(n, size=int(empty.sum()), replace=False)]
    return centroids, np.array(distortions)


def kmeans_fit(patches, K, iterations=50, seed=0):
    centroids, _ = lloyd(patches, K, iterations, seed=seed)
    return Dictionary(centroids=centroids)


def triangle_encode(patches, dictionary):
    """Triangle code: ``max(0, mean(z) - z_k)`` with ``z_k`` the distance to centroid k."""
    patches = np.asarray(patches, dtype=np.float64)
    single = patches.ndim == 1
    x = np.atleast_2d(patches)
    if x.shape[1] != dictionary.dim:
        raise InvalidArgument(
            f"patch dimension {x.shape[1]} does not match dictionary dimension {dictionary.dim}")
    z = np.sqrt(_sq_distances(x, dictionary.centroids))
    codes = np.maximum(0.0, z.mean(axis=1, keepdims=True) - z)
    return codes[0] if single else codes


def _check_pipeline(dictionary, whiten, channels, patch_side):
    dim = channels * patch_side * patch_side
    if whiten.dim != dim or dictionary.dim != dim:
        raise InvalidArgument(
            f"{channels}-channel {patch_side}x{patch_side} patches have dimension {dim}, "
            f"but whitening has {whiten.dim} and dictionary has {dictionary.dim}")


def encode_image(image, dictionary, whiten, patch_side, var_floor=DEFAULT_VAR_FLOOR):
    image = as_image(image)
    _check_pipeline(dictionary, whiten, image.shape[0], patch_side)
    gh, gw = patch_grid_shape(image.shape[1], image.shape[2], patch_side)
    patches, _ = extract_patches(image * PIXEL_SCALE, patch_side)
    codes = triangle_encode(whiten.apply(normalize_patch(patches, var_floor)), dictionary)
    return CodeGrid(codes=codes, grid_h=gh, grid_w=gw)


def encode_images(images, dictionary, whiten, patch_side, var_floor=DEFAULT_VAR_FLOOR, chunk=64):
    """Encode a (n, C, H, W) stack; returns codes (n, M, K) and the grid shape."""
    images = np.asarray(images, dtype=np.float64)
    n, channels, height, width = images.shape
    _check_pipeline(dictionary, whiten, channels, patch_side)
    gh, gw = patch_grid_shape(height, width, patch_side)
    out = np.empty((n, gh * gw, dictionary.K))
    for start in range(0, n, chunk):
        block = images[start:start + chunk] * PIXEL_SCALE
        windows = sliding_window_view(block, (patch_side, patch_side), axis=(2, 3))
        # (b, C, gh, gw, p, p) -> (b, gh, gw, C, p, p)
        patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(-1, whiten.dim)
        codes = triangle_encode(whiten.apply(normalize_patch(patches, var_floor)), dictionary)
        out[start:start + len(block)] = codes.reshape(len(block), gh * gw, dictionary.K)
    return out, (gh, gw)


def sample_patches(images, count, patch_side, seed=0):
    """Draw ``count`` random raw patches (0-255 scale) from a (n, C, H, W) stack."""
    images = np.asarray(images, dtype=np.float64)
    n, channels, height, width = images.shape
    patch_grid_shape(height, width, patch_side)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=count)
    ys = rng.integers(0, height - patch_side + 1, size=count)
    xs = rng.integers(0, width - patch_side + 1, size=count)
    offsets = np.arange(patch_side)
    rows = (ys[:, None] + offsets)[:, :, None]
    cols = (xs[:, None] + offsets)[:, None, :]
    # (count, C, p, p) gathered with broadcasting
    patches = images[idx[:, None, None, None], np.arange(channels)[None, :, None, None],
                     rows[:, None], cols[:, None]]
    return patches.reshape(count, -1) * PIXEL_SCALE


def fit_dictionary(images, K, patch_side=6, samples=400000, iterations=50, seed=0,
                   var_floor=DEFAULT_VAR_FLOOR, epsilon=DEFAULT_ZCA_EPSILON):
    """Fit whitening and a K-means dictionary on randomly sampled patches."""
    patches = normalize_patch(sample_patches(images, samples, patch_side, seed=seed), var_floor)
    whiten = fit_zca(patches, epsilon)
    dictionary = kmeans_fit(whiten.apply(patches), K, iterations=iterations, seed=seed)
    return dictionary, whiten
