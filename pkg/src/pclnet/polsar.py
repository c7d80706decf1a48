"""Coherency-matrix data model, synthetic scenes, and patch extraction.

A pixel of a polarimetric SAR image is summarized by a 3x3 Hermitian
positive-semidefinite coherency matrix T. Only the upper triangle carries
information, so every matrix is stored as 9 real numbers in the fixed
channel order [T11, T22, T33, Re T12, Im T12, Re T13, Im T13, Re T23,
Im T23]. Scenes are dense (H, W, 9) arrays in that order.
"""

from dataclasses import dataclass, field

import numpy as np

NUM_CHANNELS = 9
CHANNEL_NAMES = (
    "T11", "T22", "T33",
    "ReT12", "ImT12", "ReT13", "ImT13", "ReT23", "ImT23",
)

PSD_TOL = 1e-9
EPS_GUARD = 1e-6


def features_to_matrix(feats):
    """Assemble 9-channel real features (..., 9) into complex (..., 3, 3)."""
    feats = np.asarray(feats, dtype=np.float64)
    t = np.zeros(feats.shape[:-1] + (3, 3), dtype=np.complex128)
    t[..., 0, 0] = feats[..., 0]
    t[..., 1, 1] = feats[..., 1]
    t[..., 2, 2] = feats[..., 2]
    t12 = feats[..., 3] + 1j * feats[..., 4]
    t13 = feats[..., 5] + 1j * feats[..., 6]
    t23 = feats[..., 7] + 1j * feats[..., 8]
    t[..., 0, 1] = t12
    t[..., 1, 0] = np.conj(t12)
    t[..., 0, 2] = t13
    t[..., 2, 0] = np.conj(t13)
    t[..., 1, 2] = t23
    t[..., 2, 1] = np.conj(t23)
    return t


def matrix_to_features(t):
    """Flatten complex (..., 3, 3) Hermitian matrices into (..., 9) reals."""
    t = np.asarray(t, dtype=np.complex128)
    feats = np.empty(t.shape[:-2] + (NUM_CHANNELS,), dtype=np.float64)
    feats[..., 0] = t[..., 0, 0].real
    feats[..., 1] = t[..., 1, 1].real
    feats[..., 2] = t[..., 2, 2].real
    feats[..., 3] = t[..., 0, 1].real
    feats[..., 4] = t[..., 0, 1].imag
    feats[..., 5] = t[..., 0, 2].real
    feats[..., 6] = t[..., 0, 2].imag
    feats[..., 7] = t[..., 1, 2].real
    feats[..., 8] = t[..., 1, 2].imag
    return feats


def pixel_features(t):
    """9-vector [T11, T22, T33, Re/Im T12, Re/Im T13, Re/Im T23] of one matrix."""
    return matrix_to_features(t)


@dataclass(frozen=True)
class CoherencyValidation:
    """Outcome of validating a single coherency matrix."""

    valid: bool
    failures: tuple = ()


def validate_coherency(t, tol=PSD_TOL):
    """Check Hermitian storage consistency, diagonal sign, and PSD-ness.

    The PSD check is relative: all eigenvalues must be >= -tol * trace.
    Pure report, never raises.
    """
    t = np.asarray(t, dtype=np.complex128)
    failures = []
    if t.shape != (3, 3):
        return CoherencyValidation(False, ("not a 3x3 matrix",))
    if not np.allclose(t, t.conj().T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(t).max())):
        failures.append("not Hermitian")
    diag = np.diagonal(t).real
    if np.any(diag < 0):
        failures.append("negative diagonal")
    if np.any(np.abs(np.diagonal(t).imag) > 1e-12 * max(1.0, np.abs(t).max())):
        failures.append("complex diagonal")
    herm = 0.5 * (t + t.conj().T)
    eigvals = np.linalg.eigvalsh(herm)
    trace = np.trace(herm).real
    if eigvals.min() < -tol * max(trace, 1.0):
        failures.append("not PSD")
    return CoherencyValidation(not failures, tuple(failures))


def regularize(t, eps=EPS_GUARD, tol=PSD_TOL):
    """Singular-matrix guard applied before any inversion.

    Adds eps * trace/3 * I when the smallest eigenvalue falls below
    tol * trace. Works on a single matrix or a stack (..., 3, 3).
    """
    t = np.asarray(t, dtype=np.complex128)
    trace = np.trace(t, axis1=-2, axis2=-1).real
    eigmin = np.linalg.eigvalsh(t)[..., 0]
    need = eigmin < tol * trace
    shift = np.where(need, eps * trace / 3.0, 0.0)
    # Fully zero matrices get an absolute floor so the inverse exists.
    shift = np.where(trace <= 0.0, eps, shift)
    return t + shift[..., None, None] * np.eye(3)


def _matrix_sqrt_psd(sigma):
    w, u = np.linalg.eigh(sigma)
    w = np.clip(w, 0.0, None)
    return u * np.sqrt(w) @ u.conj().T


def sample_wishart(sigma, n_looks, rng):
    """Draw one n-look sample coherency matrix T = (1/n) sum_i k_i k_i^H.

    The target vectors k_i are i.i.d. circular complex Gaussian with
    covariance `sigma`.
    """
    sigma = np.asarray(sigma, dtype=np.complex128)
    if n_looks < 1:
        raise ValueError("n_looks must be >= 1")
    report = validate_coherency(sigma)
    if not report.valid:
        raise ValueError("covariance not PSD: " + ", ".join(report.failures))
    root = _matrix_sqrt_psd(sigma)
    z = (rng.standard_normal((n_looks, 3)) + 1j * rng.standard_normal((n_looks, 3)))
    z /= np.sqrt(2.0)
    k = z @ root.T
    t = (k[:, :, None] * k[:, None, :].conj()).mean(axis=0)
    return 0.5 * (t + t.conj().T)


def _sample_wishart_block(sigma, n_looks, count, rng):
    """Vectorized multi-pixel variant of `sample_wishart`."""
    root = _matrix_sqrt_psd(np.asarray(sigma, dtype=np.complex128))
    z = (rng.standard_normal((count, n_looks, 3))
         + 1j * rng.standard_normal((count, n_looks, 3)))
    z /= np.sqrt(2.0)
    k = z @ root.T
    t = np.einsum("cni,cnj->cij", k, k.conj()) / n_looks
    return 0.5 * (t + np.conj(np.swapaxes(t, -1, -2)))


@dataclass(frozen=True)
class PolSARScene:
    """H x W grid of coherency matrices, stored as (H, W, 9) real channels."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[-1] != NUM_CHANNELS:
            raise ValueError("scene data must have shape (H, W, 9)")
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def matrix_at(self, row, col):
        return features_to_matrix(self.data[row, col])

    def matrices(self):
        return features_to_matrix(self.data)

    def channel_stats(self):
        """Per-channel (mean, std) over the whole scene; std floored at 1e-12."""
        mean = self.data.mean(axis=(0, 1))
        std = self.data.std(axis=(0, 1))
        return mean, np.maximum(std, 1e-12)


@dataclass(frozen=True)
class LabelMap:
    """Integer class labels per pixel; 0 means unlabeled."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        if labels.min() < 0 or labels.max() > self.num_classes:
            raise ValueError("labels must lie in [0, num_classes]")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Blueprint for a blockwise-constant complex-Wishart scene.

    `regions` is a list of (row0, row1, col0, col1, class_id) half-open
    rectangles that must tile the scene exactly. `class_covariances[c-1]`
    is the 3x3 Hermitian PSD covariance of class c.
    """

    height: int
    width: int
    class_covariances: tuple
    looks: int
    regions: tuple
    seed: int = 0

    def __post_init__(self):
        covs = tuple(np.asarray(c, dtype=np.complex128) for c in self.class_covariances)
        object.__setattr__(self, "class_covariances", covs)
        object.__setattr__(self, "regions", tuple(tuple(r) for r in self.regions))
        for c in covs:
            report = validate_coherency(c)
            if not report.valid:
                raise ValueError("class covariance invalid: " + ", ".join(report.failures))
        if self.looks < 1:
            raise ValueError("looks must be >= 1")

    @property
    def num_classes(self):
        return len(self.class_covariances)


def vertical_band_spec(height, width, class_covariances, looks, seed=0):
    """Spec with classes laid out as equal-width vertical bands."""
    n = len(class_covariances)
    edges = [round(i * width / n) for i in range(n + 1)]
    regions = [(0, height, edges[i], edges[i + 1], i + 1) for i in range(n)]
    return SyntheticSceneSpec(height, width, tuple(class_covariances), looks,
                              tuple(regions), seed)


def default_class_covariances(num_classes):
    """Deterministic family of distinct, trace-3 Hermitian PSD covariances.

    Classes differ in eigenvalue spread and off-diagonal correlation so
    that no single channel separates them trivially.
    """
    covs = []
    for c in range(num_classes):
        rng = np.random.default_rng([97, c])
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        s = a @ a.conj().T + 0.5 * np.eye(3)
        s = 0.5 * (s + s.conj().T)
        np.fill_diagonal(s, np.diagonal(s).real)
        s *= 3.0 / np.trace(s).real
        covs.append(s)
    return tuple(covs)


def synth_scene(spec):
    """Generate (PolSARScene, LabelMap) from a SyntheticSceneSpec.

    Each pixel is an independent n-look Wishart draw from its region's
    class covariance. Deterministic given spec.seed; per-region substreams
    keep the result independent of region evaluation order.
    """
    cover = np.zeros((spec.height, spec.width), dtype=np.int32)
    labels = np.zeros((spec.height, spec.width), dtype=np.int32)
    for (r0, r1, c0, c1, cls) in spec.regions:
        if not (0 <= r0 < r1 <= spec.height and 0 <= c0 < c1 <= spec.width):
            raise ValueError("region out of bounds")
        if not (1 <= cls <= spec.num_classes):
            raise ValueError("region class id out of range")
        cover[r0:r1, c0:c1] += 1
        labels[r0:r1, c0:c1] = cls
    if cover.min() == 0:
        raise ValueError("regions do not tile the scene")
    if cover.max() > 1:
        raise ValueError("regions overlap")

    data = np.zeros((spec.height, spec.width, NUM_CHANNELS), dtype=np.float64)
    for idx, (r0, r1, c0, c1, cls) in enumerate(spec.regions):
        rng = np.random.default_rng([spec.seed, 1315, idx])
        count = (r1 - r0) * (c1 - c0)
        block = _sample_wishart_block(spec.class_covariances[cls - 1],
                                      spec.looks, count, rng)
        data[r0:r1, c0:c1] = matrix_to_features(block).reshape(r1 - r0, c1 - c0,
                                                              NUM_CHANNELS)
    return PolSARScene(data), LabelMap(labels, spec.num_classes)


def reflect_index(i, n):
    """Mirror index into [0, n), reflecting about the edges without repeat."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def extract_patch(scene, row, col, size):
    """Cut the (9, size, size) patch centered at (row, col), mirror-padded."""
    if size % 2 == 0:
        raise ValueError("patch size must be odd")
    if not (0 <= row < scene.height and 0 <= col < scene.width):
        raise ValueError("pixel outside scene")
    half = size // 2
    rows = np.array([reflect_index(row - half + i, scene.height) for i in range(size)])
    cols = np.array([reflect_index(col - half + j, scene.width) for j in range(size)])
    window = scene.data[np.ix_(rows, cols)]
    return np.ascontiguousarray(window.transpose(2, 0, 1))


def extract_patches(scene, positions, size):
    """Vectorized patch extraction for many (row, col) positions."""
    if size % 2 == 0:
        raise ValueError("patch size must be odd")
    half = size // 2
    padded = np.pad(scene.data, ((half, half), (half, half), (0, 0)), mode="reflect")
    out = np.empty((len(positions), NUM_CHANNELS, size, size), dtype=np.float64)
    for i, (row, col) in enumerate(positions):
        if not (0 <= row < scene.height and 0 <= col < scene.width):
            raise ValueError("pixel outside scene")
        window = padded[row:row + size, col:col + size]
        out[i] = window.transpose(2, 0, 1)
    return out


def rotate180(patch):
    """Reverse both spatial axes of a (C, h, w) patch; channels untouched."""
    return np.ascontiguousarray(np.asarray(patch)[:, ::-1, ::-1])


def patch_mean_coherency(scene, row, col, size):
    """Boxcar mean coherency matrix over the patch window (mirror-padded)."""
    patch = extract_patch(scene, row, col, size)
    return features_to_matrix(patch.mean(axis=(1, 2)))


def patch_mean_coherency_many(scene, positions, size):
    """Mean coherency matrices for many positions, as a (N, 3, 3) stack."""
    patches = extract_patches(scene, positions, size)
    return features_to_matrix(patches.mean(axis=(2, 3)))


def standardize_patches(patches, mean, std):
    """Per-channel standardization with scene-level statistics."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    return (patches - mean[:, None, None]) / std[:, None, None]
