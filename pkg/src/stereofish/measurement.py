"""Mask-based 3D measurement: principal axes, extreme points, fork length.

Masks live in rectified full-image coordinates (a thumbnail grid plus an
origin offset), so epipolar bands are horizontal pixel rows and corresponding
points can be triangulated directly through the rectified camera models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateMask, UnmeasurableFish
from .geometry import CameraModel, PixelPoint, WorldPoint, triangulate

DEFAULT_EPIPOLAR_BAND_PX = 3.0
COLLINEAR_EIGENVALUE_TOL = 1e-12
MIN_FOREGROUND_PIXELS = 3


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-detection boolean pixel grid located in full-image coordinates.

    ``bits[row, col]`` covers the full-image pixel
    (origin.u + col, origin.v + row).
    """

    bits: np.ndarray
    origin: PixelPoint

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DataError(f"mask bits must be 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def foreground_count(self) -> int:
        return int(self.bits.sum())

    def foreground_coords(self) -> np.ndarray:
        """(N, 2) full-image (u, v) coordinates of foreground pixels.

        Rows are emitted in row-major scan order, so the first occurrence of
        any repeated value is the one with the smallest row, then column.
        """
        rows, cols = np.nonzero(self.bits)
        return np.column_stack([cols + self.origin.u, rows + self.origin.v]).astype(float)

    def to_rle(self) -> list[int]:
        """Row-major run-length encoding [start, length, start, length, ...]."""
        flat = self.bits.ravel()
        if not flat.any():
            return []
        padded = np.concatenate([[False], flat, [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        starts, ends = edges[0::2], edges[1::2]
        out: list[int] = []
        for s, e in zip(starts, ends):
            out.extend((int(s), int(e - s)))
        return out

    @classmethod
    def from_rle(cls, width: int, height: int, origin: PixelPoint, runs) -> "BinaryMask":
        runs = list(runs)
        if len(runs) % 2 != 0:
            raise DataError("RLE must hold an even number of entries")
        flat = np.zeros(width * height, dtype=bool)
        for s, n in zip(runs[0::2], runs[1::2]):
            if s < 0 or n < 0 or s + n > flat.size:
                raise DataError(f"RLE run ({s}, {n}) outside {width}x{height} mask")
            flat[s : s + n] = True
        return cls(flat.reshape(height, width), origin)


@dataclass(frozen=True, eq=False)
class ExtremePointSet:
    """Principal axes of a mask with its extreme foreground pixels.

    Extremes along the minor axis are None for collinear masks.
    """

    barycenter: PixelPoint
    major_axis: np.ndarray
    minor_axis: np.ndarray
    major_eigenvalue: float
    minor_eigenvalue: float
    major_neg: PixelPoint
    major_pos: PixelPoint
    minor_neg: PixelPoint | None
    minor_pos: PixelPoint | None
    collinear: bool = False


@dataclass(frozen=True, eq=False)
class ExtremeCorrespondences:
    """Band-constrained correspondents of the four extreme points."""

    major_neg: PixelPoint | None
    major_pos: PixelPoint | None
    minor_neg: PixelPoint | None
    minor_pos: PixelPoint | None
    missing: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class DirectionalMeasurements:
    """Per-direction audit values retained next to the final means."""

    lr_length_m: float | None
    rl_length_m: float | None
    lr_height_m: float | None
    rl_height_m: float | None


@dataclass(frozen=True, eq=False)
class FishMeasurement:
    """Final measurement of one paired fish."""

    fork_length_m: float
    height_m: float
    centroid: WorldPoint
    per_direction: DirectionalMeasurements
    single_direction_length: bool = False
    single_direction_height: bool = False


def _canonical_axis(axis: np.ndarray) -> np.ndarray:
    """Fix the eigenvector sign: positive u component, tie-broken by v."""
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        return -axis
    return axis


def _pixel(coords: np.ndarray, idx: int) -> PixelPoint:
    return PixelPoint(float(coords[idx, 0]), float(coords[idx, 1]))


def mask_pca(mask: BinaryMask) -> ExtremePointSet:
    """Barycenter, inertia axes, and per-axis extreme pixels of a mask.

    The barycenter is the exact mean of foreground coordinates; axes are the
    eigenvectors of their 2x2 covariance. Extremes are the foreground pixels
    of minimal/maximal scalar projection onto each axis, ties resolved to
    the smallest row then column.

    Raises:
        DegenerateMask: Fewer than 3 foreground pixels.
    """
    coords = mask.foreground_coords()
    if len(coords) < MIN_FOREGROUND_PIXELS:
        raise DegenerateMask(f"mask has {len(coords)} foreground pixels, need 3")
    barycenter = coords.mean(axis=0)
    centered = coords - barycenter
    cov = centered.T @ centered / len(coords)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    minor = _canonical_axis(eigenvectors[:, 0])
    major = _canonical_axis(eigenvectors[:, 1])

    proj_major = coords @ major
    major_neg = _pixel(coords, int(np.argmin(proj_major)))
    major_pos = _pixel(coords, int(np.argmax(proj_major)))

    collinear = eigenvalues[0] < COLLINEAR_EIGENVALUE_TOL
    if collinear:
        minor_neg = minor_pos = None
    else:
        proj_minor = coords @ minor
        minor_neg = _pixel(coords, int(np.argmin(proj_minor)))
        minor_pos = _pixel(coords, int(np.argmax(proj_minor)))

    return ExtremePointSet(
        barycenter=PixelPoint(float(barycenter[0]), float(barycenter[1])),
        major_axis=major,
        minor_axis=minor,
        major_eigenvalue=float(eigenvalues[1]),
        minor_eigenvalue=float(eigenvalues[0]),
        major_neg=major_neg,
        major_pos=major_pos,
        minor_neg=minor_neg,
        minor_pos=minor_pos,
        collinear=bool(collinear),
    )


def correspond_extremes(
    p_from: ExtremePointSet,
    m_to: BinaryMask,
    band: float = DEFAULT_EPIPOLAR_BAND_PX,
    to_axes: ExtremePointSet | None = None,
) -> ExtremeCorrespondences:
    """Find the correspondent of each extreme point inside the target mask.

    For an extreme point p, candidate target pixels are those within ``band``
    rows of p vertically; the correspondent is the candidate extremal in the
    same sense along the target mask's own major/minor axis. Points whose
    band is empty are reported missing.
    """
    axes = to_axes if to_axes is not None else mask_pca(m_to)
    coords = m_to.foreground_coords()
    out: dict[str, PixelPoint | None] = {}
    missing: list[str] = []
    wanted = (
        ("major_neg", p_from.major_neg, axes.major_axis, np.argmin),
        ("major_pos", p_from.major_pos, axes.major_axis, np.argmax),
        ("minor_neg", p_from.minor_neg, axes.minor_axis, np.argmin),
        ("minor_pos", p_from.minor_pos, axes.minor_axis, np.argmax),
    )
    for name, point, axis, pick in wanted:
        if point is None:
            out[name] = None
            missing.append(name)
            continue
        in_band = np.abs(coords[:, 1] - point.v) <= band
        if not in_band.any():
            out[name] = None
            missing.append(name)
            continue
        band_coords = coords[in_band]
        idx = int(pick(band_coords @ axis))
        out[name] = _pixel(band_coords, idx)
    return ExtremeCorrespondences(
        major_neg=out["major_neg"],
        major_pos=out["major_pos"],
        minor_neg=out["minor_neg"],
        minor_pos=out["minor_pos"],
        missing=tuple(missing),
    )


def _span(
    left_pair: tuple[PixelPoint | None, PixelPoint | None],
    right_pair: tuple[PixelPoint | None, PixelPoint | None],
    cam_left: CameraModel,
    cam_right: CameraModel,
) -> float | None:
    """3D distance between two triangulated correspondences, if complete."""
    (l0, l1), (r0, r1) = left_pair, right_pair
    if None in (l0, l1, r0, r1):
        return None
    a = triangulate(l0, r0, cam_left, cam_right).as_array()
    b = triangulate(l1, r1, cam_left, cam_right).as_array()
    return float(np.linalg.norm(a - b))


def measure_pair(
    mask_left: BinaryMask,
    mask_right: BinaryMask,
    cam_left: CameraModel,
    cam_right: CameraModel,
    band: float = DEFAULT_EPIPOLAR_BAND_PX,
) -> FishMeasurement:
    """Measure fork length, height, and 3D centroid from a paired mask set.

    Left-to-right and right-to-left correspondences are measured separately
    and averaged. If one direction fails for a dimension the surviving
    direction's value is used and flagged. The centroid triangulates each
    barycenter against its row-transferred counterpart and averages the two
    3D points.

    The camera models must be the rectified views the mask coordinates live
    in.

    Raises:
        UnmeasurableFish: No direction yields a length, or none yields a
            height.
    """
    pca_left = mask_pca(mask_left)
    pca_right = mask_pca(mask_right)

    to_right = correspond_extremes(pca_left, mask_right, band, to_axes=pca_right)
    to_left = correspond_extremes(pca_right, mask_left, band, to_axes=pca_left)

    lr_length = _span(
        (pca_left.major_neg, pca_left.major_pos),
        (to_right.major_neg, to_right.major_pos),
        cam_left,
        cam_right,
    )
    lr_height = _span(
        (pca_left.minor_neg, pca_left.minor_pos),
        (to_right.minor_neg, to_right.minor_pos),
        cam_left,
        cam_right,
    )
    rl_length = _span(
        (to_left.major_neg, to_left.major_pos),
        (pca_right.major_neg, pca_right.major_pos),
        cam_left,
        cam_right,
    )
    rl_height = _span(
        (to_left.minor_neg, to_left.minor_pos),
        (pca_right.minor_neg, pca_right.minor_pos),
        cam_left,
        cam_right,
    )

    lengths = [x for x in (lr_length, rl_length) if x is not None]
    heights = [x for x in (lr_height, rl_height) if x is not None]
    if not lengths:
        raise UnmeasurableFish("no direction produced both major correspondences")
    if not heights:
        raise UnmeasurableFish("no direction produced both minor correspondences")

    b_left = pca_left.barycenter
    b_right = pca_right.barycenter
    lr_center = triangulate(
        b_left, PixelPoint(b_right.u, b_left.v), cam_left, cam_right
    ).as_array()
    rl_center = triangulate(
        PixelPoint(b_left.u, b_right.v), b_right, cam_left, cam_right
    ).as_array()
    centroid = (lr_center + rl_center) / 2.0

    return FishMeasurement(
        fork_length_m=float(np.mean(lengths)),
        height_m=float(np.mean(heights)),
        centroid=WorldPoint(*centroid),
        per_direction=DirectionalMeasurements(lr_length, rl_length, lr_height, rl_height),
        single_direction_length=len(lengths) == 1,
        single_direction_height=len(heights) == 1,
    )
