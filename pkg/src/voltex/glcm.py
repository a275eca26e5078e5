"""Gray-level co-occurrence matrices in 2D, 2.5D, and 3D.

A co-occurrence matrix counts ordered gray-value pairs (v(p), v(p + d)) over
all positions p whose displaced partner stays inside the region.  2D slices
use the eight unit directions at 0..315 degrees; volumes use the 13
half-space directions of the 26-neighborhood.  Volumes are cut into
3-slice volume spaces (VS) so each local matrix sees a short stack; the
final short group is zero-padded to 3 slices but padded slices never
contribute pairs.

Sequences bundle vectorized matrices into (timesteps, features) arrays in a
fixed order -- directions by ascending angle, slices and VSs by ascending
index -- which is the contract the fusion classifier relies on.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IoError, RangeError, SpecError
from .imagio import GrayImage, Volume

VS_SLICES = 3

MODE_2D = "2d_directions"
MODE_2_5D = "slices_2_5d"
MODE_3D = "vs_3d"
MODE_DIRECTION_STACK = "direction_stack"


@dataclass(frozen=True)
class Direction:
    """Integer voxel displacement (dz, dy, dx) with a display label."""

    dz: int
    dy: int
    dx: int
    label: str

    @property
    def displacement(self):
        return (self.dz, self.dy, self.dx)

    def negated(self):
        return Direction(-self.dz, -self.dy, -self.dx, f"-{self.label}")


def directions_2d():
    """The eight in-plane unit directions in angle order 0..315 degrees.

    0 degrees is +x (dy=0, dx=+1); angles advance counterclockwise with y
    pointing down the rows, so 45 degrees is (dy=-1, dx=+1).
    """
    offsets = [
        (0, 1), (-1, 1), (-1, 0), (-1, -1),
        (0, -1), (1, -1), (1, 0), (1, 1),
    ]
    return [
        Direction(0, dy, dx, f"{45 * i}°")
        for i, (dy, dx) in enumerate(offsets)
    ]


def directions_3d():
    """The 13 canonical half-space offsets covering the 26-neighborhood."""
    offsets = [
        (0, 0, 1), (0, 1, 0), (1, 0, 0),
        (0, 1, 1), (0, 1, -1),
        (1, 0, 1), (1, 0, -1),
        (1, 1, 0), (1, -1, 0),
        (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
    ]
    return [Direction(dz, dy, dx, f"({dz},{dy},{dx})") for dz, dy, dx in offsets]


@dataclass(frozen=True)
class Glcm:
    """Pair counts and normalized probabilities for one direction."""

    levels: int
    direction: Direction
    counts: np.ndarray   # (levels, levels) int64
    probs: np.ndarray    # (levels, levels) float64, sums to 1 unless empty
    symmetric: bool = False

    @property
    def empty(self):
        return int(self.counts.sum()) == 0

    def vectorized(self):
        """Row-major flattening of the probability matrix."""
        return self.probs.ravel().copy()


def _as_voxel_grid(region):
    """Normalize an image/volume/array region to a 3-D integer array."""
    if isinstance(region, Volume):
        data = region.voxels
    elif isinstance(region, GrayImage):
        data = region.pixels
    else:
        data = np.asarray(region)
    if data.ndim == 2:
        data = data[np.newaxis, :, :]
    if data.ndim != 3:
        raise SpecError(f"region must be 2-D or 3-D, got shape {data.shape}")
    return data


def _pair_views(shape, offset):
    """Source/destination slice tuples for one displacement, or None."""
    src, dst = [], []
    for size, o in zip(shape, offset):
        lo_src = max(0, -o)
        hi_src = size - max(0, o)
        if hi_src <= lo_src:
            return None
        src.append(slice(lo_src, hi_src))
        dst.append(slice(lo_src + o, hi_src + o))
    return tuple(src), tuple(dst)


def compute_glcm(region, direction, levels, symmetric=False, distance=1, mask=None):
    """Count gray-value pairs along one displacement.

    ``mask`` (same shape as the region, boolean) restricts counting to pairs
    whose both endpoints are inside the mask.  A region yielding no valid
    pairs produces an all-zero matrix flagged via ``Glcm.empty``.
    """
    data = _as_voxel_grid(region)
    if data.size and (data.min() < 0 or data.max() >= levels):
        raise RangeError(f"gray values outside [0, {levels - 1}]")
    if distance < 1:
        raise SpecError(f"pair distance must be >= 1, got {distance}")

    offset = tuple(distance * o for o in (direction.dz, direction.dy, direction.dx))
    counts = np.zeros(levels * levels, dtype=np.int64)
    views = _pair_views(data.shape, offset)
    if views is not None:
        src_view, dst_view = views
        src = data[src_view]
        dst = data[dst_view]
        if mask is not None:
            m = _as_voxel_grid(np.asarray(mask, dtype=bool))
            valid = m[src_view] & m[dst_view]
            src, dst = src[valid], dst[valid]
        pair_ids = src.ravel() * levels + dst.ravel()
        counts += np.bincount(pair_ids, minlength=levels * levels)
    counts = counts.reshape(levels, levels)
    if symmetric:
        counts = counts + counts.T
    total = counts.sum()
    probs = counts / total if total > 0 else np.zeros_like(counts, dtype=np.float64)
    return Glcm(levels=levels, direction=direction, counts=counts,
                probs=probs, symmetric=symmetric)


@dataclass(frozen=True)
class VolumeSpace:
    """Three consecutive slices of a volume; short tails are zero-padded."""

    start: int
    data: np.ndarray      # (VS_SLICES, height, width), padded with zeros
    real_slices: int      # 1..VS_SLICES actually backed by the volume

    @property
    def real_data(self):
        """View of the slices that carry real voxels; pairs come from here."""
        return self.data[: self.real_slices]


def partition_vs(vol):
    """Cut a volume into ceil(depth/3) non-overlapping volume spaces."""
    voxels = vol.voxels if isinstance(vol, Volume) else np.asarray(vol)
    depth = voxels.shape[0]
    spaces = []
    for start in range(0, depth, VS_SLICES):
        real = min(VS_SLICES, depth - start)
        block = np.zeros((VS_SLICES,) + voxels.shape[1:], dtype=voxels.dtype)
        block[:real] = voxels[start : start + real]
        spaces.append(VolumeSpace(start=start, data=block, real_slices=real))
    return spaces


@dataclass
class GlcmSequence:
    """Ordered stack of feature vectors, one per timestep.

    ``real`` marks timesteps backed by data; front padding added by
    ``pad_sequences`` flips it to False.  ``glcms`` retains the per-timestep
    matrices (in feature order) so descriptor sequences can be derived.
    """

    mode: str
    features: np.ndarray               # (timesteps, f) float64
    levels: int
    real: np.ndarray = None            # (timesteps,) bool
    glcms: list = field(default=None, repr=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise SpecError(f"features must be 2-D, got shape {feats.shape}")
        self.features = feats
        if self.real is None:
            self.real = np.ones(feats.shape[0], dtype=bool)
        else:
            self.real = np.asarray(self.real, dtype=bool)
            if self.real.shape != (feats.shape[0],):
                raise SpecError("real mask length must equal timestep count")

    @property
    def timesteps(self):
        return int(self.features.shape[0])

    @property
    def feature_size(self):
        return int(self.features.shape[1])


def _direction_block(region, dirs, levels, symmetric, distance, mask):
    glcms = [
        compute_glcm(region, d, levels, symmetric=symmetric,
                     distance=distance, mask=mask)
        for d in dirs
    ]
    vec = np.concatenate([g.vectorized() for g in glcms])
    return vec, glcms


def sequence_2d(image, levels, symmetric=False, distance=1, mask=None):
    """Eight timesteps (one per direction, angle order) from a single slice."""
    rows, retained = [], []
    for d in directions_2d():
        g = compute_glcm(image, d, levels, symmetric=symmetric,
                         distance=distance, mask=mask)
        rows.append(g.vectorized())
        retained.append([g])
    return GlcmSequence(mode=MODE_2D, features=np.stack(rows), levels=levels,
                        glcms=retained)


def sequence_2_5d(vol, levels, symmetric=False, distance=1, mask=None):
    """One timestep per slice; each concatenates that slice's 8 matrices."""
    voxels = vol.voxels if isinstance(vol, Volume) else np.asarray(vol)
    masks = None if mask is None else np.asarray(mask, dtype=bool)
    dirs = directions_2d()
    rows, retained = [], []
    for z in range(voxels.shape[0]):
        slice_mask = None if masks is None else masks[z]
        vec, glcms = _direction_block(voxels[z], dirs, levels, symmetric,
                                      distance, slice_mask)
        rows.append(vec)
        retained.append(glcms)
    return GlcmSequence(mode=MODE_2_5D, features=np.stack(rows), levels=levels,
                        glcms=retained)


def _vs_mask(space, mask):
    if mask is None:
        return None
    block = np.zeros(space.data.shape, dtype=bool)
    real = space.real_slices
    block[:real] = mask[space.start : space.start + real]
    return block[:real]


def sequence_3d(vol, levels, symmetric=False, distance=1, mask=None):
    """One timestep per volume space; each concatenates its 13 matrices."""
    dirs = directions_3d()
    masks = None if mask is None else np.asarray(mask, dtype=bool)
    rows, retained = [], []
    for space in partition_vs(vol):
        vec, glcms = _direction_block(space.real_data, dirs, levels, symmetric,
                                      distance, _vs_mask(space, masks))
        rows.append(vec)
        retained.append(glcms)
    return GlcmSequence(mode=MODE_3D, features=np.stack(rows), levels=levels,
                        glcms=retained)


def stack_by_direction(vol, levels, symmetric=False, distance=1, mask=None):
    """Thirteen timesteps (one per direction), each stacking all VS matrices."""
    dirs = directions_3d()
    masks = None if mask is None else np.asarray(mask, dtype=bool)
    spaces = partition_vs(vol)
    per_space = [
        [compute_glcm(space.real_data, d, levels, symmetric=symmetric,
                      distance=distance, mask=_vs_mask(space, masks))
         for d in dirs]
        for space in spaces
    ]
    rows, retained = [], []
    for j in range(len(dirs)):
        glcms = [per_space[i][j] for i in range(len(spaces))]
        rows.append(np.concatenate([g.vectorized() for g in glcms]))
        retained.append(glcms)
    return GlcmSequence(mode=MODE_DIRECTION_STACK, features=np.stack(rows),
                        levels=levels, glcms=retained)


def pad_sequences(sequences):
    """Front-pad a dataset's sequences with zero timesteps to a common length.

    Padding rows are marked not-real so the classifier reads its final state
    from the last data-backed timestep.
    """
    if not sequences:
        return []
    target = max(s.timesteps for s in sequences)
    padded = []
    for s in sequences:
        gap = target - s.timesteps
        if gap == 0:
            padded.append(s)
            continue
        feats = np.vstack([np.zeros((gap, s.feature_size)), s.features])
        real = np.concatenate([np.zeros(gap, dtype=bool), s.real])
        padded.append(GlcmSequence(mode=s.mode, features=feats, levels=s.levels,
                                   real=real, glcms=None))
    return padded


# ---------------------------------------------------------------------------
# Sequence tensor file: one ASCII header line, then float64 LE row-major
# ---------------------------------------------------------------------------

def save_sequence(seq, path):
    header = f"{seq.mode},{seq.timesteps},{seq.feature_size},{seq.levels}\n"
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(seq.features.astype("<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_sequence(path):
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").strip()
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    parts = header.split(",")
    if len(parts) != 4:
        raise FormatError(f"{path}: bad sequence header {header!r}")
    mode = parts[0]
    try:
        timesteps, f, levels = (int(v) for v in parts[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field: {exc}") from exc
    need = timesteps * f * 8
    if len(payload) != need:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, need {need}")
    feats = np.frombuffer(payload, dtype="<f8").reshape(timesteps, f)
    return GlcmSequence(mode=mode, features=feats.copy(), levels=levels)
