"""Gray image / volume containers, file formats, and voxel-level preprocessing.

File formats handled here:
  * binary PGM (P5), 8-bit or 16-bit big-endian samples
  * volume manifests: UTF-8 ``key=value`` lines (dims, spacing_mm, elem,
    data, optional byte_order) pointing at a slice-major raw file

Preprocessing: intensity windowing of signed CT-like data to 8-bit gray,
per-slice median filtering, and uniform quantization to a smaller level
count for co-occurrence work.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    HistogramError,
    IoError,
    ManifestError,
    RangeError,
    SizeMismatch,
    SpecError,
    WindowError,
)
from .otsu import Histogram


@dataclass(frozen=True)
class GrayImage:
    """2-D gray image: integer pixel grid plus its declared level count."""

    pixels: np.ndarray  # shape (height, width)
    levels: int

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise FormatError(f"pixels must be 2-D, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.integer):
            px = px.astype(np.int64)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return int(self.pixels.shape[0])

    @property
    def width(self):
        return int(self.pixels.shape[1])


@dataclass(frozen=True)
class Volume:
    """3-D gray volume, slice-major, with physical voxel spacing in mm.

    ``levels`` is None for raw signed data (e.g. Hounsfield-like units)
    that has not been windowed to gray yet.
    """

    voxels: np.ndarray  # shape (depth, height, width)
    spacing_mm: tuple   # (z, y, x)
    levels: int | None

    def __post_init__(self):
        vx = np.asarray(self.voxels)
        if vx.ndim != 3:
            raise FormatError(f"voxels must be 3-D, got shape {vx.shape}")
        if not np.issubdtype(vx.dtype, np.integer):
            vx = vx.astype(np.int64)
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise FormatError(f"spacing_mm must be 3 positive values, got {self.spacing_mm}")
        object.__setattr__(self, "voxels", vx)
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def depth(self):
        return int(self.voxels.shape[0])

    @property
    def height(self):
        return int(self.voxels.shape[1])

    @property
    def width(self):
        return int(self.voxels.shape[2])


@dataclass(frozen=True)
class QuantizationSpec:
    """Uniform floor binning from ``input_levels`` down to ``output_levels``."""

    input_levels: int
    output_levels: int

    def __post_init__(self):
        if not 2 <= self.output_levels <= self.input_levels:
            raise RangeError(
                f"need 2 <= output_levels <= input_levels, got "
                f"{self.output_levels} / {self.input_levels}"
            )


@dataclass(frozen=True)
class MedianFilterSpec:
    """Square median window of side 2*window_radius + 1."""

    window_radius: int

    def __post_init__(self):
        if self.window_radius < 0:
            raise SpecError("window_radius must be >= 0")

    @property
    def side(self):
        return 2 * self.window_radius + 1

    @property
    def window_pixels(self):
        return self.side * self.side


# ---------------------------------------------------------------------------
# PGM (P5)
# ---------------------------------------------------------------------------

def _read_pgm_tokens(data, count):
    """Pull ``count`` whitespace-separated header tokens, skipping # comments.

    Returns (tokens, offset_of_first_payload_byte).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise FormatError("PGM header not terminated by whitespace")
    return tokens, i + 1


def load_image(path, fmt="pgm8"):
    """Load a binary PGM (P5) file as a GrayImage.

    ``fmt`` declares the expected sample width: "pgm8" (maxval <= 255,
    L = 256) or "pgm16" (maxval in [256, 65535], big-endian, L = 65536).
    """
    if fmt not in ("pgm8", "pgm16"):
        raise FormatError(f"unsupported format {fmt!r}")
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    tokens, payload_at = _read_pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"bad magic {tokens[0]!r}, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"non-numeric PGM header field: {exc}") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}")

    if fmt == "pgm8":
        if not 1 <= maxval <= 255:
            raise FormatError(f"maxval {maxval} does not match pgm8")
        dtype, levels = np.uint8, 256
    else:
        if not 256 <= maxval <= 65535:
            raise FormatError(f"maxval {maxval} does not match pgm16")
        dtype, levels = np.dtype(">u2"), 65536

    need = width * height * np.dtype(dtype).itemsize
    payload = data[payload_at : payload_at + need]
    if len(payload) < need:
        raise FormatError(f"payload truncated: need {need} bytes, have {len(payload)}")
    pixels = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)
    return GrayImage(pixels=pixels, levels=levels)


def save_image(img, path):
    """Write a GrayImage as binary PGM (P5); 16-bit samples are big-endian."""
    if img.levels <= 256:
        maxval, dtype = 255, np.uint8
    elif img.levels <= 65536:
        maxval, dtype = 65535, np.dtype(">u2")
    else:
        raise FormatError(f"cannot encode {img.levels} levels as PGM")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(img.pixels.astype(dtype)).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Volume manifests
# ---------------------------------------------------------------------------

_ELEM_SPECS = {
    "u8": (np.uint8, 256),
    "u16": (np.uint16, 65536),
    "i16": (np.int16, None),
}
_MANIFEST_KEYS = {"dims", "spacing_mm", "elem", "data", "byte_order"}


def _parse_manifest(text, path):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _MANIFEST_KEYS:
            raise ManifestError(f"{path}:{lineno}: unknown key {key!r}")
        entries[key] = value.strip()
    for key in ("dims", "spacing_mm", "elem", "data"):
        if key not in entries:
            raise ManifestError(f"{path}: missing required key {key!r}")
    return entries


def load_volume(manifest_path):
    """Load a volume described by a ``key=value`` manifest file."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {manifest_path}: {exc}") from exc

    entries = _parse_manifest(text, manifest_path)
    try:
        dims = tuple(int(v) for v in entries["dims"].split(","))
        spacing = tuple(float(v) for v in entries["spacing_mm"].split(","))
    except ValueError as exc:
        raise ManifestError(f"{manifest_path}: bad numeric field: {exc}") from exc
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ManifestError(f"{manifest_path}: dims must be 3 positive ints, got {dims}")
    if entries["elem"] not in _ELEM_SPECS:
        raise ManifestError(f"{manifest_path}: unknown elem {entries['elem']!r}")
    dtype, levels = _ELEM_SPECS[entries["elem"]]
    byte_order = entries.get("byte_order", "le")
    if byte_order not in ("le", "be"):
        raise ManifestError(f"{manifest_path}: byte_order must be le or be")
    if np.dtype(dtype).itemsize > 1:
        dtype = np.dtype(dtype).newbyteorder("<" if byte_order == "le" else ">")

    data_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entries["data"])
    try:
        with open(data_path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {data_path}: {exc}") from exc

    depth, height, width = dims
    need = depth * height * width * np.dtype(dtype).itemsize
    if len(payload) != need:
        raise SizeMismatch(
            f"{data_path}: payload is {len(payload)} bytes, dims require {need}"
        )
    voxels = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(np.int64)
    return Volume(voxels=voxels, spacing_mm=spacing, levels=levels)


def save_volume(vol, manifest_path, data_name=None):
    """Write a volume as manifest + little-endian raw file next to it."""
    if vol.levels is None:
        elem, dtype = "i16", np.dtype("<i2")
    elif vol.levels <= 256:
        elem, dtype = "u8", np.uint8
    elif vol.levels <= 65536:
        elem, dtype = "u16", np.dtype("<u2")
    else:
        raise FormatError(f"cannot encode {vol.levels} levels")
    if data_name is None:
        stem = os.path.splitext(os.path.basename(manifest_path))[0]
        data_name = stem + ".raw"
    z, y, x = vol.spacing_mm
    lines = [
        f"dims={vol.depth},{vol.height},{vol.width}",
        f"spacing_mm={z:g},{y:g},{x:g}",
        f"elem={elem}",
        f"data={data_name}",
        "byte_order=le",
    ]
    data_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), data_name)
    try:
        with open(data_path, "wb") as fh:
            fh.write(np.ascontiguousarray(vol.voxels.astype(dtype)).tobytes())
        with open(manifest_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write volume: {exc}") from exc


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def window_rescale(raw, window_low, window_high):
    """Map signed intensities linearly onto [0, 255], clamping at the window.

    v -> round(255 * clamp((v - low) / (high - low), 0, 1)); halves round up.
    """
    if window_low >= window_high:
        raise WindowError(f"window low {window_low} >= high {window_high}")
    v = raw.voxels.astype(np.float64)
    frac = np.clip((v - window_low) / (window_high - window_low), 0.0, 1.0)
    gray = np.floor(255.0 * frac + 0.5).astype(np.int64)
    return Volume(voxels=gray, spacing_mm=raw.spacing_mm, levels=256)


def median_filter(img, spec):
    """Median-filter an image with edge replication at the borders.

    The median of a window takes the lower-middle element of the sorted
    values, so the output never contains a value absent from the window.
    """
    side = spec.side
    if side > min(img.width, img.height):
        raise SpecError(
            f"window side {side} exceeds image {img.width}x{img.height}"
        )
    if spec.window_radius == 0:
        return GrayImage(pixels=img.pixels.copy(), levels=img.levels)
    r = spec.window_radius
    padded = np.pad(img.pixels, r, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    flat = windows.reshape(img.height, img.width, side * side)
    mid = (side * side - 1) // 2
    med = np.partition(flat, mid, axis=2)[:, :, mid]
    return GrayImage(pixels=med.astype(np.int64), levels=img.levels)


def median_filter_volume(vol, spec):
    """Apply the 2-D median filter independently to every slice."""
    out = np.stack(
        [median_filter(GrayImage(vol.voxels[z], vol.levels), spec).pixels
         for z in range(vol.depth)]
    )
    return Volume(voxels=out, spacing_mm=vol.spacing_mm, levels=vol.levels)


def quantize(obj, spec):
    """Reduce gray resolution by uniform binning: v -> floor(v*G/L)."""
    data = obj.voxels if isinstance(obj, Volume) else obj.pixels
    if np.any(data < 0) or np.any(data >= spec.input_levels):
        raise RangeError(f"values outside [0, {spec.input_levels - 1}]")
    g = int(spec.output_levels)
    binned = (data.astype(np.int64) * g) // int(spec.input_levels)
    if isinstance(obj, Volume):
        return Volume(voxels=binned, spacing_mm=obj.spacing_mm, levels=g)
    return GrayImage(pixels=binned, levels=g)


def histogram(obj):
    """Count occurrences of every gray level in an image or volume."""
    if isinstance(obj, Volume):
        data, levels = obj.voxels, obj.levels
    else:
        data, levels = obj.pixels, obj.levels
    if levels is None:
        raise HistogramError("histogram requires gray data with declared levels")
    if data.size and (data.min() < 0 or data.max() >= levels):
        raise RangeError(f"values outside [0, {levels - 1}]")
    counts = np.bincount(data.ravel(), minlength=levels)
    return Histogram(counts=counts)
