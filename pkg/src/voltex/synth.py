"""Seeded synthetic tri-class volume generator for desk-scale experiments.

Three texture families with deliberately separated co-occurrence statistics:

  class 0  smooth   low-frequency linear ramps plus faint noise; neighbor
                    pairs land on or next to the matrix diagonal
  class 1  checker  period-1 alternation between a dark and a bright band;
                    neighbor pairs concentrate far off the diagonal
  class 2  speckle  independent uniform voxels; pairs spread evenly

Per-volume parameters (ramp slopes, band levels, noise amplitudes) are drawn
from narrow ranges so classes stay internally tight.  Volumes are written as
8-bit manifests plus a labels.csv (manifest,label).
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imagio import Volume, save_volume

CLASS_NAMES = ("smooth", "checker", "speckle")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; one seed drives the whole dataset."""

    volumes_per_class: int = 20
    depth: int = 12
    height: int = 16
    width: int = 16
    seed: int = 0
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    smooth_slope_max: float = 3.0       # gray levels per voxel along each axis
    checker_dark: tuple = (40, 56)      # sits inside one 8-level bin, noise included
    checker_bright: tuple = (200, 216)
    noise_amplitude: int = 2

    def __post_init__(self):
        if self.volumes_per_class < 1:
            raise ConfigError("volumes_per_class must be >= 1")
        if min(self.depth, self.height, self.width) < 2:
            raise ConfigError("volume dims must be >= 2")


def _coords(spec):
    z = np.arange(spec.depth)[:, None, None]
    y = np.arange(spec.height)[None, :, None]
    x = np.arange(spec.width)[None, None, :]
    return z, y, x


def _smooth(spec, rng):
    z, y, x = _coords(spec)
    slopes = rng.uniform(-spec.smooth_slope_max, spec.smooth_slope_max, size=3)
    base = rng.uniform(96, 160)
    field = base + slopes[0] * z + slopes[1] * y + slopes[2] * x
    field += rng.integers(-spec.noise_amplitude, spec.noise_amplitude + 1,
                          size=(spec.depth, spec.height, spec.width))
    return field


def _checker(spec, rng):
    z, y, x = _coords(spec)
    dark = rng.uniform(*spec.checker_dark)
    bright = rng.uniform(*spec.checker_bright)
    parity = (z + y + x) % 2
    field = np.where(parity == 0, dark, bright).astype(np.float64)
    field += rng.integers(-2 * spec.noise_amplitude, 2 * spec.noise_amplitude + 1,
                          size=(spec.depth, spec.height, spec.width))
    return field

def _speckle(spec, rng):
    return rng.uniform(0, 256, size=(spec.depth, spec.height, spec.width))


_GENERATORS = (_smooth, _checker, _speckle)


def generate_volume(class_id, spec, rng):
    """One 8-bit volume of the given class."""
    field = _GENERATORS[class_id](spec, rng)
    voxels = np.clip(np.floor(field), 0, 255).astype(np.int64)
    return Volume(voxels=voxels, spacing_mm=spec.spacing_mm, levels=256)


def generate_dataset(spec, out_dir):
    """Write volumes_per_class volumes of each class plus labels.csv.

    Returns [(manifest filename, label)] in write order.  Deterministic for
    a fixed spec: the RNG stream is keyed by (seed, class, index).
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for class_id in range(len(CLASS_NAMES)):
        for i in range(spec.volumes_per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=spec.seed, spawn_key=(class_id, i))
            )
            vol = generate_volume(class_id, spec, rng)
            name = f"vol_{class_id}_{i:03d}.mf"
            save_volume(vol, os.path.join(out_dir, name))
            entries.append((name, class_id))
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("manifest,label\n")
        for name, label in entries:
            fh.write(f"{name},{label}\n")
    return entries


def load_labels(dataset_dir):
    """Read labels.csv back as [(manifest filename, label)]."""
    path = os.path.join(dataset_dir, "labels.csv")
    entries = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"dataset has no labels.csv: {exc}") from exc
    with fh:
        header = fh.readline().strip()
        if header != "manifest,label":
            raise ConfigError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, label = line.rsplit(",", 1)
            entries.append((name, int(label)))
    if not entries:
        raise ConfigError(f"{path}: no dataset rows")
    return entries
