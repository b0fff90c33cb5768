"""Latent-space data model and the pure algebra on it.

Three spaces appear throughout the toolkit:

* the extended per-layer latent space (one vector per generator layer),
  carried by :class:`WPlusCode` and grouped into coarse/medium/fine layer
  bands for the residual mapper;
* the flat style-activation space, carried by :class:`StyleCode`, in which
  global text-driven directions live;
* sparse directions in style space, carried by :class:`StyleDirection`.

Everything here is immutable after construction and all operations are pure,
so the types are safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryMismatchError

GROUP_NAMES = ("coarse", "medium", "fine")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LatentGeometry:
    """Shape contract shared by codes, directions, backends, and models.

    Args:
        num_layers: Number of per-layer latent vectors in an extended code.
        latent_dim: Width of each per-layer latent vector.
        style_channel_counts: Per-layer style widths; their sum is the length
            of a flat style code.
        group_boundaries: Two cut indices (b0, b1) splitting layers into
            coarse [0, b0), medium [b0, b1), and fine [b1, num_layers).
            Defaults to (4, 8), the common convention for 18-layer
            1024px generators.
    """

    num_layers: int
    latent_dim: int
    style_channel_counts: tuple[int, ...]
    group_boundaries: tuple[int, int] = (4, 8)

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be positive, got {self.num_layers}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        counts = tuple(int(c) for c in self.style_channel_counts)
        object.__setattr__(self, "style_channel_counts", counts)
        if len(counts) != self.num_layers:
            raise ValueError(
                f"style_channel_counts has {len(counts)} entries for {self.num_layers} layers"
            )
        if any(c < 1 for c in counts):
            raise ValueError("style_channel_counts must all be positive")
        b0, b1 = self.group_boundaries
        object.__setattr__(self, "group_boundaries", (int(b0), int(b1)))
        if not (1 <= b0 < b1 <= self.num_layers - 1):
            raise ValueError(
                f"group_boundaries {self.group_boundaries} must be strictly increasing "
                f"and within [1, {self.num_layers - 1}]"
            )

    @property
    def total_style_channels(self) -> int:
        return sum(self.style_channel_counts)

    @property
    def wplus_size(self) -> int:
        """Length of a flattened extended code."""
        return self.num_layers * self.latent_dim

    @property
    def layer_offsets(self) -> tuple[int, ...]:
        """Start offset of each layer's slice in a flat style code."""
        offsets = [0]
        for c in self.style_channel_counts[:-1]:
            offsets.append(offsets[-1] + c)
        return tuple(offsets)

    def group_layer_slices(self) -> dict[str, slice]:
        """Layer index ranges of the coarse/medium/fine groups."""
        b0, b1 = self.group_boundaries
        return {
            "coarse": slice(0, b0),
            "medium": slice(b0, b1),
            "fine": slice(b1, self.num_layers),
        }

    def group_layer_counts(self) -> dict[str, int]:
        b0, b1 = self.group_boundaries
        return {"coarse": b0, "medium": b1 - b0, "fine": self.num_layers - b1}

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_layers": self.num_layers,
                "latent_dim": self.latent_dim,
                "style_channel_counts": list(self.style_channel_counts),
                "group_boundaries": list(self.group_boundaries),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LatentGeometry":
        d = json.loads(text)
        return cls(
            num_layers=int(d["num_layers"]),
            latent_dim=int(d["latent_dim"]),
            style_channel_counts=tuple(int(c) for c in d["style_channel_counts"]),
            group_boundaries=tuple(int(b) for b in d["group_boundaries"]),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "LatentGeometry":
        return cls.from_json(json.dumps(d))


@dataclass(frozen=True)
class WPlusCode:
    """Extended latent code: one latent vector per generator layer."""

    values: np.ndarray  # (num_layers, latent_dim)

    def __post_init__(self):
        arr = _freeze(np.asarray(self.values))
        if arr.ndim != 2:
            raise GeometryMismatchError(f"extended code must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("extended code contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def num_layers(self) -> int:
        return self.values.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        """Row-major flattened view of the code."""
        return self.values.reshape(-1)

    def conforms(self, geom: LatentGeometry) -> bool:
        return self.values.shape == (geom.num_layers, geom.latent_dim)

    def require_geometry(self, geom: LatentGeometry) -> None:
        if not self.conforms(geom):
            raise GeometryMismatchError(
                f"code shape {self.values.shape} does not match geometry "
                f"({geom.num_layers}, {geom.latent_dim})"
            )

    @classmethod
    def from_flat(cls, flat: np.ndarray, geom: LatentGeometry) -> "WPlusCode":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != geom.wplus_size:
            raise GeometryMismatchError(
                f"flat code of length {flat.size} does not match geometry size {geom.wplus_size}"
            )
        return cls(flat.reshape(geom.num_layers, geom.latent_dim))


@dataclass(frozen=True)
class StyleCode:
    """Flat vector of per-channel style activations."""

    values: np.ndarray  # (total_style_channels,)
    geometry: LatentGeometry

    def __post_init__(self):
        arr = _freeze(np.asarray(self.values))
        if arr.ndim != 1:
            raise GeometryMismatchError(f"style code must be 1-D, got shape {arr.shape}")
        if arr.size != self.geometry.total_style_channels:
            raise GeometryMismatchError(
                f"style code length {arr.size} does not match geometry total "
                f"{self.geometry.total_style_channels}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("style code contains non-finite entries")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class StyleDirection:
    """A (typically sparse) displacement in style space.

    ``active_count`` caches the number of nonzero channels and is recomputed
    at construction, so it stays consistent with ``values`` by immutability.
    """

    values: np.ndarray
    geometry: LatentGeometry
    active_count: int = field(init=False)

    def __post_init__(self):
        arr = _freeze(np.asarray(self.values))
        if arr.ndim != 1 or arr.size != self.geometry.total_style_channels:
            raise GeometryMismatchError(
                f"direction length {arr.size} does not match geometry total "
                f"{self.geometry.total_style_channels}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("direction contains non-finite entries")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "active_count", int(np.count_nonzero(arr)))

    def active_channels(self) -> np.ndarray:
        return np.flatnonzero(self.values)


def split_wplus(w: WPlusCode, geom: LatentGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an extended code into its coarse/medium/fine layer bands.

    The three returned arrays are copies; concatenating them along the layer
    axis reconstructs ``w`` exactly.
    """
    w.require_geometry(geom)
    slices = geom.group_layer_slices()
    return tuple(w.values[slices[name]].copy() for name in GROUP_NAMES)


def merge_wplus(
    coarse: np.ndarray, medium: np.ndarray, fine: np.ndarray, geom: LatentGeometry
) -> WPlusCode:
    """Inverse of :func:`split_wplus`; validates slice shapes against the geometry."""
    counts = geom.group_layer_counts()
    parts = {"coarse": np.asarray(coarse), "medium": np.asarray(medium), "fine": np.asarray(fine)}
    for name in GROUP_NAMES:
        expected = (counts[name], geom.latent_dim)
        if parts[name].shape != expected:
            raise GeometryMismatchError(
                f"{name} slice has shape {parts[name].shape}, expected {expected}"
            )
    return WPlusCode(np.concatenate([parts[name] for name in GROUP_NAMES], axis=0))


def add_direction(s: StyleCode, d: StyleDirection, alpha: float) -> StyleCode:
    """Move a style code along a direction: ``result = s + alpha * d``.

    Negative ``alpha`` walks the direction backwards (e.g. darker instead of
    greyer hair); ``alpha`` must be finite.
    """
    if s.geometry != d.geometry:
        raise GeometryMismatchError("style code and direction have different geometries")
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    return StyleCode(s.values + alpha * d.values, s.geometry)
