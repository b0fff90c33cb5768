"""Abstract contracts for the pretrained components the toolkit drives.

A backend bundles up to six handles: a generator over extended latents, a
generator over style space, an image embedder and a text embedder into one
joint space, and optional identity embedder and image inverter. Adapters for
real model runtimes implement :class:`ManipulationBackend`; the deterministic
toy backends in :mod:`style_toolkit.backends.toy` implement the same contract
and back every desk-scale test.

Inference handles are read-only after construction and must be safe to call
from concurrent requests; adapters wrapping non-reentrant runtimes must
serialize internally.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from ..errors import IdentityUnavailableError, InverterUnavailableError
from ..geometry import LatentGeometry, StyleCode, WPlusCode

EMBED_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ImageTensor:
    """H x W x 3 pixel array in [0, 1] plus a provenance tag."""

    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite pixels")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class JointEmbedding:
    """Vector in the shared language-image space.

    ``normalized`` records whether the producer scaled the vector to unit
    norm; when set, the norm is 1 within ``EMBED_NORM_TOL``.
    """

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding must be a flat vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite entries")
        if self.normalized and abs(np.linalg.norm(arr) - 1.0) > EMBED_NORM_TOL:
            raise ValueError("embedding flagged normalized but norm differs from 1")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def unit(v: np.ndarray) -> np.ndarray:
    """Scale to unit norm; rejects near-zero vectors."""
    n = np.linalg.norm(v)
    if n <= 1e-300:
        raise ValueError("cannot normalize a zero vector")
    return v / n


class ManipulationBackend(abc.ABC):
    """Contract shared by all generator/embedder bundles."""

    kind: str = "abstract"

    @property
    @abc.abstractmethod
    def geometry(self) -> LatentGeometry: ...

    @property
    @abc.abstractmethod
    def embed_dim(self) -> int: ...

    @abc.abstractmethod
    def fingerprint(self) -> str:
        """Stable content hash of the backend's identity and configuration."""

    # -- generation ---------------------------------------------------------

    @abc.abstractmethod
    def generate_from_style(self, s: StyleCode) -> ImageTensor: ...

    def generate_from_wplus(self, w: WPlusCode) -> ImageTensor:
        return self.generate_from_style(self.wplus_to_style(w))

    @abc.abstractmethod
    def wplus_to_style(self, w: WPlusCode) -> StyleCode: ...

    # -- joint embedding ----------------------------------------------------

    @abc.abstractmethod
    def embed_image(self, img: ImageTensor) -> JointEmbedding: ...

    @abc.abstractmethod
    def embed_text(self, text: str) -> JointEmbedding: ...

    def clip_distance(self, img: ImageTensor, text: str) -> float:
        """Cosine distance between the image and text embeddings; in [0, 2]."""
        i = self.embed_image(img)
        t = self.embed_text(text)
        return float(1.0 - i.values @ t.values)

    # -- optional handles ---------------------------------------------------

    @property
    def has_identity(self) -> bool:
        return False

    @property
    def has_inverter(self) -> bool:
        return False

    def identity_loss(self, w_source: WPlusCode, w_candidate: WPlusCode) -> float:
        """One minus cosine similarity of identity embeddings of the two renders."""
        raise IdentityUnavailableError()

    def invert_image(self, img: ImageTensor) -> WPlusCode:
        raise InverterUnavailableError("backend has no inverter")

    # -- sampling (used by preprocessing and mapper training) ---------------

    @abc.abstractmethod
    def sample_styles(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw (count, total_style_channels) style codes from the backend's prior."""

    @abc.abstractmethod
    def sample_wplus(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw (count, num_layers, latent_dim) extended codes from the prior."""

    def style_to_embedding_batch(self, styles: np.ndarray) -> np.ndarray:
        """Image embeddings for a batch of raw style rows (generate, then embed).

        The default loops over the single-item operations; backends with a
        fused fast path override this.
        """
        out = np.empty((styles.shape[0], self.embed_dim))
        for i in range(styles.shape[0]):
            img = self.generate_from_style(StyleCode(styles[i], self.geometry))
            out[i] = self.embed_image(img).values
        return out

    # -- differentiable seam (arrays in, arrays out) ------------------------
    #
    # Gradient-based methods need the cosine-distance and identity terms as
    # functions of the raw (num_layers, latent_dim) value array, together
    # with their gradients back-propagated through the fixed generator and
    # embedders. Backends that can differentiate implement the *_grad pair.

    @property
    def supports_gradients(self) -> bool:
        return False

    def clip_loss_wplus(self, w_values: np.ndarray, text: str) -> float:
        return self.clip_distance(self.generate_from_wplus(WPlusCode(w_values)), text)

    def clip_loss_grad_wplus(self, w_values: np.ndarray, text: str) -> tuple[float, np.ndarray]:
        raise NotImplementedError(f"backend kind {self.kind!r} cannot differentiate")

    def identity_loss_grad_wplus(
        self, w_source_values: np.ndarray, w_values: np.ndarray
    ) -> tuple[float, np.ndarray]:
        raise IdentityUnavailableError()


@dataclass(frozen=True)
class BackendBundle:
    """A validated backend plus the geometry every consumer should use.

    Construction checks the cross-handle invariants once so downstream code
    can rely on them.
    """

    backend: ManipulationBackend
    geometry: LatentGeometry = field(init=False)

    def __post_init__(self):
        geom = self.backend.geometry
        probe = self.backend.embed_text("geometry probe")
        if probe.values.size != self.backend.embed_dim:
            raise ValueError("text embedder dimension disagrees with declared embed_dim")
        object.__setattr__(self, "geometry", geom)
