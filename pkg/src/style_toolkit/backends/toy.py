"""Deterministic toy backends used as desk-scale oracles.

:class:`ToyLinearBackend` realizes the whole gateway with seeded linear maps:
style codes render through ``clamp01(A @ s + pixel_bias)``, images embed
through ``normalize(B @ x)``, identity embeds through ``normalize(C @ x)``,
and the extended-latent-to-style map is a per-layer affine transform. Every
op is bit-deterministic for a fixed seed, and every gradient the optimizer
or mapper needs has a closed form.

:class:`QuadraticSurrogateBackend` swaps the cosine-distance term for a
quadratic bowl so descent runs can be checked against the closed-form ridge
solution.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .. import kernels, serialization
from ..errors import BackendUnavailableError, IdentityUnavailableError, InverterUnavailableError
from ..geometry import LatentGeometry, StyleCode, WPlusCode
from .base import ImageTensor, JointEmbedding, ManipulationBackend, unit


def _text_seed(seed: int, text: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{text}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class ToyLinearBackend(ManipulationBackend):
    """Seeded linear generator/embedder bundle.

    Args:
        geometry: Latent geometry shared by all handles.
        embed_dim: Width of the joint language-image space.
        image_hw: Output image height and width (3 channels fixed).
        seed: Seeds every matrix and the unknown-text embedder.
        gen_scale: Scale of the generator matrix entries; keep small together
            with ``pixel_bias=0.5`` to hold renders inside (0, 1) so the
            output clamp stays inactive.
        pixel_bias: Constant added to every pixel before clamping.
        normalize_embeddings: When False the image embedder returns its raw
            linear output (``normalized=False``); used by oracle fixtures
            that need the embedder in its linear, pre-normalization form.
        identity_dim: Width of the identity embedder, or None to omit the
            identity handle.
        with_inverter: Expose the pseudo-inverse inverter.
        style_map: "random" per-layer affine weights, or "identity" (requires
            each layer's style width to equal latent_dim).
        style_bias: "zero" or "random" per-channel style-map bias.
        style_prior_sigma: Per-channel (or scalar) std of the style prior.
        text_table: Known sentences mapped to fixed embedding vectors
            (normalized at load); unknown sentences get a deterministic
            pseudo-random unit vector derived from (seed, sentence).
    """

    kind = "toy"

    def __init__(
        self,
        geometry: LatentGeometry,
        embed_dim: int = 16,
        image_hw: tuple[int, int] = (4, 4),
        seed: int = 0,
        gen_scale: float = 0.02,
        pixel_bias: float = 0.0,
        normalize_embeddings: bool = True,
        identity_dim: int | None = 8,
        with_inverter: bool = True,
        style_map: str = "identity",
        style_bias: str = "zero",
        style_prior_sigma=1.0,
        text_table: dict[str, list[float]] | None = None,
    ):
        if style_map not in ("random", "identity"):
            raise ValueError(f"unknown style_map mode {style_map!r}")
        if style_bias not in ("zero", "random"):
            raise ValueError(f"unknown style_bias mode {style_bias!r}")
        if style_map == "identity" and any(
            c != geometry.latent_dim for c in geometry.style_channel_counts
        ):
            raise ValueError("identity style_map needs per-layer style width == latent_dim")
        self._geometry = geometry
        self._embed_dim = int(embed_dim)
        self.image_hw = (int(image_hw[0]), int(image_hw[1]))
        self.seed = int(seed)
        self.gen_scale = float(gen_scale)
        self.pixel_bias = float(pixel_bias)
        self.normalize_embeddings = bool(normalize_embeddings)
        self.identity_dim = None if identity_dim is None else int(identity_dim)
        self.with_inverter = bool(with_inverter)
        self.style_map = style_map
        self.style_bias_mode = style_bias

        C = geometry.total_style_channels
        sigma = np.broadcast_to(np.asarray(style_prior_sigma, dtype=np.float64), (C,)).copy()
        if np.any(sigma < 0):
            raise ValueError("style_prior_sigma entries must be non-negative")
        self.style_prior_sigma = sigma

        # Raw table values; normalization happens at lookup so save/load
        # round-trips keep the stored values (and the fingerprint) bit-stable.
        self._text_table = {
            name: np.asarray(vec, dtype=np.float64)
            for name, vec in (text_table or {}).items()
        }

        rng = np.random.default_rng(self.seed)
        # Draw order is fixed; changing it would silently change fingerprints.
        self._style_weights = []
        for count in geometry.style_channel_counts:
            block = rng.normal(size=(count, geometry.latent_dim)) / np.sqrt(geometry.latent_dim)
            if style_map == "identity":
                block = np.eye(count, geometry.latent_dim)
            self._style_weights.append(block)
        if style_bias == "random":
            self._style_bias = rng.normal(size=C)
        else:
            rng.normal(size=C)  # keep the stream position independent of the mode
            self._style_bias = np.zeros(C)

        pixel_count = self.image_hw[0] * self.image_hw[1] * 3
        self.A = rng.normal(size=(pixel_count, C)) * self.gen_scale
        self.B = rng.normal(size=(self._embed_dim, pixel_count)) / np.sqrt(pixel_count)
        if self.identity_dim is not None:
            self.C_id = rng.normal(size=(self.identity_dim, pixel_count)) / np.sqrt(pixel_count)
        else:
            self.C_id = None

        self._style_block = self._build_style_block()
        self._pinv = None
        if self.with_inverter:
            full = self.A @ self._style_block  # pixels x wplus_size
            self._pinv = np.linalg.pinv(full)

    # -- construction helpers ------------------------------------------------

    def _build_style_block(self) -> np.ndarray:
        geom = self._geometry
        block = np.zeros((geom.total_style_channels, geom.wplus_size))
        offsets = geom.layer_offsets
        for layer, W in enumerate(self._style_weights):
            r0 = offsets[layer]
            c0 = layer * geom.latent_dim
            block[r0 : r0 + W.shape[0], c0 : c0 + geom.latent_dim] = W
        return block

    def fingerprint(self) -> str:
        table_digest = hashlib.sha256(
            json.dumps(
                {k: [float(x) for x in v] for k, v in sorted(self._text_table.items())},
                sort_keys=True,
            ).encode("utf-8")
        ).hexdigest()
        payload = json.dumps(
            {
                "kind": self.kind,
                "seed": self.seed,
                "geometry": json.loads(self._geometry.to_json()),
                "embed_dim": self._embed_dim,
                "image_hw": list(self.image_hw),
                "gen_scale": self.gen_scale,
                "pixel_bias": self.pixel_bias,
                "normalize_embeddings": self.normalize_embeddings,
                "identity_dim": self.identity_dim,
                "with_inverter": self.with_inverter,
                "style_map": self.style_map,
                "style_bias": self.style_bias_mode,
                "style_prior_sigma": list(self.style_prior_sigma),
                "text_table": table_digest,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    # -- contract ------------------------------------------------------------

    @property
    def geometry(self) -> LatentGeometry:
        return self._geometry

    @property
    def embed_dim(self) -> int:
        return self._embed_dim

    def _render_flat(self, style_values: np.ndarray) -> np.ndarray:
        return kernels.render_batch(self.A, style_values[None, :], self.pixel_bias)[0]

    def generate_from_style(self, s: StyleCode) -> ImageTensor:
        if s.geometry != self._geometry:
            raise self._geom_error(s.geometry)
        h, w = self.image_hw
        return ImageTensor(self._render_flat(s.values).reshape(h, w, 3))

    def wplus_to_style(self, w: WPlusCode) -> StyleCode:
        w.require_geometry(self._geometry)
        return StyleCode(self._style_values(w.values), self._geometry)

    def _style_values(self, w_values: np.ndarray) -> np.ndarray:
        geom = self._geometry
        out = np.empty(geom.total_style_channels)
        offsets = geom.layer_offsets
        for layer, W in enumerate(self._style_weights):
            r0 = offsets[layer]
            out[r0 : r0 + W.shape[0]] = W @ w_values[layer]
        return out + self._style_bias

    def _style_jacobian_T(self, grad_style: np.ndarray) -> np.ndarray:
        geom = self._geometry
        out = np.empty((geom.num_layers, geom.latent_dim))
        offsets = geom.layer_offsets
        for layer, W in enumerate(self._style_weights):
            r0 = offsets[layer]
            out[layer] = W.T @ grad_style[r0 : r0 + W.shape[0]]
        return out

    def embed_image(self, img: ImageTensor) -> JointEmbedding:
        raw = self.B @ img.flat()
        if not self.normalize_embeddings:
            return JointEmbedding(raw, normalized=False)
        return JointEmbedding(unit(raw), normalized=True)

    def embed_text(self, text: str) -> JointEmbedding:
        known = self._text_table.get(text)
        if known is not None:
            return JointEmbedding(unit(known), normalized=True)
        vec = _text_seed(self.seed, text).normal(size=self._embed_dim)
        return JointEmbedding(unit(vec), normalized=True)

    @property
    def has_identity(self) -> bool:
        return self.C_id is not None

    @property
    def has_inverter(self) -> bool:
        return self._pinv is not None

    def _identity_embed(self, pixels_flat: np.ndarray) -> np.ndarray:
        # Identity vectors are re-normalized before the inner product so the
        # loss is a true cosine and exactly 0 for identical codes.
        return unit(self.C_id @ pixels_flat)

    def identity_loss(self, w_source: WPlusCode, w_candidate: WPlusCode) -> float:
        if self.C_id is None:
            raise IdentityUnavailableError()
        r_src = self._identity_embed(self.generate_from_wplus(w_source).flat())
        r_cand = self._identity_embed(self.generate_from_wplus(w_candidate).flat())
        return float(1.0 - r_src @ r_cand)

    def invert_image(self, img: ImageTensor) -> WPlusCode:
        if self._pinv is None:
            raise InverterUnavailableError("toy backend built without inverter")
        offset = self.A @ self._style_bias + self.pixel_bias
        flat = self._pinv @ (img.flat() - offset)
        return WPlusCode.from_flat(flat, self._geometry)

    def sample_styles(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=(count, self._geometry.total_style_channels)) * self.style_prior_sigma

    def sample_wplus(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=(count, self._geometry.num_layers, self._geometry.latent_dim))

    def style_to_embedding_batch(self, styles: np.ndarray) -> np.ndarray:
        X = kernels.render_batch(self.A, styles, self.pixel_bias)
        return kernels.embed_batch(self.B, X, normalize=self.normalize_embeddings)

    # -- gradients -----------------------------------------------------------

    @property
    def supports_gradients(self) -> bool:
        return True

    def _forward_pixels(self, w_values: np.ndarray):
        s = self._style_values(w_values)
        y = self.A @ s + self.pixel_bias
        x = np.clip(y, 0.0, 1.0)
        mask = (y > 0.0) & (y < 1.0)
        return x, mask

    def _pixel_grad_to_wplus(self, dx: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return self._style_jacobian_T(self.A.T @ (dx * mask))

    def clip_loss_wplus(self, w_values: np.ndarray, text: str) -> float:
        return self.clip_loss_grad_wplus(w_values, text)[0]

    def clip_loss_grad_wplus(self, w_values: np.ndarray, text: str) -> tuple[float, np.ndarray]:
        w_values = np.asarray(w_values, dtype=np.float64)
        t_hat = self.embed_text(text).values
        x, mask = self._forward_pixels(w_values)
        e = self.B @ x
        if self.normalize_embeddings:
            n = np.linalg.norm(e)
            if n <= 1e-300:
                raise ValueError("degenerate image embedding in gradient path")
            i_hat = e / n
            value = 1.0 - float(i_hat @ t_hat)
            de = -(t_hat - i_hat * (i_hat @ t_hat)) / n
        else:
            value = 1.0 - float(e @ t_hat)
            de = -t_hat
        grad = self._pixel_grad_to_wplus(self.B.T @ de, mask)
        return value, grad

    def identity_loss_grad_wplus(
        self, w_source_values: np.ndarray, w_values: np.ndarray
    ) -> tuple[float, np.ndarray]:
        if self.C_id is None:
            raise IdentityUnavailableError()
        x_src, _ = self._forward_pixels(np.asarray(w_source_values, dtype=np.float64))
        r_src = self._identity_embed(x_src)
        x, mask = self._forward_pixels(np.asarray(w_values, dtype=np.float64))
        u = self.C_id @ x
        n = np.linalg.norm(u)
        if n <= 1e-300:
            raise ValueError("degenerate identity embedding in gradient path")
        r = u / n
        value = 1.0 - float(r @ r_src)
        du = -(r_src - r * (r @ r_src)) / n
        grad = self._pixel_grad_to_wplus(self.C_id.T @ du, mask)
        return value, grad

    # -- weight persistence ---------------------------------------------------

    def save_weights(self, path) -> None:
        """Serialize all matrices in the shared float32 block format."""
        path = Path(path)
        with path.open("wb") as fp:
            serialization.write_json_header(
                fp,
                {
                    "kind": self.kind,
                    "seed": self.seed,
                    "geometry": json.loads(self._geometry.to_json()),
                    "embed_dim": self._embed_dim,
                    "image_hw": list(self.image_hw),
                    "gen_scale": self.gen_scale,
                    "pixel_bias": self.pixel_bias,
                    "normalize_embeddings": self.normalize_embeddings,
                    "identity_dim": self.identity_dim,
                    "with_inverter": self.with_inverter,
                    "style_map": self.style_map,
                    "style_bias": self.style_bias_mode,
                    "text_table": {
                        k: [float(x) for x in v] for k, v in sorted(self._text_table.items())
                    },
                },
            )
            serialization.write_array(fp, self.style_prior_sigma)
            for W in self._style_weights:
                serialization.write_array(fp, W)
            serialization.write_array(fp, self._style_bias)
            serialization.write_array(fp, self.A)
            serialization.write_array(fp, self.B)
            if self.C_id is not None:
                serialization.write_array(fp, self.C_id)

    @classmethod
    def load_weights(cls, path) -> "ToyLinearBackend":
        path = Path(path)
        with path.open("rb") as fp:
            header = serialization.read_json_header(fp)
            geom = LatentGeometry.from_dict(header["geometry"])
            backend = cls(
                geometry=geom,
                embed_dim=header["embed_dim"],
                image_hw=tuple(header["image_hw"]),
                seed=header["seed"],
                gen_scale=header["gen_scale"],
                pixel_bias=header["pixel_bias"],
                normalize_embeddings=header["normalize_embeddings"],
                identity_dim=header["identity_dim"],
                with_inverter=header["with_inverter"],
                style_map=header["style_map"],
                style_bias=header["style_bias"],
                text_table=header["text_table"],
            )
            backend.style_prior_sigma = serialization.read_array(fp)
            weights = []
            for count in geom.style_channel_counts:
                weights.append(serialization.read_array(fp).reshape(count, geom.latent_dim))
            backend._style_weights = weights
            backend._style_bias = serialization.read_array(fp)
            pixel_count = backend.image_hw[0] * backend.image_hw[1] * 3
            backend.A = serialization.read_array(fp).reshape(pixel_count, geom.total_style_channels)
            backend.B = serialization.read_array(fp).reshape(header["embed_dim"], pixel_count)
            if header["identity_dim"] is not None:
                backend.C_id = serialization.read_array(fp).reshape(
                    header["identity_dim"], pixel_count
                )
        backend._style_block = backend._build_style_block()
        if backend.with_inverter:
            backend._pinv = np.linalg.pinv(backend.A @ backend._style_block)
        return backend

    def _geom_error(self, got: LatentGeometry):
        from ..errors import GeometryMismatchError

        return GeometryMismatchError(
            f"style code geometry {got.total_style_channels} channels does not match "
            f"backend geometry {self._geometry.total_style_channels} channels"
        )


class QuadraticSurrogateBackend(ManipulationBackend):
    """Gradient-capable backend whose text-alignment term is a quadratic bowl.

    ``clip_loss_wplus(w, t) = 0.5 * ||Q w_flat - c||^2`` for seeded Q, c, so a
    descent run with a squared latent penalty has the closed-form minimizer
    ``(Q^T Q + 2 lambda I) w = Q^T c + 2 lambda w_s``. Image/embedding ops are
    intentionally unavailable.
    """

    kind = "quadratic"

    def __init__(self, geometry: LatentGeometry, seed: int = 0):
        self._geometry = geometry
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        n = geometry.wplus_size
        self.Q = rng.normal(size=(n, n)) / np.sqrt(n)
        self.c = rng.normal(size=n)

    @property
    def geometry(self) -> LatentGeometry:
        return self._geometry

    @property
    def embed_dim(self) -> int:
        return 1

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"kind": self.kind, "seed": self.seed, "geometry": json.loads(self._geometry.to_json())},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _unavailable(self):
        return BackendUnavailableError("quadratic surrogate backend has no image pipeline")

    def generate_from_style(self, s: StyleCode) -> ImageTensor:
        raise self._unavailable()

    def wplus_to_style(self, w: WPlusCode) -> StyleCode:
        raise self._unavailable()

    def embed_image(self, img: ImageTensor) -> JointEmbedding:
        raise self._unavailable()

    def embed_text(self, text: str) -> JointEmbedding:
        raise self._unavailable()

    def sample_styles(self, count: int, rng: np.random.Generator) -> np.ndarray:
        raise self._unavailable()

    def sample_wplus(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=(count, self._geometry.num_layers, self._geometry.latent_dim))

    @property
    def supports_gradients(self) -> bool:
        return True

    def clip_loss_wplus(self, w_values: np.ndarray, text: str) -> float:
        r = self.Q @ np.asarray(w_values, dtype=np.float64).reshape(-1) - self.c
        return 0.5 * float(r @ r)

    def clip_loss_grad_wplus(self, w_values: np.ndarray, text: str) -> tuple[float, np.ndarray]:
        flat = np.asarray(w_values, dtype=np.float64).reshape(-1)
        r = self.Q @ flat - self.c
        grad = (self.Q.T @ r).reshape(self._geometry.num_layers, self._geometry.latent_dim)
        return 0.5 * float(r @ r), grad

    def ridge_solution(self, w_s_values: np.ndarray, lambda_l2: float) -> np.ndarray:
        """Closed-form minimizer of the surrogate objective with a squared penalty."""
        n = self._geometry.wplus_size
        lhs = self.Q.T @ self.Q + 2.0 * lambda_l2 * np.eye(n)
        rhs = self.Q.T @ self.c + 2.0 * lambda_l2 * np.asarray(w_s_values).reshape(-1)
        return np.linalg.solve(lhs, rhs).reshape(self._geometry.num_layers, self._geometry.latent_dim)
