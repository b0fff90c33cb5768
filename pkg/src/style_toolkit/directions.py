"""Input-agnostic text-driven directions in style space.

The route from a prompt pair to an edit has four stages:

1. **Prompt encoding.** The target attribute and its neutral class are each
   pushed through a sentence-template bank, their text embeddings averaged
   per class, and the normalized difference of the two means becomes the
   target direction in the joint space.

2. **One-time channel statistics.** For every style channel, sample style
   codes, nudge only that channel by ``perturb_alpha`` times its standard
   deviation in both directions, render both variants, and embed them. The
   per-pair embedding difference is normalized to unit length and averaged
   over ``pair_count`` pairs (default 100; the perturbation strength default
   is 5). The result is one mean direction per channel describing how that
   channel moves images in the joint space. This is the expensive, cacheable
   step; everything after it is a matrix-vector product.

3. **Relevance and assembly.** A channel's relevance is the projection of
   its mean direction onto the target direction. Channels whose absolute
   relevance falls below the threshold ``beta`` are zeroed; the survivors
   keep their relevance as the direction value. Higher ``beta`` trades edit
   strength for disentanglement. ``beta`` may also be chosen indirectly so
   that exactly ``k`` channels stay active.

4. **Application.** The style code moves by ``alpha`` times the direction;
   negative ``alpha`` reverses the edit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import serialization
from .backends.base import ImageTensor, JointEmbedding, ManipulationBackend, unit
from .errors import DegeneratePromptError, GeometryMismatchError
from .geometry import LatentGeometry, StyleCode, StyleDirection, add_direction
from .templates import DEFAULT_BANK_ID, TemplateBank, get_bank

DEFAULT_PAIR_COUNT = 100
DEFAULT_PERTURB_ALPHA = 5.0
DEFAULT_SIGMA_SAMPLES = 1000


class InteractiveDefault(NamedTuple):
    alpha: float
    k: int


# Initial strength / active-channel defaults for interactive editing.
INTERACTIVE_DEFAULTS: dict[str, InteractiveDefault] = {
    "face": InteractiveDefault(alpha=3.0, k=20),
    "car": InteractiveDefault(alpha=3.0, k=100),
    "cat": InteractiveDefault(alpha=7.0, k=100),
}


@dataclass(frozen=True)
class PromptSpec:
    """A target attribute and the neutral class it is measured against."""

    target_text: str
    neutral_text: str
    template_bank_id: str = DEFAULT_BANK_ID

    def __post_init__(self):
        if not self.target_text or not self.neutral_text:
            raise ValueError("target and neutral prompts must be non-empty")
        if self.target_text == self.neutral_text:
            raise DegeneratePromptError(
                "target and neutral prompts are identical; no direction exists"
            )


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean embedding deltas plus the sampling provenance.

    ``deltas[c]`` is the mean of unit-normalized embedding differences from
    perturbing channel ``c`` (a mean of unit vectors, so its norm is at most
    1). ``channel_std[c]`` is the style prior's per-channel deviation used to
    scale the perturbation; channels with zero deviation are inert and carry
    a zero row.
    """

    geometry: LatentGeometry
    deltas: np.ndarray  # (total_style_channels, embed_dim)
    channel_std: np.ndarray  # (total_style_channels,)
    inert: np.ndarray  # bool mask of degenerate channels
    sample_pairs: int = DEFAULT_PAIR_COUNT
    perturb_alpha: float = DEFAULT_PERTURB_ALPHA
    sample_count: int = DEFAULT_SIGMA_SAMPLES
    backend_fingerprint: str = ""
    seed: int = 0

    def __post_init__(self):
        deltas = np.ascontiguousarray(self.deltas, dtype=np.float64)
        std = np.ascontiguousarray(self.channel_std, dtype=np.float64)
        inert = np.ascontiguousarray(self.inert, dtype=bool)
        C = self.geometry.total_style_channels
        if deltas.shape[0] != C or std.shape != (C,) or inert.shape != (C,):
            raise GeometryMismatchError("stats arrays do not match the geometry channel count")
        if self.sample_pairs < 1:
            raise ValueError("sample_pairs must be >= 1")
        if np.any(std < 0):
            raise ValueError("channel deviations must be non-negative")
        norms = np.linalg.norm(deltas, axis=1)
        if np.any(norms > 1.0 + 1e-6):
            raise ValueError("stats rows are means of unit vectors; norms must be <= 1")
        for arr in (deltas, std, inert):
            arr.flags.writeable = False
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "channel_std", std)
        object.__setattr__(self, "inert", inert)

    @property
    def embed_dim(self) -> int:
        return self.deltas.shape[1]

    def fingerprint(self) -> str:
        return stats_fingerprint(
            self.backend_fingerprint,
            self.seed,
            self.sample_pairs,
            self.perturb_alpha,
            self.sample_count,
        )


def stats_fingerprint(
    backend_fingerprint: str,
    seed: int,
    pair_count: int,
    perturb_alpha: float,
    sample_count: int,
) -> str:
    """Content address of a preprocessing run: backend plus sampling params."""
    payload = json.dumps(
        {
            "backend": backend_fingerprint,
            "seed": seed,
            "pair_count": pair_count,
            "perturb_alpha": perturb_alpha,
            "sample_count": sample_count,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def encode_prompt_pair(
    backend: ManipulationBackend, spec: PromptSpec, bank: TemplateBank | None = None
) -> JointEmbedding:
    """Unit-norm difference between the target and neutral class embeddings.

    Both class names are substituted into every template of the bank, each
    sentence is embedded, the embeddings are averaged per class, and the
    neutral mean is subtracted from the target mean.
    """
    bank = bank if bank is not None else get_bank(spec.template_bank_id)
    target_mean = np.mean(
        [backend.embed_text(s).values for s in bank.expand(spec.target_text)], axis=0
    )
    neutral_mean = np.mean(
        [backend.embed_text(s).values for s in bank.expand(spec.neutral_text)], axis=0
    )
    diff = target_mean - neutral_mean
    norm = np.linalg.norm(diff)
    if norm < 1e-10:
        raise DegeneratePromptError(
            f"prompts {spec.target_text!r} and {spec.neutral_text!r} embed identically"
        )
    return JointEmbedding(diff / norm, normalized=True)


def precompute_channel_stats(
    backend: ManipulationBackend,
    sample_count: int = DEFAULT_SIGMA_SAMPLES,
    pair_count: int = DEFAULT_PAIR_COUNT,
    perturb_alpha: float = DEFAULT_PERTURB_ALPHA,
    seed: int = 0,
    progress=None,
) -> ChannelStats:
    """Estimate every channel's mean embedding delta.

    Per channel ``c`` with deviation ``sigma_c``: draw ``pair_count`` style
    codes, form the symmetric two-sided perturbation pair
    ``c +/- perturb_alpha * sigma_c``, embed both renders, normalize each
    pair's embedding difference, and average. Deterministic for a fixed
    seed and backend. Channels with ``sigma_c == 0`` (or only degenerate
    pairs) are flagged inert and given a zero row.
    """
    if sample_count < 1 or pair_count < 1:
        raise ValueError("sample_count and pair_count must be >= 1")
    geometry = backend.geometry
    C = geometry.total_style_channels
    rng = np.random.default_rng(seed)

    sigma_sample = backend.sample_styles(sample_count, rng)
    channel_std = sigma_sample.std(axis=0)

    deltas = np.zeros((C, backend.embed_dim))
    inert = np.zeros(C, dtype=bool)
    for c in range(C):
        if channel_std[c] == 0.0:
            inert[c] = True
            if progress is not None:
                progress(c + 1, C)
            continue
        styles = backend.sample_styles(pair_count, rng)
        offset = perturb_alpha * channel_std[c]
        plus = styles.copy()
        plus[:, c] += offset
        minus = styles.copy()
        minus[:, c] -= offset
        diff = backend.style_to_embedding_batch(plus) - backend.style_to_embedding_batch(minus)
        norms = np.linalg.norm(diff, axis=1)
        kept = norms > 1e-12
        if not np.any(kept):
            inert[c] = True
        else:
            deltas[c] = (diff[kept] / norms[kept, None]).mean(axis=0)
        if progress is not None:
            progress(c + 1, C)

    return ChannelStats(
        geometry=geometry,
        deltas=deltas,
        channel_std=channel_std,
        inert=inert,
        sample_pairs=pair_count,
        perturb_alpha=perturb_alpha,
        sample_count=sample_count,
        backend_fingerprint=backend.fingerprint(),
        seed=seed,
    )


@dataclass(frozen=True)
class DirectionQuery:
    """A resolved direction request: target vector plus the two dials.

    ``beta`` trades edit strength for disentanglement; ``alpha`` scales the
    applied step (negative reverses the edit).
    """

    delta_t: JointEmbedding
    beta: float = 0.0
    alpha: float = 3.0

    def __post_init__(self):
        norm = np.linalg.norm(self.delta_t.values)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"query target direction must be unit-norm, got {norm}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")


def direction_for_query(stats: ChannelStats, query: DirectionQuery) -> StyleDirection:
    """Assemble the style direction a query describes."""
    return assemble_direction(stats, query.delta_t, query.beta)


def channel_relevance(stats: ChannelStats, delta_t: JointEmbedding) -> np.ndarray:
    """Projection of every channel's mean delta onto the target direction."""
    if delta_t.values.size != stats.embed_dim:
        raise GeometryMismatchError(
            f"target direction dim {delta_t.values.size} != stats dim {stats.embed_dim}"
        )
    return stats.deltas @ delta_t.values


def assemble_direction(
    stats: ChannelStats, delta_t: JointEmbedding, beta: float
) -> StyleDirection:
    """Threshold relevances into a style direction.

    Channels keep their relevance where ``|relevance| >= beta`` and are
    zeroed elsewhere. An all-zero direction is a legal result.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    relevance = channel_relevance(stats, delta_t)
    values = np.where(np.abs(relevance) >= beta, relevance, 0.0)
    return StyleDirection(values, stats.geometry)


class BetaSelection(NamedTuple):
    beta: float
    active_count: int
    requested_k: int
    truncated: bool


def beta_from_k(stats: ChannelStats, delta_t: JointEmbedding, k: int) -> BetaSelection:
    """Threshold that activates the ``k`` strongest channels.

    Returns the k-th largest absolute relevance (ranking is stable: ties
    resolve toward the lower channel index). If fewer than ``k`` channels
    have nonzero relevance the smallest nonzero value is returned with
    ``truncated`` set and fewer than ``k`` active.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    magnitudes = np.abs(channel_relevance(stats, delta_t))
    nonzero = magnitudes[magnitudes > 0.0]
    if nonzero.size == 0:
        return BetaSelection(beta=0.0, active_count=0, requested_k=k, truncated=True)
    order = np.argsort(-magnitudes, kind="stable")
    if k > nonzero.size:
        beta = float(nonzero.min())
        return BetaSelection(
            beta=beta,
            active_count=int((magnitudes >= beta).sum()),
            requested_k=k,
            truncated=True,
        )
    beta = float(magnitudes[order[k - 1]])
    return BetaSelection(
        beta=beta,
        active_count=int((magnitudes >= beta).sum()),
        requested_k=k,
        truncated=False,
    )


def direction_from_k(
    stats: ChannelStats, delta_t: JointEmbedding, k: int
) -> tuple[StyleDirection, BetaSelection]:
    """Rank-based exact-k assembly.

    Unlike thresholding with :func:`beta_from_k` (which can over-select when
    magnitudes tie at the cut), this keeps exactly ``min(k, nonzero)``
    channels by stable rank.
    """
    selection = beta_from_k(stats, delta_t, k)
    relevance = channel_relevance(stats, delta_t)
    magnitudes = np.abs(relevance)
    order = np.argsort(-magnitudes, kind="stable")
    keep = [idx for idx in order[:k] if magnitudes[idx] > 0.0]
    values = np.zeros_like(relevance)
    values[keep] = relevance[keep]
    direction = StyleDirection(values, stats.geometry)
    return direction, selection._replace(active_count=direction.active_count)


def apply_global(
    backend: ManipulationBackend,
    s: StyleCode,
    direction: StyleDirection,
    alpha: float,
) -> tuple[StyleCode, ImageTensor]:
    """Move the style code along the direction and render the result."""
    s_out = add_direction(s, direction, alpha)
    return s_out, backend.generate_from_style(s_out)


def _write_stats_stream(fp, stats: ChannelStats) -> None:
    serialization.write_json_header(
        fp,
        {
            "fingerprint": stats.fingerprint(),
            "backend_fingerprint": stats.backend_fingerprint,
            "seed": stats.seed,
            "pair_count": stats.sample_pairs,
            "perturb_alpha": stats.perturb_alpha,
            "sample_count": stats.sample_count,
            "channel_count": stats.geometry.total_style_channels,
            "embed_dim": stats.embed_dim,
            "geometry": json.loads(stats.geometry.to_json()),
        },
    )
    serialization.write_array(fp, stats.deltas)
    serialization.write_array(fp, stats.channel_std)
    serialization.write_array(fp, stats.inert.astype(np.float64))


def _read_stats_stream(fp) -> ChannelStats:
    header = serialization.read_json_header(fp)
    geometry = LatentGeometry.from_dict(header["geometry"])
    deltas = serialization.read_array(fp).reshape(header["channel_count"], header["embed_dim"])
    # float32 interchange can nudge row norms a hair past the invariant.
    norms = np.linalg.norm(deltas, axis=1)
    too_big = norms > 1.0
    if np.any(too_big):
        deltas[too_big] /= norms[too_big, None]
    channel_std = serialization.read_array(fp)
    inert = serialization.read_array(fp) > 0.5
    return ChannelStats(
        geometry=geometry,
        deltas=deltas,
        channel_std=channel_std,
        inert=inert,
        sample_pairs=int(header["pair_count"]),
        perturb_alpha=float(header["perturb_alpha"]),
        sample_count=int(header["sample_count"]),
        backend_fingerprint=header["backend_fingerprint"],
        seed=int(header["seed"]),
    )


def save_stats(stats: ChannelStats, path) -> None:
    """Stats file: JSON header plus delta/std/inert blocks in the shared format."""
    with Path(path).open("wb") as fp:
        _write_stats_stream(fp, stats)


def load_stats(path) -> ChannelStats:
    with Path(path).open("rb") as fp:
        return _read_stats_stream(fp)


def stats_to_bytes(stats: ChannelStats) -> bytes:
    import io

    buf = io.BytesIO()
    _write_stats_stream(buf, stats)
    return buf.getvalue()


def stats_from_bytes(data: bytes) -> ChannelStats:
    import io

    return _read_stats_stream(io.BytesIO(data))


def latest_stats_from_store(store, backend_fingerprint: str, cache: dict | None = None):
    """Newest stored channel stats matching a backend, or None.

    ``cache`` maps stats fingerprints to parsed :class:`ChannelStats` and is
    updated in place when provided.
    """
    for key in reversed(store.list("stats")):
        stats = cache.get(key.fingerprint) if cache is not None else None
        if stats is None:
            try:
                stats = stats_from_bytes(store.get(key))
            except ValueError:
                continue
            if cache is not None:
                cache[key.fingerprint] = stats
        if stats.backend_fingerprint == backend_fingerprint:
            return stats
    return None
