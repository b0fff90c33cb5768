"""Prompt-specific residual mapper over grouped latent layers.

For a driving prompt, a small network infers a per-image manipulation step in
the extended latent space. The extended code splits into coarse, medium, and
fine layer bands, and an independent fully-connected stack maps each band to
a residual of the same size:

    step(w) = (f_coarse(w_coarse), f_medium(w_medium), f_fine(w_fine))

Any subset of the three branches may be enabled; a disabled branch
contributes an exact zero block, which is how edits that must not touch a
detail level (for example hair-style edits that leave the color scheme
alone) are configured.

Each branch mirrors the style-based generator's mapping network but with 4
layers instead of 8: fully-connected layers with a leaky rectifier (slope
0.2) between them. Final layers start at zero so the untrained mapper is the
identity manipulation.

Training minimizes, over a latent collection,

    clip(G(w + step(w)), prompt) + lambda_l2 * ||step(w)|| + lambda_id * id(w, w + step(w))

with the identity term dropped (``lambda_id = 0``) for edits that are meant
to change identity. Default weights are ``lambda_l2 = 0.8`` and
``lambda_id = 0.1``; an identity-free heavy-penalty setting of ``(2, 0)`` is
the reference choice for whole-identity edits such as celebrity likeness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, serialization
from .backends.base import ImageTensor, ManipulationBackend
from .errors import DivergenceError, IdentityUnavailableError
from .geometry import GROUP_NAMES, LatentGeometry, WPlusCode
from .optimizer import ObjectiveTerms

LEAKY_SLOPE = 0.2

# Reference cosine-similarity statistics (mean, std) of manipulation
# directions produced by fully trained prompt mappers over an inverted
# face-dataset test set; context for interpreting the analyzer's output,
# not reproducible at desk scale.
REFERENCE_DIRECTION_SIMILARITY: dict[str, tuple[float, float]] = {
    "Mohawk": (0.82, 0.096),
    "Afro": (0.84, 0.085),
    "Purple hair": (0.73, 0.145),
}


@dataclass(frozen=True)
class MapperConfig:
    """Architecture and training settings for one prompt mapper."""

    enabled_branches: tuple[str, ...] = GROUP_NAMES
    layers_per_branch: int = 4
    hidden_dim: int = 64
    lambda_l2: float = 0.8
    lambda_id: float = 0.1
    steps: int = 200
    batch_size: int = 8
    learning_rate: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        branches = tuple(self.enabled_branches)
        object.__setattr__(self, "enabled_branches", branches)
        if not branches:
            raise ValueError("enabled_branches must be non-empty")
        unknown = set(branches) - set(GROUP_NAMES)
        if unknown:
            raise ValueError(f"unknown branches: {sorted(unknown)}")
        if len(set(branches)) != len(branches):
            raise ValueError("enabled_branches contains duplicates")
        if self.layers_per_branch < 1:
            raise ValueError("layers_per_branch must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.lambda_l2 < 0 or self.lambda_id < 0:
            raise ValueError("loss weights must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "enabled_branches": list(self.enabled_branches),
            "layers_per_branch": self.layers_per_branch,
            "hidden_dim": self.hidden_dim,
            "lambda_l2": self.lambda_l2,
            "lambda_id": self.lambda_id,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapperConfig":
        d = dict(d)
        d["enabled_branches"] = tuple(d["enabled_branches"])
        return cls(**d)


@dataclass
class BranchParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class MapperModel:
    config: MapperConfig
    geometry: LatentGeometry
    prompt: str
    branches: dict[str, BranchParams]
    steps_trained: int = 0
    loss_history: list[float] = field(default_factory=list)


def _branch_dims(in_dim: int, cfg: MapperConfig) -> list[tuple[int, int]]:
    n = cfg.layers_per_branch
    if n == 1:
        return [(in_dim, in_dim)]
    dims = [(in_dim, cfg.hidden_dim)]
    dims += [(cfg.hidden_dim, cfg.hidden_dim)] * (n - 2)
    dims.append((cfg.hidden_dim, in_dim))
    return dims


def init_mapper(geometry: LatentGeometry, cfg: MapperConfig, prompt: str) -> MapperModel:
    """Seeded initialization; the final layer of every branch starts at zero
    so the fresh model is the identity manipulation."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    counts = geometry.group_layer_counts()
    branches: dict[str, BranchParams] = {}
    for name in GROUP_NAMES:
        if name not in cfg.enabled_branches:
            continue
        in_dim = counts[name] * geometry.latent_dim
        weights, biases = [], []
        dims = _branch_dims(in_dim, cfg)
        for layer, (fan_in, fan_out) in enumerate(dims):
            if layer == len(dims) - 1:
                weights.append(np.zeros((fan_out, fan_in)))
            else:
                weights.append(rng.normal(size=(fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        branches[name] = BranchParams(weights, biases)
    return MapperModel(config=cfg, geometry=geometry, prompt=prompt, branches=branches)


def _lrelu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, LEAKY_SLOPE * z)


def _lrelu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, LEAKY_SLOPE)


def _branch_forward(params: BranchParams, u: np.ndarray):
    """Forward pass caching pre-activations for the backward pass."""
    activations = [u]
    pre = []
    a = u
    last = len(params.weights) - 1
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b
        pre.append(z)
        a = z if layer == last else _lrelu(z)
        activations.append(a)
    return a, (activations, pre)


def _branch_backward(params: BranchParams, cache, dout: np.ndarray):
    activations, pre = cache
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    delta = dout
    for layer in range(len(params.weights) - 1, -1, -1):
        d_weights[layer] = np.outer(delta, activations[layer])
        d_biases[layer] = delta
        if layer > 0:
            delta = params.weights[layer].T @ delta
            delta = delta * _lrelu_grad(pre[layer - 1])
    return d_weights, d_biases


def mapper_forward(model: MapperModel, w: WPlusCode) -> WPlusCode:
    """Residual with the code's shape; disabled branches contribute zeros."""
    w.require_geometry(model.geometry)
    residual = np.zeros_like(w.values)
    slices = model.geometry.group_layer_slices()
    for name, params in model.branches.items():
        block = w.values[slices[name]]
        out, _ = _branch_forward(params, block.reshape(-1))
        residual[slices[name]] = out.reshape(block.shape)
    return WPlusCode(residual)


def apply_mapper(
    model: MapperModel, backend: ManipulationBackend, w: WPlusCode
) -> tuple[WPlusCode, ImageTensor]:
    """Manipulated code ``w + step(w)`` and its render."""
    residual = mapper_forward(model, w)
    w_out = WPlusCode(w.values + residual.values)
    return w_out, backend.generate_from_wplus(w_out)


def mapper_loss(
    backend: ManipulationBackend, model: MapperModel, w: WPlusCode, prompt: str
) -> ObjectiveTerms:
    """Loss terms at one latent: weighted total plus raw clip/l2/id terms."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    cfg = model.config
    if cfg.lambda_id > 0 and not backend.has_identity:
        raise IdentityUnavailableError()
    residual = mapper_forward(model, w)
    w_out = w.values + residual.values
    clip = backend.clip_loss_wplus(w_out, prompt)
    l2 = float(np.linalg.norm(residual.flat()))
    if cfg.lambda_id > 0:
        id_term = backend.identity_loss(w, WPlusCode(w_out))
    else:
        id_term = 0.0
    total = clip + cfg.lambda_l2 * l2 + cfg.lambda_id * id_term
    return ObjectiveTerms(total=total, clip=clip, l2=l2, id=id_term)


def _loss_and_param_grads(backend, model: MapperModel, w_values: np.ndarray, prompt: str):
    """Loss terms plus d(total)/d(params) for every enabled branch."""
    cfg = model.config
    slices = model.geometry.group_layer_slices()
    residual = np.zeros_like(w_values)
    caches = {}
    for name, params in model.branches.items():
        block = w_values[slices[name]]
        out, cache = _branch_forward(params, block.reshape(-1))
        residual[slices[name]] = out.reshape(block.shape)
        caches[name] = cache

    w_out = w_values + residual
    clip, d_wout = backend.clip_loss_grad_wplus(w_out, prompt)
    d_resid = d_wout.copy()
    if cfg.lambda_id > 0:
        id_term, d_id = backend.identity_loss_grad_wplus(w_values, w_out)
        d_resid += cfg.lambda_id * d_id
    else:
        id_term = 0.0
    l2 = float(np.linalg.norm(residual.reshape(-1)))
    if cfg.lambda_l2 > 0 and l2 > 0:
        # Norm-term subgradient is 0 at the zero-residual kink (the training
        # start), so the first step is driven by the clip/id terms alone.
        d_resid += cfg.lambda_l2 * residual / l2

    grads = {}
    for name, params in model.branches.items():
        dout = d_resid[slices[name]].reshape(-1)
        grads[name] = _branch_backward(params, caches[name], dout)
    total = clip + cfg.lambda_l2 * l2 + cfg.lambda_id * id_term
    return ObjectiveTerms(total=total, clip=clip, l2=l2, id=id_term), grads


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _param_list(model: MapperModel):
    params = []
    for name in GROUP_NAMES:
        if name in model.branches:
            branch = model.branches[name]
            params.extend(branch.weights)
            params.extend(branch.biases)
    return params


def _grad_list(model: MapperModel, grads: dict):
    out = []
    for name in GROUP_NAMES:
        if name in model.branches:
            d_weights, d_biases = grads[name]
            out.extend(d_weights)
            out.extend(d_biases)
    return out


def train_mapper(
    backend: ManipulationBackend,
    latents,
    prompt: str,
    cfg: MapperConfig,
    progress=None,
) -> MapperModel:
    """Train a fresh mapper for ``prompt`` on a latent collection.

    ``latents`` is an (N, num_layers, latent_dim) array or a sequence of
    codes; it must be non-empty. Deterministic for a fixed ``cfg.seed``.
    Divergence (non-finite batch loss) aborts with the history recorded so
    far attached to the error.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    latents = _as_latent_array(latents, backend.geometry)
    if latents.shape[0] == 0:
        raise ValueError("latent collection is empty")
    if cfg.lambda_id > 0 and not backend.has_identity:
        raise IdentityUnavailableError()

    model = init_mapper(backend.geometry, cfg, prompt)
    params = _param_list(model)
    adam = _Adam([p.shape for p in params], cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    for step in range(cfg.steps):
        idx = rng.integers(0, latents.shape[0], size=cfg.batch_size)
        batch_grads = [np.zeros_like(p) for p in params]
        batch_total = 0.0
        for i in idx:
            terms, grads = _loss_and_param_grads(backend, model, latents[i], prompt)
            batch_total += terms.total
            for acc, g in zip(batch_grads, _grad_list(model, grads)):
                acc += g
        mean_total = batch_total / cfg.batch_size
        if not np.isfinite(mean_total):
            raise DivergenceError(
                f"non-finite training loss at step {step}", history=model.loss_history
            )
        model.loss_history.append(mean_total)
        adam.step(params, [g / cfg.batch_size for g in batch_grads])
        model.steps_trained = step + 1
        if progress is not None:
            progress(step + 1, cfg.steps)
    return model


def _as_latent_array(latents, geometry: LatentGeometry) -> np.ndarray:
    if isinstance(latents, np.ndarray):
        arr = np.asarray(latents, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("latent array must be (N, num_layers, latent_dim)")
    else:
        rows = [w.values if isinstance(w, WPlusCode) else np.asarray(w) for w in latents]
        if not rows:
            return np.zeros((0, geometry.num_layers, geometry.latent_dim))
        arr = np.stack(rows).astype(np.float64)
    if arr.shape[1:] != (geometry.num_layers, geometry.latent_dim):
        raise ValueError(
            f"latents of shape {arr.shape[1:]} do not match geometry "
            f"({geometry.num_layers}, {geometry.latent_dim})"
        )
    return arr


def sample_training_latents(
    backend: ManipulationBackend, count: int, seed: int
) -> np.ndarray:
    """Draw training codes from the backend's latent prior.

    User-supplied inverted codes can be concatenated with these; both sources
    are legitimate and neither is privileged.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    return backend.sample_wplus(count, np.random.default_rng(seed))


@dataclass(frozen=True)
class SimilarityReport:
    """Pairwise cosine-similarity summary of manipulation directions."""

    mean: float
    std: float
    pair_count: int
    excluded_pairs: int


def similarity_from_residuals(residuals: np.ndarray) -> SimilarityReport:
    """Pairwise-cosine summary of a (count, dim) residual matrix."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2 or residuals.shape[0] < 2:
        raise ValueError("need at least two residual rows")
    values, valid = kernels.pairwise_cosines(residuals)
    included = values[valid]
    if included.size == 0:
        raise ValueError("all residual pairs are degenerate (zero-norm residuals)")
    return SimilarityReport(
        mean=float(included.mean()),
        std=float(included.std()),
        pair_count=int(included.size),
        excluded_pairs=int((~valid).sum()),
    )


def direction_similarity_report(model: MapperModel, latents) -> SimilarityReport:
    """How parallel the inferred steps are across inputs.

    Computes the cosine similarity between flattened residuals for all
    unordered latent pairs. Pairs touching a zero-norm residual are excluded
    and tallied. Identical residuals score exactly 1, so a constant-step
    mapper reports mean 1.0 and std 0.0.
    """
    latents = _as_latent_array(latents, model.geometry)
    if latents.shape[0] < 2:
        raise ValueError("need at least two latents")
    residuals = np.stack(
        [mapper_forward(model, WPlusCode(latents[i])).flat() for i in range(latents.shape[0])]
    )
    return similarity_from_residuals(residuals)


def mapper_gradient_check(
    backend: ManipulationBackend,
    model: MapperModel,
    w: WPlusCode,
    prompt: str,
    probe_count: int,
    fd_step: float = 1e-5,
) -> float:
    """Worst relative error of parameter gradients vs central differences.

    Probes ``probe_count`` parameter coordinates chosen by the model's seed;
    flat regions (both values below 1e-8) compare absolutely.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    w.require_geometry(model.geometry)
    _, grads = _loss_and_param_grads(backend, model, w.values, prompt)
    params = _param_list(model)
    flat_grads = np.concatenate([g.reshape(-1) for g in _grad_list(model, grads)])
    total_size = flat_grads.size
    rng = np.random.default_rng(model.config.seed)
    if probe_count >= total_size:
        coords = np.arange(total_size)
    else:
        coords = rng.choice(total_size, size=probe_count, replace=False)

    sizes = np.array([p.size for p in params])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    worst = 0.0
    for coord in coords:
        p_idx = int(np.searchsorted(starts, coord, side="right") - 1)
        offset = coord - starts[p_idx]
        param = params[p_idx]
        original = param.reshape(-1)[offset]
        param.reshape(-1)[offset] = original + fd_step
        f_plus = mapper_loss(backend, model, w, prompt).total
        param.reshape(-1)[offset] = original - fd_step
        f_minus = mapper_loss(backend, model, w, prompt).total
        param.reshape(-1)[offset] = original
        numeric = (f_plus - f_minus) / (2.0 * fd_step)
        analytic = flat_grads[coord]
        denom = max(abs(analytic), abs(numeric))
        err = abs(analytic - numeric)
        if denom >= 1e-8:
            err /= denom
        worst = max(worst, err)
    return worst


def geometry_hash(geometry: LatentGeometry) -> str:
    return hashlib.sha256(geometry.to_json().encode("utf-8")).hexdigest()


def _write_mapper_stream(fp, model: MapperModel) -> None:
    serialization.write_json_header(
        fp,
        {
            "config": model.config.to_dict(),
            "prompt": model.prompt,
            "geometry": json.loads(model.geometry.to_json()),
            "geometry_hash": geometry_hash(model.geometry),
            "steps_trained": model.steps_trained,
        },
    )
    serialization.write_array(fp, np.asarray(model.loss_history))
    for name in GROUP_NAMES:
        if name in model.branches:
            branch = model.branches[name]
            for W, b in zip(branch.weights, branch.biases):
                serialization.write_array(fp, W)
                serialization.write_array(fp, b)


def _read_mapper_stream(fp) -> MapperModel:
    header = serialization.read_json_header(fp)
    cfg = MapperConfig.from_dict(header["config"])
    geometry = LatentGeometry.from_dict(header["geometry"])
    model = init_mapper(geometry, cfg, header["prompt"])
    model.steps_trained = int(header["steps_trained"])
    model.loss_history = [float(x) for x in serialization.read_array(fp)]
    counts = geometry.group_layer_counts()
    for name in GROUP_NAMES:
        if name not in model.branches:
            continue
        branch = model.branches[name]
        dims = _branch_dims(counts[name] * geometry.latent_dim, cfg)
        for layer, (fan_in, fan_out) in enumerate(dims):
            branch.weights[layer] = serialization.read_array(fp).reshape(fan_out, fan_in)
            branch.biases[layer] = serialization.read_array(fp)
    return model


def save_mapper(model: MapperModel, path) -> None:
    """Checkpoint: JSON header plus parameter blocks in the shared format."""
    with Path(path).open("wb") as fp:
        _write_mapper_stream(fp, model)


def load_mapper(path) -> MapperModel:
    with Path(path).open("rb") as fp:
        return _read_mapper_stream(fp)


def mapper_to_bytes(model: MapperModel) -> bytes:
    import io

    buf = io.BytesIO()
    _write_mapper_stream(buf, model)
    return buf.getvalue()


def mapper_from_bytes(data: bytes) -> MapperModel:
    import io

    return _read_mapper_stream(io.BytesIO(data))


def save_latents(latents: np.ndarray, geometry: LatentGeometry, path) -> None:
    """Write a latent collection (e.g. inverted codes) for later training runs."""
    latents = _as_latent_array(latents, geometry)
    with Path(path).open("wb") as fp:
        serialization.write_json_header(
            fp,
            {"count": int(latents.shape[0]), "geometry": json.loads(geometry.to_json())},
        )
        serialization.write_array(fp, latents)


def load_latents(path) -> np.ndarray:
    with Path(path).open("rb") as fp:
        header = serialization.read_json_header(fp)
        geometry = LatentGeometry.from_dict(header["geometry"])
        flat = serialization.read_array(fp)
    return flat.reshape(header["count"], geometry.num_layers, geometry.latent_dim)


def write_loss_history_csv(model: MapperModel, path) -> None:
    import csv

    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["step", "mean_total"])
        for step, value in enumerate(model.loss_history):
            writer.writerow([step, repr(value)])
