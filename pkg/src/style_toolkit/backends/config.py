"""Backend construction from a JSON config document.

The config names a backend kind plus its parameters::

    {"kind": "toy", "seed": 7, "embed_dim": 16,
     "geometry": {"num_layers": 6, "latent_dim": 8,
                  "style_channel_counts": [8, 8, 8, 8, 8, 8],
                  "group_boundaries": [2, 4]},
     ...}

Kind ``"real"`` expects weight paths for the pretrained components; missing
weights raise :class:`BackendUnavailableError` rather than silently falling
back to a toy backend. Deployments wire their runtime adapters in through
:func:`register_backend_kind`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from ..errors import BackendUnavailableError
from ..geometry import LatentGeometry
from .base import ManipulationBackend
from .toy import QuadraticSurrogateBackend, ToyLinearBackend

REAL_WEIGHT_KEYS = ("generator", "image_encoder", "text_encoder", "identity", "inverter")
_REQUIRED_REAL = ("generator", "image_encoder", "text_encoder")


def _build_toy(cfg: dict) -> ManipulationBackend:
    weights_path = cfg.get("weights_path")
    if weights_path:
        return ToyLinearBackend.load_weights(weights_path)
    geometry = LatentGeometry.from_dict(cfg["geometry"])
    kwargs = {
        key: cfg[key]
        for key in (
            "embed_dim",
            "seed",
            "gen_scale",
            "pixel_bias",
            "normalize_embeddings",
            "identity_dim",
            "with_inverter",
            "style_map",
            "style_bias",
            "style_prior_sigma",
            "text_table",
        )
        if key in cfg
    }
    if "image_hw" in cfg:
        kwargs["image_hw"] = tuple(cfg["image_hw"])
    return ToyLinearBackend(geometry, **kwargs)


def _build_quadratic(cfg: dict) -> ManipulationBackend:
    return QuadraticSurrogateBackend(
        LatentGeometry.from_dict(cfg["geometry"]), seed=cfg.get("seed", 0)
    )


def _build_real(cfg: dict) -> ManipulationBackend:
    weights = cfg.get("weights", {})
    missing = [
        key
        for key in _REQUIRED_REAL
        if key not in weights or not Path(weights[key]).exists()
    ]
    if missing:
        raise BackendUnavailableError(
            "real backend weights missing for: " + ", ".join(sorted(missing))
        )
    # Weight files exist, but no runtime adapter is registered in this build.
    raise BackendUnavailableError(
        "no runtime adapter registered for backend kind 'real'; register one "
        "with style_toolkit.backends.register_backend_kind"
    )


_FACTORIES: dict[str, Callable[[dict], ManipulationBackend]] = {
    "toy": _build_toy,
    "quadratic": _build_quadratic,
    "real": _build_real,
}


def register_backend_kind(kind: str, factory: Callable[[dict], ManipulationBackend]) -> None:
    """Install (or replace) the factory used for a backend config kind."""
    _FACTORIES[kind] = factory


def load_backend(config: dict | str | Path) -> ManipulationBackend:
    """Build a backend from a config dict or a path to a JSON config file."""
    if isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text(encoding="utf-8"))
    kind = config.get("kind")
    factory = _FACTORIES.get(kind)
    if factory is None:
        raise BackendUnavailableError(f"unknown backend kind {kind!r}")
    return factory(config)
