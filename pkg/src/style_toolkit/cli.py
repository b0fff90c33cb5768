"""Command-line front door mirroring the service for batch and scripting use.

Every subcommand takes ``--config`` (or the STYLE_TOOLKIT_CONFIG environment
variable) pointing at the same JSON document the service uses: a backend
section plus a store root. Exit codes: 0 success, 1 domain error, 2 usage
error. Reports print as human tables by default and as machine JSON with
``--json``.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import directions as gd
from . import mapper as mp
from . import optimizer as opt
from . import serialization
from .backends import load_backend
from .errors import ToolkitError
from .geometry import WPlusCode
from .imaging import from_png_bytes, to_png_bytes
from .service import CONFIG_ENV_VAR, ServiceConfig, _mapper_store_fingerprint, run_server
from .store import ArtifactKey, ArtifactStore
from .templates import TemplateBank

CONTEXT_SETTINGS = {"max_content_width": 96, "help_option_names": ["-h", "--help"]}


class Env:
    """Lazily constructed backend + store shared by the subcommands."""

    def __init__(self, config_path: str | None):
        self.config_path = config_path
        self._config = None
        self._backend = None
        self._store = None

    @property
    def config(self) -> ServiceConfig:
        if self._config is None:
            if self.config_path is None:
                raise click.UsageError(
                    f"no config given; pass --config or set {CONFIG_ENV_VAR}"
                )
            self._config = ServiceConfig.from_file(self.config_path)
        return self._config

    @property
    def backend(self):
        if self._backend is None:
            self._backend = load_backend(self.config.backend)
        return self._backend

    @property
    def store(self) -> ArtifactStore:
        if self._store is None:
            self._store = ArtifactStore(self.config.store_root)
        return self._store


def domain_errors(fn):
    """Map toolkit errors to exit code 1 with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ToolkitError as exc:
            click.echo(f"error ({exc.code}): {exc}", err=True)
            sys.exit(1)

    return wrapper


def emit(payload: dict, as_json: bool, human_lines) -> None:
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in human_lines:
            click.echo(line)


def _require_stats(env: Env) -> gd.ChannelStats:
    stats = gd.latest_stats_from_store(env.store, env.backend.fingerprint())
    if stats is None:
        click.echo(
            "error (stats_missing): no channel stats for this backend; "
            "run `style-toolkit precompute` first",
            err=True,
        )
        sys.exit(1)
    return stats


def _load_image_code(env: Env, image_path: str) -> WPlusCode:
    data = Path(image_path).read_bytes()
    return env.backend.invert_image(from_png_bytes(data, source_id=image_path))


def _resolve_direction(env: Env, stats, target, neutral, beta, k, bank_path, alpha=3.0):
    if (beta is None) == (k is None):
        raise click.UsageError("provide exactly one of --beta or --k")
    bank = TemplateBank.from_file(bank_path) if bank_path else None
    spec = gd.PromptSpec(target, neutral)
    delta_t = gd.encode_prompt_pair(env.backend, spec, bank)
    if beta is not None:
        query = gd.DirectionQuery(delta_t, beta=float(beta), alpha=alpha)
        return gd.direction_for_query(stats, query), float(beta), False
    direction, selection = gd.direction_from_k(stats, delta_t, k)
    return direction, selection.beta, selection.truncated


@click.group(context_settings=CONTEXT_SETTINGS)
@click.option(
    "--config",
    "config_path",
    envvar=CONFIG_ENV_VAR,
    type=click.Path(exists=True, dir_okay=False),
    help="Path to the toolkit config JSON (env: STYLE_TOOLKIT_CONFIG).",
)
@click.pass_context
def main(ctx, config_path):
    """Text-driven latent manipulation toolkit."""
    ctx.obj = Env(config_path)


@main.command()
@click.option("--pair-count", default=gd.DEFAULT_PAIR_COUNT, show_default=True,
              help="Image pairs per channel.")
@click.option("--perturb-alpha", default=gd.DEFAULT_PERTURB_ALPHA, show_default=True,
              help="Perturbation strength in channel deviations.")
@click.option("--sample-count", default=gd.DEFAULT_SIGMA_SAMPLES, show_default=True,
              help="Style samples for deviation estimation.")
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def precompute(env: Env, pair_count, perturb_alpha, sample_count, seed, as_json):
    """Estimate per-channel embedding deltas and store them."""
    fingerprint = gd.stats_fingerprint(
        env.backend.fingerprint(), seed, pair_count, perturb_alpha, sample_count
    )
    if env.store.exists("stats", fingerprint):
        emit({"stats_key": fingerprint, "already_existed": True}, as_json,
             [f"stats already present: {fingerprint}"])
        return
    stats = gd.precompute_channel_stats(
        env.backend,
        sample_count=sample_count,
        pair_count=pair_count,
        perturb_alpha=perturb_alpha,
        seed=seed,
    )
    receipt = env.store.put(
        ArtifactKey("stats", fingerprint, label="channel-stats"), gd.stats_to_bytes(stats)
    )
    emit(
        {
            "stats_key": fingerprint,
            "already_existed": False,
            "channels": stats.geometry.total_style_channels,
            "inert_channels": int(stats.inert.sum()),
            "path": receipt.path,
        },
        as_json,
        [f"stats stored: {fingerprint}",
         f"channels: {stats.geometry.total_style_channels} "
         f"(inert: {int(stats.inert.sum())})"],
    )


@main.command()
@click.option("--target", required=True, help="Target attribute text.")
@click.option("--neutral", required=True, help="Neutral class text.")
@click.option("--beta", type=float, default=None, help="Disentanglement threshold.")
@click.option("--k", type=int, default=None, help="Desired active channel count.")
@click.option("--bank", "bank_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Custom newline-delimited template bank.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def direction(env: Env, target, neutral, beta, k, bank_path, as_json):
    """Report the style-space direction for a prompt pair."""
    stats = _require_stats(env)
    direction_, beta_used, truncated = _resolve_direction(
        env, stats, target, neutral, beta, k, bank_path
    )
    active = direction_.active_channels()
    order = np.argsort(-np.abs(direction_.values[active]), kind="stable")
    channels = [
        {"channel": int(active[i]), "relevance": float(direction_.values[active[i]])}
        for i in order
    ]
    payload = {
        "target": target,
        "neutral": neutral,
        "beta_used": beta_used,
        "active_channels": direction_.active_count,
        "truncated": truncated,
        "channels": channels,
    }
    lines = [
        f"direction for {target!r} vs {neutral!r}",
        f"beta: {beta_used:.6f}   active channels: {direction_.active_count}",
        f"{'channel':>8}  {'relevance':>12}",
    ]
    lines += [f"{c['channel']:>8}  {c['relevance']:>12.6f}" for c in channels]
    emit(payload, as_json, lines)


@main.command("edit-global")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input PNG.")
@click.option("--target", required=True, help="Target attribute text.")
@click.option("--neutral", required=True, help="Neutral class text.")
@click.option("--alpha", type=float, default=3.0, show_default=True,
              help="Manipulation strength (negative reverses the edit).")
@click.option("--beta", type=float, default=None, help="Disentanglement threshold.")
@click.option("--k", type=int, default=None, help="Desired active channel count.")
@click.option("--bank", "bank_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Custom newline-delimited template bank.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output PNG path.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def edit_global(env: Env, image_path, target, neutral, alpha, beta, k, bank_path,
                out_path, as_json):
    """Apply a global style-space edit to an image."""
    stats = _require_stats(env)
    direction_, beta_used, truncated = _resolve_direction(
        env, stats, target, neutral, beta, k, bank_path, alpha=alpha
    )
    w = _load_image_code(env, image_path)
    style = env.backend.wplus_to_style(w)
    _, image = gd.apply_global(env.backend, style, direction_, alpha)
    Path(out_path).write_bytes(to_png_bytes(image))
    emit(
        {
            "out": out_path,
            "alpha": alpha,
            "beta_used": beta_used,
            "active_channels": direction_.active_count,
            "truncated": truncated,
        },
        as_json,
        [f"wrote {out_path} (alpha={alpha}, beta={beta_used:.6f}, "
         f"active={direction_.active_count})"],
    )


@main.command()
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input PNG.")
@click.option("--prompt", required=True, help="Driving text prompt.")
@click.option("--lambda-l2", default=0.0, show_default=True,
              help="Latent distance penalty weight.")
@click.option("--lambda-id", default=0.0, show_default=True,
              help="Identity preservation weight.")
@click.option("--steps", default=250, show_default=True)
@click.option("--lr", "learning_rate", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output PNG path.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="Optional CSV loss-trace path.")
@click.option("--code-out", "code_path", type=click.Path(dir_okay=False), default=None,
              help="Optional final latent code output (binary block format).")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def optimize(env: Env, image_path, prompt, lambda_l2, lambda_id, steps, learning_rate,
             seed, out_path, trace_path, code_path, as_json):
    """Optimize an image's latent code toward a prompt."""
    w_s = _load_image_code(env, image_path)
    cfg = opt.OptimizeConfig(
        lambda_l2=lambda_l2, lambda_id=lambda_id, steps=steps,
        learning_rate=learning_rate, seed=seed,
    )
    trace = opt.optimize_latent(env.backend, w_s, prompt, cfg)
    image = env.backend.generate_from_wplus(trace.final_code)
    Path(out_path).write_bytes(to_png_bytes(image))
    if trace_path:
        trace.write_csv(trace_path)
    if code_path:
        serialization.save_array(code_path, trace.final_code.values)
    emit(
        {
            "out": out_path,
            "trace": trace_path,
            "steps": steps,
            "initial_total": trace.records[0].total,
            "final_total": trace.final_terms.total,
        },
        as_json,
        [f"wrote {out_path}",
         f"loss: {trace.records[0].total:.6f} -> {trace.final_terms.total:.6f} "
         f"over {steps} steps"],
    )


@main.command("train-mapper")
@click.option("--name", required=True, help="Registry name for the checkpoint.")
@click.option("--prompt", required=True, help="Driving text prompt.")
@click.option("--branches", default="coarse,medium,fine", show_default=True,
              help="Comma-separated enabled branches.")
@click.option("--hidden-dim", default=32, show_default=True)
@click.option("--lambda-l2", default=0.8, show_default=True,
              help="Step-size penalty weight.")
@click.option("--lambda-id", default=0.1, show_default=True,
              help="Identity preservation weight (0 for identity-changing edits).")
@click.option("--steps", default=200, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--lr", "learning_rate", default=5e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--latent-count", default=24, show_default=True,
              help="Prior samples to train on when --latents is not given.")
@click.option("--latents", "latents_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Latent collection file (e.g. inverted codes).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the checkpoint to this path.")
@click.option("--history", "history_path", type=click.Path(dir_okay=False), default=None,
              help="Optional CSV loss-history path.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def train_mapper_cmd(env: Env, name, prompt, branches, hidden_dim, lambda_l2, lambda_id,
                     steps, batch_size, learning_rate, seed, latent_count, latents_path,
                     out_path, history_path, as_json):
    """Train a residual mapper for a prompt and register it."""
    cfg = mp.MapperConfig(
        enabled_branches=tuple(b.strip() for b in branches.split(",") if b.strip()),
        hidden_dim=hidden_dim,
        lambda_l2=lambda_l2,
        lambda_id=lambda_id,
        steps=steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        seed=seed,
    )
    if latents_path:
        latents = mp.load_latents(latents_path)
    else:
        latents = mp.sample_training_latents(env.backend, latent_count, seed)
    model = mp.train_mapper(env.backend, latents, prompt, cfg)
    data = mp.mapper_to_bytes(model)
    env.store.put(ArtifactKey("mapper", _mapper_store_fingerprint(name), label=name), data)
    if out_path:
        Path(out_path).write_bytes(data)
    if history_path:
        mp.write_loss_history_csv(model, history_path)
    emit(
        {
            "name": name,
            "steps": model.steps_trained,
            "initial_loss": model.loss_history[0],
            "final_loss": model.loss_history[-1],
        },
        as_json,
        [f"trained mapper {name!r}: loss {model.loss_history[0]:.6f} -> "
         f"{model.loss_history[-1]:.6f} over {model.steps_trained} steps"],
    )


def _load_registered_mapper(env: Env, name: str) -> mp.MapperModel:
    key = ArtifactKey("mapper", _mapper_store_fingerprint(name), label=name)
    return mp.mapper_from_bytes(env.store.get(key))


@main.command("apply-mapper")
@click.option("--name", required=True, help="Registered mapper name.")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input PNG.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output PNG path.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def apply_mapper_cmd(env: Env, name, image_path, out_path, as_json):
    """Apply a trained mapper to an image."""
    model = _load_registered_mapper(env, name)
    if mp.geometry_hash(model.geometry) != mp.geometry_hash(env.backend.geometry):
        click.echo("error (geometry_mismatch): checkpoint does not match backend", err=True)
        sys.exit(1)
    w = _load_image_code(env, image_path)
    _, image = mp.apply_mapper(model, env.backend, w)
    Path(out_path).write_bytes(to_png_bytes(image))
    emit({"out": out_path, "name": name}, as_json, [f"wrote {out_path}"])


@main.command("report-similarity")
@click.option("--name", required=True, help="Registered mapper name.")
@click.option("--sample", "sample_count", default=50, show_default=True,
              help="Prior samples when --latents is not given.")
@click.option("--latents", "latents_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Latent collection file.")
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report.")
@click.pass_obj
@domain_errors
def report_similarity(env: Env, name, sample_count, latents_path, seed, as_json):
    """Cosine-similarity statistics of a mapper's manipulation directions."""
    model = _load_registered_mapper(env, name)
    if latents_path:
        latents = mp.load_latents(latents_path)
    else:
        latents = mp.sample_training_latents(env.backend, sample_count, seed)
    report = mp.direction_similarity_report(model, latents)
    emit(
        {
            "name": name,
            "mean": report.mean,
            "std": report.std,
            "pair_count": report.pair_count,
            "excluded_pairs": report.excluded_pairs,
        },
        as_json,
        [f"direction similarity for {name!r}: mean {report.mean:.4f}, "
         f"std {report.std:.4f} over {report.pair_count} pairs "
         f"({report.excluded_pairs} excluded)"],
    )


@main.command()
@click.option("--host", default=None, help="Override the config's listen host.")
@click.option("--port", default=None, type=int, help="Override the config's listen port.")
@click.pass_obj
@domain_errors
def serve(env: Env, host, port):
    """Run the HTTP service."""
    config = env.config
    if host is not None:
        config.host = host
    if port is not None:
        config.port = port
    run_server(config)


if __name__ == "__main__":
    main()
