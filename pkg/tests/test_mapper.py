import numpy as np
import pytest

from style_toolkit.backends import QuadraticSurrogateBackend
from style_toolkit.errors import IdentityUnavailableError
from style_toolkit.geometry import WPlusCode
from style_toolkit.mapper import (
    REFERENCE_DIRECTION_SIMILARITY,
    MapperConfig,
    apply_mapper,
    direction_similarity_report,
    init_mapper,
    load_mapper,
    mapper_forward,
    mapper_gradient_check,
    mapper_loss,
    sample_training_latents,
    save_mapper,
    similarity_from_residuals,
    train_mapper,
)

PROMPT = "a photo of a car"

TRAIN_CFG = dict(lambda_l2=0.01, lambda_id=0.05, steps=200, batch_size=8,
                 learning_rate=5e-4, hidden_dim=32, seed=7)


def randomized_model(geometry, cfg, rng, scale=0.05):
    """Init then give every layer (final included) small random parameters."""
    model = init_mapper(geometry, cfg, PROMPT)
    for branch in model.branches.values():
        for W in branch.weights:
            W += rng.normal(size=W.shape) * scale
        for b in branch.biases:
            b += rng.normal(size=b.shape) * scale
    return model


class TestConfig:
    def test_defaults_pinned(self):
        cfg = MapperConfig()
        assert cfg.lambda_l2 == 0.8
        assert cfg.lambda_id == 0.1
        assert cfg.layers_per_branch == 4
        assert cfg.enabled_branches == ("coarse", "medium", "fine")

    def test_reference_similarity_table(self):
        assert REFERENCE_DIRECTION_SIMILARITY["Mohawk"] == (0.82, 0.096)
        assert REFERENCE_DIRECTION_SIMILARITY["Afro"] == (0.84, 0.085)
        assert REFERENCE_DIRECTION_SIMILARITY["Purple hair"] == (0.73, 0.145)

    def test_rejects_empty_branches(self):
        with pytest.raises(ValueError):
            MapperConfig(enabled_branches=())

    def test_rejects_unknown_branch(self):
        with pytest.raises(ValueError):
            MapperConfig(enabled_branches=("coarse", "ultrafine"))

    def test_round_trips_through_dict(self):
        cfg = MapperConfig(enabled_branches=("coarse", "medium"), hidden_dim=16)
        assert MapperConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_zero_init_residual_is_identity_manipulation(self, toy_backend, toy_geometry, rng):
        model = init_mapper(toy_geometry, MapperConfig(hidden_dim=16), PROMPT)
        w = WPlusCode(rng.normal(size=(6, 8)))
        residual = mapper_forward(model, w)
        assert np.array_equal(residual.values, np.zeros((6, 8)))
        w_out, image = apply_mapper(model, toy_backend, w)
        assert np.array_equal(image.pixels, toy_backend.generate_from_wplus(w).pixels)

    def test_disabled_fine_branch_block_is_exactly_zero(self, toy_geometry, rng):
        # Hair-style style configuration: train coarse+medium only.
        cfg = MapperConfig(enabled_branches=("coarse", "medium"), hidden_dim=16)
        model = randomized_model(toy_geometry, cfg, rng)
        for _ in range(10):
            w = WPlusCode(rng.normal(size=(6, 8)))
            residual = mapper_forward(model, w)
            assert np.all(residual.values[4:] == 0.0)
            assert np.any(residual.values[:4] != 0.0)

    def test_residual_shape_matches_input(self, toy_geometry, rng):
        model = randomized_model(toy_geometry, MapperConfig(hidden_dim=16), rng)
        w = WPlusCode(rng.normal(size=(6, 8)))
        assert mapper_forward(model, w).values.shape == w.values.shape

    def test_branch_locality(self, toy_geometry, rng):
        # Perturbing only the medium band must leave coarse/fine blocks
        # bit-identical: each branch sees only its own slice.
        model = randomized_model(toy_geometry, MapperConfig(hidden_dim=16), rng)
        w = rng.normal(size=(6, 8))
        base = mapper_forward(model, WPlusCode(w)).values
        for _ in range(20):
            perturbed = w.copy()
            perturbed[2:4] += rng.normal(size=(2, 8))
            out = mapper_forward(model, WPlusCode(perturbed)).values
            assert np.array_equal(out[:2], base[:2])
            assert np.array_equal(out[4:], base[4:])
            assert not np.array_equal(out[2:4], base[2:4])


class TestLoss:
    def test_zero_residual_reduces_to_plain_clip(self, toy_backend, toy_geometry, rng):
        model = init_mapper(toy_geometry, MapperConfig(hidden_dim=16, lambda_id=0.0), PROMPT)
        w = WPlusCode(rng.normal(size=(6, 8)))
        terms = mapper_loss(toy_backend, model, w, PROMPT)
        assert terms.l2 == 0.0
        expected = toy_backend.clip_distance(toy_backend.generate_from_wplus(w), PROMPT)
        assert terms.clip == expected
        assert terms.total == expected

    def test_identity_free_heavy_penalty_configuration(self, make_toy_backend, toy_geometry, rng):
        # The whole-identity-edit setting (2, 0) works without any identity
        # backend at all.
        backend = make_toy_backend(identity_dim=None)
        cfg = MapperConfig(lambda_l2=2.0, lambda_id=0.0, hidden_dim=16)
        model = randomized_model(toy_geometry, cfg, rng)
        w = WPlusCode(rng.normal(size=(6, 8)))
        terms = mapper_loss(backend, model, w, PROMPT)
        assert terms.id == 0.0
        assert terms.total == pytest.approx(terms.clip + 2.0 * terms.l2, abs=1e-12)

    def test_identity_weight_requires_identity_backend(self, make_toy_backend, toy_geometry, rng):
        backend = make_toy_backend(identity_dim=None)
        model = randomized_model(toy_geometry, MapperConfig(hidden_dim=16), rng)
        with pytest.raises(IdentityUnavailableError):
            mapper_loss(backend, model, WPlusCode(rng.normal(size=(6, 8))), PROMPT)

    def test_decomposition_identity(self, toy_backend, toy_geometry, rng):
        cfg = MapperConfig(lambda_l2=0.8, lambda_id=0.1, hidden_dim=16)
        model = randomized_model(toy_geometry, cfg, rng)
        for _ in range(20):
            w = WPlusCode(rng.normal(size=(6, 8)))
            t = mapper_loss(toy_backend, model, w, PROMPT)
            assert abs(t.total - (t.clip + 0.8 * t.l2 + 0.1 * t.id)) < 1e-10


class TestApply:
    def test_step_decomposition(self, toy_backend, toy_geometry, rng):
        model = randomized_model(toy_geometry, MapperConfig(hidden_dim=16), rng)
        w = WPlusCode(rng.normal(size=(6, 8)))
        w_out, image = apply_mapper(model, toy_backend, w)
        residual = mapper_forward(model, w)
        # Bit-exact: the output code is the input plus the (deterministic)
        # forward residual, nothing else.
        assert np.array_equal(w_out.values, w.values + residual.values)
        # Recomposition oracle: render the sum manually.
        manual = toy_backend.generate_from_wplus(WPlusCode(w.values + residual.values))
        assert np.array_equal(image.pixels, manual.pixels)


class TestTraining:
    def test_training_strictly_reduces_mean_loss(self, toy_backend, toy_geometry):
        latents = sample_training_latents(toy_backend, 24, seed=5)
        cfg = MapperConfig(**TRAIN_CFG)
        fresh = init_mapper(toy_geometry, cfg, PROMPT)
        before = np.mean(
            [mapper_loss(toy_backend, fresh, WPlusCode(l), PROMPT).total for l in latents]
        )
        model = train_mapper(toy_backend, latents, PROMPT, cfg)
        after = np.mean(
            [mapper_loss(toy_backend, model, WPlusCode(l), PROMPT).total for l in latents]
        )
        assert after < before
        assert model.loss_history[-1] < model.loss_history[0]
        assert model.steps_trained == 200
        assert len(model.loss_history) == 200

    def test_fixed_seed_gives_bit_identical_parameters(self, toy_backend):
        latents = sample_training_latents(toy_backend, 12, seed=5)
        cfg = MapperConfig(**{**TRAIN_CFG, "steps": 40})
        m1 = train_mapper(toy_backend, latents, PROMPT, cfg)
        m2 = train_mapper(toy_backend, latents, PROMPT, cfg)
        for name in m1.branches:
            for a, b in zip(m1.branches[name].weights, m2.branches[name].weights):
                assert np.array_equal(a, b)
            for a, b in zip(m1.branches[name].biases, m2.branches[name].biases):
                assert np.array_equal(a, b)

    def test_empty_latents_rejected(self, toy_backend):
        with pytest.raises(ValueError, match="empty"):
            train_mapper(toy_backend, np.zeros((0, 6, 8)), PROMPT, MapperConfig(**TRAIN_CFG))

    def test_latent_sampling_is_seeded(self, toy_backend):
        a = sample_training_latents(toy_backend, 6, seed=9)
        b = sample_training_latents(toy_backend, 6, seed=9)
        assert np.array_equal(a, b)
        assert a.shape == (6, 6, 8)


class TestSimilarityReport:
    def test_constant_residual_mapper_reports_exactly_one(self, toy_geometry, rng):
        # Zero final weights with a nonzero final bias emit the same step for
        # every input.
        model = init_mapper(toy_geometry, MapperConfig(hidden_dim=16), PROMPT)
        for branch in model.branches.values():
            branch.biases[-1] += rng.normal(size=branch.biases[-1].shape)
        latents = rng.normal(size=(8, 6, 8))
        report = direction_similarity_report(model, latents)
        assert report.mean == 1.0
        assert report.std == 0.0
        assert report.pair_count == 8 * 7 // 2
        assert report.excluded_pairs == 0

    def test_seeded_random_residuals_concentrate_near_zero(self):
        gen = np.random.default_rng(909)
        residuals = gen.normal(size=(50, 9216))
        report = similarity_from_residuals(residuals)
        assert abs(report.mean) <= 0.05
        assert report.pair_count == 50 * 49 // 2
        # Monte-Carlo oracle: an independent naive double loop over the same
        # seeded draw must agree with the report to float precision.
        gen2 = np.random.default_rng(909)
        r2 = gen2.normal(size=(50, 9216))
        vals = []
        for i in range(50):
            for j in range(i + 1, 50):
                vals.append(
                    (r2[i] @ r2[j]) / (np.linalg.norm(r2[i]) * np.linalg.norm(r2[j]))
                )
        assert report.mean == pytest.approx(np.mean(vals), abs=1e-12)
        assert report.std == pytest.approx(np.std(vals), abs=1e-12)

    def test_zero_norm_residuals_excluded_and_tallied(self):
        residuals = np.vstack([np.zeros(16), np.ones(16), 2 * np.ones(16), np.eye(16)[0]])
        report = similarity_from_residuals(residuals)
        assert report.excluded_pairs == 3
        assert report.pair_count == 3

    def test_fewer_than_two_latents_rejected(self, toy_geometry, rng):
        model = init_mapper(toy_geometry, MapperConfig(hidden_dim=16), PROMPT)
        with pytest.raises(ValueError):
            direction_similarity_report(model, rng.normal(size=(1, 6, 8)))


class TestGradientCheck:
    def test_parameter_gradients_match_finite_differences(self, toy_backend, toy_geometry, rng):
        cfg = MapperConfig(lambda_l2=0.3, lambda_id=0.1, hidden_dim=16, seed=21)
        model = randomized_model(toy_geometry, cfg, rng)
        w = WPlusCode(rng.normal(size=(6, 8)) * 0.5)
        assert mapper_gradient_check(toy_backend, model, w, PROMPT, probe_count=64) < 1e-3

    def test_flat_fixture_uses_absolute_convention(self, toy_geometry, rng):
        backend = QuadraticSurrogateBackend(toy_geometry, seed=1)
        backend.Q = np.zeros_like(backend.Q)
        backend.c = np.zeros_like(backend.c)
        cfg = MapperConfig(lambda_l2=0.0, lambda_id=0.0, hidden_dim=16, seed=3)
        model = randomized_model(toy_geometry, cfg, rng)
        w = WPlusCode(rng.normal(size=(6, 8)))
        assert mapper_gradient_check(backend, model, w, "unused", probe_count=16) < 1e-8

    def test_zero_probe_count_rejected(self, toy_backend, toy_geometry, rng):
        model = init_mapper(toy_geometry, MapperConfig(hidden_dim=16), PROMPT)
        with pytest.raises(ValueError):
            mapper_gradient_check(toy_backend, model, WPlusCode(rng.normal(size=(6, 8))),
                                  PROMPT, probe_count=0)


class TestCheckpoint:
    def test_round_trip(self, toy_backend, toy_geometry, rng, tmp_path):
        latents = sample_training_latents(toy_backend, 12, seed=5)
        cfg = MapperConfig(**{**TRAIN_CFG, "steps": 30, "enabled_branches": ("coarse", "fine")})
        model = train_mapper(toy_backend, latents, PROMPT, cfg)
        path = tmp_path / "mapper.ckpt"
        save_mapper(model, path)
        loaded = load_mapper(path)
        assert loaded.prompt == PROMPT
        assert loaded.config == cfg
        assert loaded.steps_trained == 30
        assert loaded.geometry == toy_geometry
        assert len(loaded.loss_history) == 30
        w = WPlusCode(rng.normal(size=(6, 8)))
        a = mapper_forward(model, w).values
        b = mapper_forward(loaded, w).values
        # float32 interchange rounding only
        np.testing.assert_allclose(a, b, atol=1e-5)
        assert np.all(b[2:4] == 0.0)  # medium branch stays disabled
