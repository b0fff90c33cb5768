import json

import numpy as np
import pytest

from style_toolkit.backends import (
    BackendBundle,
    ImageTensor,
    QuadraticSurrogateBackend,
    ToyLinearBackend,
    load_backend,
    unit,
)
from style_toolkit.errors import (
    BackendUnavailableError,
    GeometryMismatchError,
    IdentityUnavailableError,
    InverterUnavailableError,
)
from style_toolkit.geometry import StyleCode, WPlusCode


class TestGeneration:
    def test_zero_style_renders_zero_image_without_bias(self, make_toy_backend, toy_geometry):
        backend = make_toy_backend(pixel_bias=0.0)
        s = StyleCode(np.zeros(toy_geometry.total_style_channels), toy_geometry)
        img = backend.generate_from_style(s)
        assert np.array_equal(img.pixels, np.zeros((4, 4, 3)))

    def test_same_code_renders_bit_identical_images(self, toy_backend, toy_geometry, rng):
        w = WPlusCode(rng.normal(size=(6, 8)))
        a = toy_backend.generate_from_wplus(w)
        b = toy_backend.generate_from_wplus(w)
        assert np.array_equal(a.pixels, b.pixels)

    def test_one_hot_style_reads_generator_column(self, make_toy_backend, toy_geometry):
        # Column-lookup oracle: a one-hot style input must reproduce the
        # corresponding column of the generator matrix, element for element.
        backend = make_toy_backend(pixel_bias=0.0)
        for channel in (0, 17, 47):
            vals = np.zeros(toy_geometry.total_style_channels)
            vals[channel] = 1.0
            img = backend.generate_from_style(StyleCode(vals, toy_geometry))
            expected = np.clip(backend.A[:, channel], 0.0, 1.0)
            np.testing.assert_allclose(img.flat(), expected, atol=1e-15)

    def test_geometry_mismatch_rejected(self, toy_backend):
        from style_toolkit.geometry import LatentGeometry

        other = LatentGeometry(num_layers=3, latent_dim=2, style_channel_counts=(2, 2, 2),
                               group_boundaries=(1, 2))
        with pytest.raises(GeometryMismatchError):
            toy_backend.generate_from_style(StyleCode(np.zeros(6), other))


class TestStyleMapping:
    def test_identity_map_flattens_code(self, toy_backend, rng):
        w = WPlusCode(rng.normal(size=(6, 8)))
        s = toy_backend.wplus_to_style(w)
        np.testing.assert_array_equal(s.values, w.flat())

    def test_zero_code_with_random_bias_yields_bias(self, make_toy_backend):
        backend = make_toy_backend(style_bias="random")
        w = WPlusCode(np.zeros((6, 8)))
        s = backend.wplus_to_style(w)
        np.testing.assert_allclose(s.values, backend._style_bias, atol=1e-15)

    def test_random_map_matches_independent_recomputation(self, make_toy_backend, toy_geometry, rng):
        backend = make_toy_backend(style_map="random", style_bias="random")
        w = WPlusCode(rng.normal(size=(6, 8)))
        s = backend.wplus_to_style(w)
        expected = np.concatenate(
            [W @ w.values[i] for i, W in enumerate(backend._style_weights)]
        ) + backend._style_bias
        np.testing.assert_allclose(s.values, expected, atol=1e-12)


class TestEmbedding:
    def test_image_embeddings_unit_norm(self, toy_backend, toy_geometry, rng):
        for _ in range(5):
            s = StyleCode(rng.normal(size=toy_geometry.total_style_channels), toy_geometry)
            emb = toy_backend.embed_image(toy_backend.generate_from_style(s))
            assert emb.normalized
            assert abs(np.linalg.norm(emb.values) - 1.0) < 1e-6

    def test_identical_images_identical_embeddings(self, toy_backend, toy_geometry, rng):
        s = StyleCode(rng.normal(size=toy_geometry.total_style_channels), toy_geometry)
        img = toy_backend.generate_from_style(s)
        a = toy_backend.embed_image(img)
        b = toy_backend.embed_image(img)
        assert np.array_equal(a.values, b.values)

    def test_image_embedding_matvec_oracle(self, toy_backend, rng):
        img = ImageTensor(rng.uniform(size=(4, 4, 3)))
        emb = toy_backend.embed_image(img)
        # Hand-rolled matrix multiply, normalized.
        raw = np.array([toy_backend.B[row] @ img.flat() for row in range(12)])
        np.testing.assert_allclose(emb.values, raw / np.linalg.norm(raw), atol=1e-12)

    def test_text_unit_norm_and_determinism(self, toy_backend):
        a = toy_backend.embed_text("an unusual sentence")
        b = toy_backend.embed_text("an unusual sentence")
        assert abs(np.linalg.norm(a.values) - 1.0) < 1e-6
        assert np.array_equal(a.values, b.values)

    def test_text_table_lookup(self, toy_backend):
        emb = toy_backend.embed_text("a photo of a car")
        stored = np.array(range(1, 13), dtype=float)
        np.testing.assert_allclose(emb.values, stored / np.linalg.norm(stored), atol=1e-12)

    def test_raw_mode_skips_normalization(self, make_toy_backend, rng):
        backend = make_toy_backend(normalize_embeddings=False)
        img = ImageTensor(rng.uniform(size=(4, 4, 3)))
        emb = backend.embed_image(img)
        assert not emb.normalized
        np.testing.assert_allclose(emb.values, backend.B @ img.flat(), atol=1e-12)


class TestClipDistance:
    def _orthonormal_to(self, v, rng):
        cand = rng.normal(size=v.size)
        cand -= (cand @ v) * v
        return cand / np.linalg.norm(cand)

    def test_extremes(self, make_toy_backend, rng):
        probe = make_toy_backend()
        img = ImageTensor(rng.uniform(size=(4, 4, 3)))
        e = probe.embed_image(img).values
        backend = make_toy_backend(
            text_table={
                "same": list(e),
                "anti": list(-e),
                "orth": list(self._orthonormal_to(e, rng)),
            }
        )
        assert backend.clip_distance(img, "same") == pytest.approx(0.0, abs=1e-9)
        assert backend.clip_distance(img, "anti") == pytest.approx(2.0, abs=1e-9)
        assert backend.clip_distance(img, "orth") == pytest.approx(1.0, abs=1e-9)

    def test_range_under_fuzzing(self, toy_backend, toy_geometry, rng):
        for _ in range(50):
            s = StyleCode(rng.normal(size=toy_geometry.total_style_channels) * 3, toy_geometry)
            img = toy_backend.generate_from_style(s)
            d = toy_backend.clip_distance(img, f"prompt {rng.integers(1000)}")
            assert 0.0 <= d <= 2.0


class TestIdentityLoss:
    def test_self_loss_zero(self, toy_backend, rng):
        w = WPlusCode(rng.normal(size=(6, 8)))
        assert abs(toy_backend.identity_loss(w, w)) < 1e-6

    def test_absent_identity_raises(self, make_toy_backend, rng):
        backend = make_toy_backend(identity_dim=None)
        w = WPlusCode(rng.normal(size=(6, 8)))
        with pytest.raises(IdentityUnavailableError):
            backend.identity_loss(w, w)

    def _code_with_identity_embedding(self, backend, target):
        # Build pixels x with C_id @ x == target exactly (C_id has full row
        # rank), centered at 0.5 to stay clear of the clamp, then pull the
        # code back through the exact inverter.
        ones = np.ones(backend.C_id.shape[1])
        x = 0.5 * ones + np.linalg.pinv(backend.C_id) @ (target - 0.5 * backend.C_id @ ones)
        assert x.min() > 0.0 and x.max() < 1.0
        return backend.invert_image(ImageTensor(x.reshape(4, 4, 3)))

    def test_orthogonal_identity_embeddings_give_one(self, toy_backend):
        u1 = np.zeros(8)
        u1[0] = 0.05
        u2 = np.zeros(8)
        u2[1] = 0.05
        w1 = self._code_with_identity_embedding(toy_backend, u1)
        w2 = self._code_with_identity_embedding(toy_backend, u2)
        assert toy_backend.identity_loss(w1, w2) == pytest.approx(1.0, abs=1e-8)

    def test_matches_hand_cosine(self, toy_backend, rng):
        w1 = WPlusCode(rng.normal(size=(6, 8)) * 0.3)
        w2 = WPlusCode(rng.normal(size=(6, 8)) * 0.3)
        r = [
            unit(toy_backend.C_id @ toy_backend.generate_from_wplus(w).flat())
            for w in (w1, w2)
        ]
        expected = 1.0 - r[0] @ r[1]
        assert toy_backend.identity_loss(w1, w2) == pytest.approx(expected, abs=1e-12)


class TestInversion:
    def test_round_trip(self, toy_backend, rng):
        w = WPlusCode(rng.normal(size=(6, 8)))
        recovered = toy_backend.invert_image(toy_backend.generate_from_wplus(w))
        assert np.abs(recovered.values - w.values).max() < 1e-4

    def test_absent_inverter_raises(self, make_toy_backend, rng):
        backend = make_toy_backend(with_inverter=False)
        img = ImageTensor(rng.uniform(size=(4, 4, 3)))
        with pytest.raises(InverterUnavailableError):
            backend.invert_image(img)

    def test_deterministic(self, toy_backend, rng):
        img = ImageTensor(rng.uniform(size=(4, 4, 3)))
        a = toy_backend.invert_image(img)
        b = toy_backend.invert_image(img)
        assert np.array_equal(a.values, b.values)


class TestDeterminism:
    def test_same_seed_same_fingerprint_and_outputs(self, make_toy_backend, toy_geometry, rng):
        b1 = make_toy_backend(seed=99)
        b2 = make_toy_backend(seed=99)
        assert b1.fingerprint() == b2.fingerprint()
        s = StyleCode(rng.normal(size=toy_geometry.total_style_channels), toy_geometry)
        assert np.array_equal(
            b1.generate_from_style(s).pixels, b2.generate_from_style(s).pixels
        )

    def test_different_seed_different_fingerprint(self, make_toy_backend):
        assert make_toy_backend(seed=1).fingerprint() != make_toy_backend(seed=2).fingerprint()

    def test_batch_embedding_matches_single_path(self, toy_backend, toy_geometry, rng):
        styles = rng.normal(size=(5, toy_geometry.total_style_channels))
        batch = toy_backend.style_to_embedding_batch(styles)
        for i in range(5):
            single = toy_backend.embed_image(
                toy_backend.generate_from_style(StyleCode(styles[i], toy_geometry))
            )
            np.testing.assert_allclose(batch[i], single.values, atol=1e-12)


class TestBundleAndConfig:
    def test_bundle_exposes_geometry(self, toy_backend, toy_geometry):
        bundle = BackendBundle(toy_backend)
        assert bundle.geometry == toy_geometry

    def test_load_toy_from_dict(self, toy_geometry):
        backend = load_backend(
            {
                "kind": "toy",
                "seed": 5,
                "embed_dim": 12,
                "geometry": json.loads(toy_geometry.to_json()),
            }
        )
        assert backend.kind == "toy"
        assert backend.embed_dim == 12

    def test_load_toy_from_weights_file(self, toy_backend, tmp_path):
        path = tmp_path / "toy.weights"
        toy_backend.save_weights(path)
        loaded = load_backend({"kind": "toy", "weights_path": str(path)})
        assert loaded.fingerprint() == toy_backend.fingerprint()

    def test_real_missing_weights_errors(self, tmp_path):
        with pytest.raises(BackendUnavailableError, match="missing"):
            load_backend(
                {
                    "kind": "real",
                    "weights": {"generator": str(tmp_path / "absent.pkl")},
                }
            )

    def test_unknown_kind_errors(self):
        with pytest.raises(BackendUnavailableError, match="unknown"):
            load_backend({"kind": "imaginary"})


class TestQuadraticSurrogate:
    def test_gradient_matches_finite_differences(self, toy_geometry, rng):
        backend = QuadraticSurrogateBackend(toy_geometry, seed=4)
        w = rng.normal(size=(6, 8))
        _, grad = backend.clip_loss_grad_wplus(w, "unused")
        h = 1e-6
        flat = w.reshape(-1).copy()
        for idx in rng.choice(flat.size, size=10, replace=False):
            plus, minus = flat.copy(), flat.copy()
            plus[idx] += h
            minus[idx] -= h
            fd = (
                backend.clip_loss_wplus(plus.reshape(6, 8), "unused")
                - backend.clip_loss_wplus(minus.reshape(6, 8), "unused")
            ) / (2 * h)
            assert grad.reshape(-1)[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_image_pipeline_unavailable(self, toy_geometry):
        backend = QuadraticSurrogateBackend(toy_geometry)
        with pytest.raises(BackendUnavailableError):
            backend.embed_text("anything")
