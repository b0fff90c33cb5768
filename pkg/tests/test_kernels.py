import numpy as np
import pytest

from style_toolkit import kernels


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(7)
    return {
        "A": rng.normal(size=(24, 10)),
        "S": rng.normal(size=(16, 10)),
        "B": rng.normal(size=(6, 24)),
        "X": rng.uniform(size=(16, 24)),
        "R": rng.normal(size=(12, 40)),
    }


paths = pytest.mark.parametrize("use_numba", [False, True] if kernels.NUMBA_ENABLED else [False])


@paths
def test_render_batch_matches_direct_formula(data, use_numba):
    out = kernels.render_batch(data["A"], data["S"], 0.3, use_numba=use_numba)
    expected = np.clip(data["S"] @ data["A"].T + 0.3, 0.0, 1.0)
    np.testing.assert_allclose(out, expected, atol=1e-12)


@paths
def test_embed_batch_unit_rows(data, use_numba):
    out = kernels.embed_batch(data["B"], data["X"], normalize=True, use_numba=use_numba)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


@paths
def test_embed_batch_raw_mode(data, use_numba):
    out = kernels.embed_batch(data["B"], data["X"], normalize=False, use_numba=use_numba)
    np.testing.assert_allclose(out, data["X"] @ data["B"].T, atol=1e-12)


@paths
def test_pairwise_cosines_against_naive_loop(data, use_numba):
    R = data["R"]
    vals, valid = kernels.pairwise_cosines(R, use_numba=use_numba)
    n = R.shape[0]
    assert vals.size == n * (n - 1) // 2
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            expected = (R[i] @ R[j]) / (np.linalg.norm(R[i]) * np.linalg.norm(R[j]))
            assert valid[k]
            assert vals[k] == pytest.approx(expected, abs=1e-12)
            k += 1


@paths
def test_pairwise_identical_rows_exactly_one(use_numba):
    row = np.array([0.3, -1.7, 2.2, 0.9])
    R = np.tile(row, (4, 1))
    vals, valid = kernels.pairwise_cosines(R, use_numba=use_numba)
    assert valid.all()
    assert np.all(vals == 1.0)


@paths
def test_pairwise_zero_rows_marked_invalid(use_numba):
    R = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    vals, valid = kernels.pairwise_cosines(R, use_numba=use_numba)
    assert valid.tolist() == [False, True, False]
    assert vals[1] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba disabled")
def test_paths_agree(data):
    for fn, args in [
        (kernels.render_batch, (data["A"], data["S"], 0.4)),
        (kernels.embed_batch, (data["B"], data["X"])),
    ]:
        np.testing.assert_allclose(
            fn(*args, use_numba=True), fn(*args, use_numba=False), atol=1e-12
        )
    v1, m1 = kernels.pairwise_cosines(data["R"], use_numba=True)
    v2, m2 = kernels.pairwise_cosines(data["R"], use_numba=False)
    np.testing.assert_allclose(v1, v2, atol=1e-12)
    assert np.array_equal(m1, m2)
