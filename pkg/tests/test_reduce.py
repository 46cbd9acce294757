import time

import numpy as np
import pytest

from genuq import reduce
from genuq._container import FormatError


def _plane_data(rng, n=50, D=10, k=2):
    basis, _ = np.linalg.qr(rng.standard_normal((D, k)))
    return rng.standard_normal(D) + rng.standard_normal((n, k)) @ basis.T * 3


def _smooth_fields(rng, n, h=64, w=128, modes=6):
    """Random sums of low-frequency cosines on an h x w grid, flattened."""
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    out = np.zeros((n, h * w))
    for i in range(modes):
        for j in range(modes):
            basis = (np.cos(np.pi * i * yy) * np.cos(np.pi * j * xx)).ravel()
            out += np.outer(rng.standard_normal(n) / (1 + i + j) ** 2, basis)
    return out


def _check_basis(r, atol=1e-10):
    np.testing.assert_allclose(r.basis.T @ r.basis, np.eye(r.k), atol=atol)
    assert np.all(np.diff(r.explained_ratio) <= 1e-15)
    assert np.all((r.explained_ratio >= 0) & (r.explained_ratio <= 1))


def test_exact_plane(rng):
    X = _plane_data(rng)
    r = reduce.fit(X, 2)
    _check_basis(r)
    np.testing.assert_allclose(r.decode(r.encode(X)), X, atol=1e-10)
    assert r.explained_ratio.sum() == pytest.approx(1.0, abs=1e-12)


def test_full_rank_identity(rng):
    X = rng.standard_normal((20, 6))
    r = reduce.fit(X, 6)
    v = rng.standard_normal((5, 6))
    np.testing.assert_allclose(r.decode(r.encode(v)), v, atol=1e-10)


def test_isotropic_explained_ratio():
    X = np.random.default_rng(0).standard_normal((10_000, 5))
    r = reduce.fit(X, 2)
    assert abs(r.explained_ratio.sum() - 2 / 5) < 0.05


def test_mean_encodes_to_zero(rng):
    r = reduce.fit(rng.standard_normal((30, 7)), 3)
    np.testing.assert_allclose(r.encode(r.mean), 0, atol=1e-12)


def test_projection_optimal_and_idempotent(rng):
    X = rng.standard_normal((40, 12)) @ rng.standard_normal((12, 12))
    r = reduce.fit(X, 4)
    for _ in range(100):
        v = rng.standard_normal(12) * 3
        best = np.linalg.norm(v - r.decode(r.encode(v)))
        assert best <= np.linalg.norm(v - r.decode(rng.standard_normal(4) * 3)) + 1e-12
        e = r.encode(v)
        np.testing.assert_allclose(r.encode(r.decode(e)), e, atol=1e-10)


def test_error_non_increasing_in_k(rng):
    X = rng.standard_normal((30, 10)) @ rng.standard_normal((10, 10))
    errs = [np.linalg.norm(X - reduce.fit(X, k).decode(reduce.fit(X, k).encode(X))) for k in range(1, 11)]
    assert np.all(np.diff(errs) <= 1e-9)


def test_sign_convention(rng):
    X = rng.standard_normal((30, 8))
    r = reduce.fit(X, 3)
    cols = np.arange(3)
    assert np.all(r.basis[np.argmax(np.abs(r.basis), axis=0), cols] > 0)
    r2 = reduce.fit(X[::-1], 3)
    np.testing.assert_allclose(r.basis, r2.basis, atol=1e-10)


@pytest.mark.parametrize("k", [0, 9])
def test_k_out_of_range(k, rng):
    with pytest.raises(ValueError, match="k="):
        reduce.fit(rng.standard_normal((20, 8)), k)


def test_dimension_mismatch(rng):
    r = reduce.fit(rng.standard_normal((20, 8)), 2)
    with pytest.raises(ValueError, match="D=8"):
        r.encode(np.zeros(7))
    with pytest.raises(ValueError, match="k=2"):
        r.decode(np.zeros(3))


def test_file_round_trip(tmp_path, rng):
    r = reduce.fit(rng.standard_normal((20, 8)), 3)
    reduce.save(r, tmp_path / "r.gqrd")
    back = reduce.load(tmp_path / "r.gqrd")
    for a in ("mean", "basis", "explained_ratio"):
        assert getattr(r, a).tobytes() == getattr(back, a).tobytes()
    raw = bytearray((tmp_path / "r.gqrd").read_bytes())
    raw[:4] = b"GQUQ"
    (tmp_path / "bad.gqrd").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        reduce.load(tmp_path / "bad.gqrd")


def test_large_field_smoke():
    rng = np.random.default_rng(3)
    X = _smooth_fields(rng, 500)
    t0 = time.perf_counter()
    r = reduce.fit(X, 20)
    assert time.perf_counter() - t0 < 60
    assert r.D == 8192 and r.k == 20
    _check_basis(r)
    e = r.encode(X)
    np.testing.assert_allclose(r.encode(r.decode(e)), e, atol=1e-10)
    # 36 cosine modes, top 20 carry nearly all the variance
    assert r.explained_ratio.sum() > 0.95
