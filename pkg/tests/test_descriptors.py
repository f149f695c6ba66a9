import numpy as np
import pytest

from fmatch import io, shapes
from fmatch.descriptors import (
    CombinationWeights,
    DescriptorError,
    DescriptorSet,
    RankWarning,
    combine,
    concatenate,
    default_hks_times,
    default_wks_energies,
    fibonacci_sphere,
    hks,
    load_descriptors,
    positional,
    wks,
)
from fmatch.spectral import SpectralBasis, mesh_eigenbasis


def _mass_norm(col, mass):
    return np.sqrt(np.sum(mass * col**2))


def test_hks_direct_summation(tet):
    b = mesh_eigenbasis(tet, 3)
    got = hks(b, [1.0], normalize=False).values[:, 0]
    oracle = np.array([sum(np.exp(-b.evals[i]) * b.evecs[v, i] ** 2 for i in range(b.k)) for v in range(4)])
    assert np.allclose(got, oracle, rtol=1e-12, atol=0)


def test_hks_limits(bumpy300_basis):
    b = bumpy300_basis
    raw0 = hks(b, [1e-300], normalize=False).values[:, 0]
    assert np.allclose(raw0, np.sum(b.evecs**2, axis=1), rtol=1e-12)
    late = hks(b, [1e6]).values[:, 0]
    const = np.full(b.n, 1 / np.sqrt(b.mass.sum()))
    assert np.allclose(late, const, rtol=1e-6)


def test_hks_positive_and_normalized(bumpy300_basis):
    b = bumpy300_basis
    raw = hks(b, normalize=False).values
    assert np.all(raw > 0)
    d = hks(b)
    assert d.d == 16 and d.source == "hks"
    for col in d.values.T:
        assert _mass_norm(col, b.mass) == pytest.approx(1.0, rel=1e-12)


def test_default_times_range(bumpy300_basis):
    ev = bumpy300_basis.evals
    t = default_hks_times(ev)
    assert t[0] == pytest.approx(4 * np.log(10) / ev[-1])
    assert t[-1] == pytest.approx(4 * np.log(10) / ev[1])
    assert np.allclose(np.diff(np.log(t)), np.log(t[1] / t[0]))


def test_default_energies(bumpy300_basis):
    ev = bumpy300_basis.evals
    e, sigma = default_wks_energies(ev)
    assert e[0] == pytest.approx(np.log(ev[1])) and e[-1] == pytest.approx(np.log(ev[-1]))
    assert sigma == pytest.approx(7 * (e[-1] - e[0]) / 16)


def test_wks_direct_summation(bumpy300_basis):
    b = bumpy300_basis.truncated(10)
    e, s = np.array([0.5, 1.5]), 0.7
    got = wks(b, e, s, normalize=False).values
    oracle = np.zeros((b.n, 2))
    for j, en in enumerate(e):
        w = [np.exp(-((en - np.log(lam)) ** 2) / (2 * s * s)) for lam in b.evals[1:]]
        oracle[:, j] = sum(wi * b.evecs[:, i + 1] ** 2 for i, wi in enumerate(w)) / sum(w)
    assert np.allclose(got, oracle, rtol=1e-12, atol=0)


def test_wks_single_band(bumpy300_basis):
    b = bumpy300_basis.truncated(2)
    col = wks(b, [0.3], 0.5).values[:, 0]
    target = b.evecs[:, 1] ** 2
    assert np.allclose(col, target / _mass_norm(target, b.mass), rtol=1e-12)


def test_wks_wide_sigma(bumpy300_basis):
    b = bumpy300_basis.truncated(12)
    col = wks(b, [0.0], 1e8).values[:, 0]
    target = np.sum(b.evecs[:, 1:] ** 2, axis=1)
    assert np.allclose(col, target / _mass_norm(target, b.mass), rtol=1e-9)


def test_wks_errors(bumpy300_basis):
    with pytest.raises(DescriptorError):
        wks(bumpy300_basis.truncated(1))
    zero = SpectralBasis(np.ones((4, 2)), np.zeros(2), np.ones(4))
    with pytest.raises(DescriptorError):
        wks(zero, [0.0], 1.0)
    with pytest.raises(DescriptorError):
        wks(bumpy300_basis, [0.0], -1.0)
    with pytest.raises(DescriptorError):
        hks(bumpy300_basis, [0.0])


def test_sign_flip_invariance(bumpy300_basis, rng):
    b = bumpy300_basis
    flips = rng.choice([-1.0, 1.0], size=b.k)
    flipped = SpectralBasis(b.evecs * flips, b.evals, b.mass)
    assert np.allclose(hks(b).values, hks(flipped).values, rtol=0, atol=1e-15)
    assert np.allclose(wks(b).values, wks(flipped).values, rtol=0, atol=1e-15)


def test_positional_features():
    m = shapes.sphere(200)
    d = positional(m.vertices, n_anchors=64)
    assert d.d == 64 and d.source == "positional"
    assert np.all(d.values > 0) and np.all(d.values <= 1)
    # moving a shape moves its features
    shifted = positional(m.vertices + 0.5, n_anchors=64)
    assert np.abs(shifted.values - d.values).max() > 0.1
    with pytest.raises(DescriptorError):
        positional(m.vertices, normalize=True)


def test_fibonacci_sphere_unit():
    p = fibonacci_sphere(100)
    assert np.allclose(np.linalg.norm(p, axis=1), 1.0)


def test_load_csv(tmp_path, rng):
    vals = rng.standard_normal((5, 352))
    path = tmp_path / "d.csv"
    path.write_text("\n".join(",".join(repr(float(x)) for x in row) for row in vals) + "\n")
    d = load_descriptors(path, n=5)
    assert d.d == 352 and d.source == "external"
    assert np.array_equal(d.values, vals)


def test_load_row_mismatch(tmp_path, tet):
    path = tmp_path / "d.csv"
    path.write_text("1,2\n3,4\n5,6\n")
    with pytest.raises(DescriptorError, match="3 rows.*4 vertices"):
        load_descriptors(path, mesh=tet)


def test_load_non_finite(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("1,2\n3,inf\n")
    with pytest.raises(DescriptorError, match="row 1, column 1"):
        load_descriptors(path)


def test_load_fmmat_and_header(tmp_path, rng):
    vals = rng.standard_normal((4, 3))
    io.save_matrix(tmp_path / "d.fmmat", vals)
    assert np.array_equal(load_descriptors(tmp_path / "d.fmmat", n=4).values, vals)
    (tmp_path / "h.csv").write_text("a,b\n1,2\n")
    assert load_descriptors(tmp_path / "h.csv", header=True).values.tolist() == [[1, 2]]
    bad = vals.copy()
    bad[2, 1] = np.nan
    io.save_matrix(tmp_path / "bad.fmmat", bad)
    with pytest.raises(DescriptorError, match="row 2, column 1"):
        load_descriptors(tmp_path / "bad.fmmat")


def test_descriptor_set_validation():
    with pytest.raises(DescriptorError, match="row 0, column 1"):
        DescriptorSet(np.array([[1.0, np.nan]]), ("a", "b"), "external")
    with pytest.raises(DescriptorError):
        DescriptorSet(np.ones((3, 2)), ("a",), "external")
    with pytest.raises(DescriptorError):
        DescriptorSet(np.ones((3, 1)), ("a",), "shot")


def test_combine_examples(rng):
    d = DescriptorSet(rng.standard_normal((10, 4)), tuple("abcd"), "external")
    assert np.array_equal(combine(d, CombinationWeights.identity(4)).values, d.values)
    sel = np.zeros((4, 1))
    sel[2, 0] = 1
    assert np.array_equal(combine(d, sel).values[:, 0], d.values[:, 2])
    with pytest.warns(RankWarning):
        z = combine(d, np.zeros((4, 3)))
    assert not z.values.any() and z.source == "combined"
    with pytest.raises(DescriptorError):
        combine(d, np.ones((3, 3)))


def test_combine_linear(rng):
    d = DescriptorSet(rng.standard_normal((20, 5)), tuple("abcde"), "external")
    w1, w2 = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    lhs = combine(d, 2.0 * w1 - 0.5 * w2).values
    rhs = 2.0 * combine(d, w1).values - 0.5 * combine(d, w2).values
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_concatenate_and_random_weights():
    a = DescriptorSet(np.ones((3, 1)), ("a",), "hks")
    b = DescriptorSet(np.zeros((3, 2)), ("b", "c"), "wks")
    c = concatenate(a, b)
    assert c.d == 3 and c.source == "external" and c.labels == ("a", "b", "c")
    w1 = CombinationWeights.random(6, 4, seed=3)
    assert np.array_equal(w1.matrix, CombinationWeights.random(6, 4, seed=3).matrix)
    assert (w1.d_in, w1.d_out) == (6, 4)
