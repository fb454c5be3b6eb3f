import numpy as np
import pytest

from cfse import streams
from cfse.errors import (
    DimensionMismatch,
    NotHermitian,
    NotUnitary,
    SignatureViolation,
    TraceNotOne,
)
from cfse.operators import (
    closed_chain_spectrum,
    conjugate,
    haar_unitary,
    make_point,
    random_point,
    sort_spectrum,
    spin_intersection_dim,
    spin_space_dim,
)

from conftest import assert_spectra_close


def proj(v):
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


class TestMakePoint:
    def test_rank1_projector(self):
        p = make_point(np.diag([1.0, 0.0]), 1)
        np.testing.assert_allclose(sorted(p.spectrum), [0.0, 1.0], atol=1e-14)

    def test_signature_1_1(self):
        p = make_point(np.diag([2.0, -1.0]), 1)
        assert p.rank == 2

    def test_two_positive_violates_n1(self):
        with pytest.raises(SignatureViolation):
            make_point(np.diag([0.5, 0.5, 0.0]), 1)

    def test_not_hermitian(self):
        m = np.array([[1.0, 0.5], [0.0, 0.0]], dtype=complex)
        with pytest.raises(NotHermitian):
            make_point(m, 1)

    def test_trace_not_one(self):
        with pytest.raises(TraceNotOne):
            make_point(np.diag([2.0, -0.5]), 1)

    def test_rejects_nonsquare(self):
        with pytest.raises(DimensionMismatch):
            make_point(np.ones((2, 3)), 1)


class TestClosedChain:
    def test_projector_squared(self):
        p = make_point(np.diag([1.0, 0.0]), 1)
        s = closed_chain_spectrum(p, p)
        assert_spectra_close(s.eigenvalues, [1.0, 0.0], 1e-12)

    def test_orthogonal_projectors_vanish(self):
        x = make_point(np.diag([1.0, 0.0]), 1)
        y = make_point(np.diag([0.0, 1.0]), 1)
        s = closed_chain_spectrum(x, y)
        assert_spectra_close(s.eigenvalues, [0.0, 0.0], 1e-14)

    def test_overlap_half(self):
        x = make_point(proj([1.0, 0.0]), 1)
        y = make_point(proj([1.0, 1.0]), 1)
        s = closed_chain_spectrum(x, y)
        # brute-force 2x2 eigensolve gives |<e1|v>|^2 = 0.5 and 0
        full = np.linalg.eigvals(x.mat @ y.mat)
        assert_spectra_close(s.eigenvalues, full, 1e-12)
        assert_spectra_close(s.eigenvalues, [0.5, 0.0], 1e-12)

    def test_padded_length_is_2n(self):
        rng = streams.stream(1, "cc")
        x = random_point(5, 2, rng)
        y = random_point(5, 2, rng)
        s = closed_chain_spectrum(x, y)
        assert len(s.eigenvalues) == 4

    @pytest.mark.parametrize("seed", range(8))
    def test_lowrank_matches_full_eigensolve(self, seed):
        rng = streams.stream(seed, "lowrank")
        f = int(rng.integers(2, 9))
        n = int(rng.integers(1, 3))
        if 2 * n > f:
            n = 1
        x = random_point(f, n, rng)
        y = random_point(f, n, rng)
        reduced = closed_chain_spectrum(x, y).eigenvalues
        full = np.linalg.eigvals(x.mat @ y.mat)
        full = full[np.argsort(-np.abs(full))][: 2 * n]
        scale = max(np.abs(full).max(), 1.0)
        assert_spectra_close(reduced, full, 1e-9 * scale)

    def test_dimension_mismatch(self):
        x = make_point(np.diag([1.0, 0.0]), 1)
        y = make_point(np.diag([1.0, 0.0, 0.0]), 1)
        with pytest.raises(DimensionMismatch):
            closed_chain_spectrum(x, y)

    def test_ordering_convention(self):
        vals = sort_spectrum([1.0 - 1.0j, 1.0 + 1.0j, 0.1, 3.0])
        assert vals[0] == 3.0
        # tie at modulus sqrt(2): ascending phase puts the -pi/4 root first
        assert vals[1] == pytest.approx(1.0 - 1.0j)
        assert vals[2] == pytest.approx(1.0 + 1.0j)


class TestConjugate:
    def test_identity_exact(self):
        x = make_point(np.diag([2.0, -1.0]), 1)
        y = conjugate(np.eye(2), x)
        np.testing.assert_array_equal(y.mat, x.mat)

    def test_spectrum_preserved(self):
        rng = streams.stream(3, "conj")
        x = random_point(4, 1, rng)
        u = haar_unitary(rng, 4)
        y = conjugate(u, x)
        np.testing.assert_array_equal(y.spectrum, x.spectrum)
        revalidated = make_point(y.mat, 1)
        np.testing.assert_allclose(sorted(revalidated.nonzero_eigenvalues),
                                   sorted(x.nonzero_eigenvalues), atol=1e-10)

    def test_not_unitary(self):
        x = make_point(np.diag([1.0, 0.0]), 1)
        with pytest.raises(NotUnitary):
            conjugate(np.eye(2) * 1.05, x)

    @pytest.mark.parametrize("seed", range(5))
    def test_chain_spectrum_conjugation_invariant(self, seed):
        rng = streams.stream(seed, "chain-inv")
        x = random_point(5, 1, rng)
        y = random_point(5, 1, rng)
        u = haar_unitary(rng, 5)
        s1 = closed_chain_spectrum(x, y).eigenvalues
        s2 = closed_chain_spectrum(conjugate(u, x), conjugate(u, y)).eigenvalues
        assert_spectra_close(s1, s2, 1e-9 * max(1.0, np.abs(s1).max()))


class TestSpinSpaces:
    def test_rank1_not_regular(self):
        assert spin_space_dim(make_point(np.diag([1.0, 0.0]), 1)) == 1

    def test_rank2_regular(self):
        assert spin_space_dim(make_point(np.diag([2.0, -1.0]), 1)) == 2

    def test_padding_preserves_rank(self):
        assert spin_space_dim(make_point(np.diag([2.0, -1.0, 0.0, 0.0]), 1)) == 2

    def test_orthogonal_ranges(self):
        x = make_point(np.diag([1.0, 0.0]), 1)
        y = make_point(np.diag([0.0, 1.0]), 1)
        assert spin_intersection_dim(x, y) == 0

    def test_identical_rank1(self):
        x = make_point(np.diag([1.0, 0.0]), 1)
        assert spin_intersection_dim(x, x) == 1

    @pytest.mark.parametrize("seed", range(6))
    def test_random_pair_matches_svd_oracle(self, seed):
        rng = streams.stream(seed, "spin")
        x = random_point(6, 1, rng)
        y = random_point(6, 1, rng)
        got = spin_intersection_dim(x, y)
        # oracle: rank of the orthogonal projections product via SVD
        bx = np.linalg.svd(x.mat)[0][:, :2]
        by = np.linalg.svd(y.mat)[0][:, :2]
        sv = np.linalg.svd(np.hstack([bx, by]), compute_uv=False)
        joint = int(np.sum(sv > 1e-9 * sv[0]))
        assert got == 4 - joint


def test_haar_unit_modulus_f1():
    rng = streams.stream(11, "haar1")
    for _ in range(50):
        u = haar_unitary(rng, 1)
        assert abs(abs(u[0, 0]) - 1.0) < 1e-15
