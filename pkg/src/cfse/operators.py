"""Points of the operator manifold and closed-chain spectra.

A point is a Hermitian trace-one operator on C^f with at most n positive and
at most n negative eigenvalues.  The product of two such points has rank at
most 2n, so its nonzero spectrum is computed from a reduced matrix of size
2n x 2n instead of an f x f eigensolve.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    NotHermitian,
    NotUnitary,
    SignatureViolation,
    TraceNotOne,
)

HERMITICITY_RTOL = 1e-12
TRACE_ATOL = 1e-10
UNITARITY_ATOL = 1e-10
RANK_RTOL = 1e-9


def default_rank_tol(eigenvalues) -> float:
    """Relative rank threshold: a fixed fraction of the largest modulus."""
    top = float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0
    return RANK_RTOL * top


@dataclass(frozen=True, eq=False)
class OperatorPoint:
    """Validated point with its spectral factorization cached.

    ``chain_basis`` holds the eigenvectors of the (at most 2n) nonzero
    eigenvalues, zero-padded to width 2n; ``chain_scaled`` is the basis with
    each column scaled by its eigenvalue.  These two factors are all the
    closed-chain reduction ever reads, and conjugation rotates them without
    re-factorizing.
    """

    mat: np.ndarray
    f: int
    n: int
    rank_tol: float
    spectrum: np.ndarray        # all f eigenvalues, descending
    vectors: np.ndarray         # matching eigenvector columns
    chain_basis: np.ndarray     # (f, 2n)
    chain_scaled: np.ndarray    # (f, 2n)

    @property
    def rank(self) -> int:
        return int(np.sum(np.abs(self.spectrum) > self.rank_tol))

    @property
    def nonzero_eigenvalues(self) -> np.ndarray:
        return self.spectrum[np.abs(self.spectrum) > self.rank_tol]


def make_point(mat, n: int, rank_tol=None) -> OperatorPoint:
    """Validate a matrix as a point and cache its spectral factorization.

    Raises NotHermitian, TraceNotOne or SignatureViolation when the defining
    constraints fail at the module tolerances.
    """
    mat = np.ascontiguousarray(mat, dtype=np.complex128)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {mat.shape}")
    if n < 1:
        raise ValueError("spin dimension n must be a positive integer")
    if rank_tol is not None and rank_tol < 0:
        raise ValueError("rank_tol must be nonnegative")
    f = mat.shape[0]

    scale = float(np.max(np.abs(mat)))
    herm_defect = float(np.max(np.abs(mat - mat.conj().T)))
    if herm_defect > HERMITICITY_RTOL * max(scale, 1e-300):
        raise NotHermitian(f"max |A - A^H| = {herm_defect:.3e} at scale {scale:.3e}")

    trace = mat.trace()
    if abs(trace - 1.0) > TRACE_ATOL:
        raise TraceNotOne(f"trace = {trace}")

    vals, vecs = np.linalg.eigh(mat)
    order = np.argsort(-vals, kind="stable")
    vals = np.ascontiguousarray(vals[order])
    vecs = np.ascontiguousarray(vecs[:, order])

    tol = default_rank_tol(vals) if rank_tol is None else float(rank_tol)
    n_pos = int(np.sum(vals > tol))
    n_neg = int(np.sum(vals < -tol))
    if n_pos > n or n_neg > n:
        raise SignatureViolation(
            f"signature ({n_pos}, {n_neg}) exceeds the ({n}, {n}) bound"
        )

    keep = np.abs(vals) > tol
    k = int(keep.sum())
    basis = np.zeros((f, 2 * n), dtype=np.complex128)
    scaled = np.zeros((f, 2 * n), dtype=np.complex128)
    basis[:, :k] = vecs[:, keep]
    scaled[:, :k] = vecs[:, keep] * vals[keep]
    return OperatorPoint(
        mat=mat, f=f, n=n, rank_tol=tol,
        spectrum=vals, vectors=vecs, chain_basis=basis, chain_scaled=scaled,
    )


@dataclass(frozen=True, eq=False)
class ClosedChainSpectrum:
    """Eigenvalues of the product xy, zero-padded to exactly 2n entries.

    Ordering convention: descending modulus, ties broken by ascending phase
    in (-pi, pi].
    """

    eigenvalues: np.ndarray
    n: int = field(repr=False, default=1)

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)


def sort_spectrum(values) -> np.ndarray:
    """Apply the fixed ordering convention to a complex eigenvalue list."""
    values = np.asarray(values, dtype=np.complex128)
    moduli = np.abs(values)
    phases = np.angle(values)
    # np.angle returns (-pi, pi]; -pi can appear from rounding, fold it up
    phases = np.where(phases <= -np.pi, np.pi, phases)
    order = np.lexsort((phases, -moduli))
    return values[order]


def _eigvals_2x2(m: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of a stack of complex 2x2 matrices.

    Uses the sign-stable quadratic branch so the two roots never suffer the
    cancellation of the naive (tr +- disc)/2 pair.
    """
    a, b = m[..., 0, 0], m[..., 0, 1]
    c, d = m[..., 1, 0], m[..., 1, 1]
    half_tr = 0.5 * (a + d)
    det = a * d - b * c
    disc = np.sqrt(half_tr * half_tr - det)
    align = half_tr.real * disc.real + half_tr.imag * disc.imag
    disc = np.where(align < 0, -disc, disc)
    lam1 = half_tr + disc
    safe = np.where(np.abs(lam1) > 0, lam1, 1.0)
    lam2 = np.where(np.abs(lam1) > 0, det / safe, 0.0 + 0.0j)
    return np.stack([lam1, lam2], axis=-1)


def chain_eigenvalue_stack(scaled_a, basis_a, scaled_b, basis_b) -> np.ndarray:
    """Eigenvalues (unsorted, padded to 2n) of all pairwise products.

    Inputs are stacked factors of shape (A, f, 2n) and (B, f, 2n); the result
    has shape (A, B, 2n).  The nonzero entries of slot (a, b) equal the
    nonzero eigenvalues of x_a y_b counting algebraic multiplicity; the
    reduced matrix is D_a (P_a^H P_b) D_b (P_b^H P_a) expressed through the
    scaled factors.
    """
    g_front = np.einsum("afi,bfj->abij", scaled_a.conj(), scaled_b)
    g_back = np.einsum("bfi,afj->abij", basis_b.conj(), basis_a)
    small = np.einsum("abij,abjk->abik", g_front, g_back)
    if small.shape[-1] == 2:
        return _eigvals_2x2(small)
    return np.linalg.eigvals(small)


def closed_chain_spectrum(x: OperatorPoint, y: OperatorPoint) -> ClosedChainSpectrum:
    """Spectrum of xy via the rank-2n reduction, never an f x f eigensolve."""
    _check_compatible(x, y)
    vals = chain_eigenvalue_stack(
        x.chain_scaled[None], x.chain_basis[None],
        y.chain_scaled[None], y.chain_basis[None],
    )[0, 0]
    return ClosedChainSpectrum(eigenvalues=sort_spectrum(vals), n=x.n)


def _unitary_matrix(u, f: int) -> np.ndarray:
    mat = np.ascontiguousarray(getattr(u, "mat", u), dtype=np.complex128)
    if mat.shape != (f, f):
        raise DimensionMismatch(f"unitary shape {mat.shape} does not match f={f}")
    defect = float(np.max(np.abs(mat.conj().T @ mat - np.eye(f))))
    if defect > UNITARITY_ATOL:
        raise NotUnitary(f"max |U^H U - I| = {defect:.3e}")
    return mat


def conjugate(u, x: OperatorPoint) -> OperatorPoint:
    """Return U x U^{-1} with the cached factors rotated, spectrum untouched.

    The factor rotation uses the same einsum contraction as the batched
    Lagrangian block, so single-point and block evaluations stay bitwise
    identical.
    """
    umat = _unitary_matrix(u, x.f)
    return OperatorPoint(
        mat=umat @ x.mat @ umat.conj().T,
        f=x.f, n=x.n, rank_tol=x.rank_tol,
        spectrum=x.spectrum,
        vectors=umat @ x.vectors,
        chain_basis=np.einsum("ij,jk->ik", umat, x.chain_basis),
        chain_scaled=np.einsum("ij,jk->ik", umat, x.chain_scaled),
    )


def spin_space_dim(x: OperatorPoint, rank_tol=None) -> int:
    """Rank of x at the given tolerance; the point is regular iff this is 2n."""
    tol = x.rank_tol if rank_tol is None else float(rank_tol)
    return int(np.sum(np.abs(x.spectrum) > tol))


def spin_intersection_dim(x: OperatorPoint, y: OperatorPoint, rank_tol=None) -> int:
    """Dimension of range(x) & range(y) via rank(x) + rank(y) - rank([X|Y])."""
    _check_compatible(x, y)
    rx = spin_space_dim(x, rank_tol)
    ry = spin_space_dim(y, rank_tol)
    if rx == 0 or ry == 0:
        return 0
    stacked = np.hstack([x.chain_basis[:, :rx], y.chain_basis[:, :ry]])
    svals = np.linalg.svd(stacked, compute_uv=False)
    tol = RANK_RTOL * svals[0] if rank_tol is None else float(rank_tol)
    joint = int(np.sum(svals > tol))
    return rx + ry - joint


def _check_compatible(x: OperatorPoint, y: OperatorPoint) -> None:
    if x.f != y.f or x.n != y.n:
        raise DimensionMismatch(
            f"points live on different spaces: (f={x.f}, n={x.n}) vs (f={y.f}, n={y.n})"
        )


def haar_unitary(rng: np.random.Generator, f: int) -> np.ndarray:
    """Haar-distributed unitary: Ginibre matrix, QR, diagonal phase correction."""
    z = (rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_point(f: int, n: int, rng: np.random.Generator) -> OperatorPoint:
    """Random full-rank point: signature (n, n), trace one, Haar-random frame."""
    pos = rng.uniform(1.1, 2.0, size=n)
    neg = (pos.sum() - 1.0) * rng.dirichlet(np.ones(n))
    vals = np.concatenate([pos, -neg])
    frame = haar_unitary(rng, f)[:, : 2 * n]
    mat = (frame * vals) @ frame.conj().T
    return make_point(mat, n)
