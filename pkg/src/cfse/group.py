"""Unitary group sampling and the time-fixing constraint slice.

The slice consists of unitaries U with vanishing equal-time surface layer
integral against the cutoff vacuum.  It is sampled by drawing Haar proposals
and root-finding along the time-translation flow tau -> U exp(-i tau H); a
proposal is kept when the root lies inside a fixed window.  In flow
coordinates the Haar volume factorizes, so this reproduces the canonical
slice measure up to a bias of the window size, which is exposed as a knob.
"""

import base64
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .configuration import DiscreteConfiguration
from .errors import (
    DimensionMismatch,
    EnsembleEmpty,
    NotHermitian,
    NotUnitary,
    RootFindStall,
)
from .lagrangian import ModelParams, fold_sum
from .operators import UNITARITY_ATOL, haar_unitary
from .surface_layer import gamma_tt
from . import streams

BISECT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class GroupElement:
    mat: np.ndarray

    @property
    def f(self) -> int:
        return self.mat.shape[0]

    @classmethod
    def identity(cls, f: int) -> "GroupElement":
        return cls(mat=np.eye(f, dtype=np.complex128))

    def compose(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(mat=self.mat @ other.mat)

    def inverse(self) -> "GroupElement":
        return GroupElement(mat=np.ascontiguousarray(self.mat.conj().T))


def make_unitary(mat) -> GroupElement:
    """Validated constructor; raises NotUnitary beyond the module tolerance."""
    mat = np.ascontiguousarray(mat, dtype=np.complex128)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {mat.shape}")
    defect = float(np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0]))))
    if defect > UNITARITY_ATOL:
        raise NotUnitary(f"max |U^H U - I| = {defect:.3e}")
    return GroupElement(mat=mat)


def haar_sample(f: int, seed) -> GroupElement:
    """Haar-distributed unitary; ``seed`` is an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else streams.stream(seed, "haar")
    return GroupElement(mat=haar_unitary(rng, f))


def time_translation(tau: float, generator) -> GroupElement:
    """exp(-i tau H) for Hermitian H, through its eigendecomposition."""
    h = np.asarray(generator, dtype=np.complex128)
    scale = max(float(np.max(np.abs(h))), 1e-300)
    if float(np.max(np.abs(h - h.conj().T))) > 1e-10 * scale:
        raise NotHermitian("generator is not Hermitian")
    off_diag = h - np.diag(np.diagonal(h))
    if float(np.max(np.abs(off_diag))) == 0.0:
        return GroupElement(mat=np.diag(np.exp(-1j * tau * np.diagonal(h).real)))
    vals, vecs = np.linalg.eigh(h)
    return GroupElement(mat=(vecs * np.exp(-1j * tau * vals)) @ vecs.conj().T)


def slice_residual(u, eta_rho: DiscreteConfiguration, t0: float,
                   params: ModelParams) -> float:
    """Equal-time surface layer integral; zero characterizes the slice."""
    return gamma_tt(t0, t0, eta_rho, u, params).value


@dataclass(frozen=True, eq=False)
class SliceSample:
    element: GroupElement      # effective element, thickening offset included
    tau: float                 # root of the translation flow
    residual: float            # residual at the root
    weight: float
    tau_offset: float = 0.0
    dres_dtau: float = 0.0
    transversal: bool = True


@dataclass(frozen=True, eq=False)
class SliceEnsemble:
    samples: tuple
    acceptance_rate: float
    seed: int
    dt_max: float
    thicken_dt: float
    t0: float
    config: DiscreteConfiguration
    gamma_scale: float          # median |residual| over Haar proposals
    slice_tol: float
    weight_mode: str
    config_checksum: str

    @property
    def k(self) -> int:
        return len(self.samples)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.samples], dtype=float)


def project_to_slice(u: GroupElement, eta_rho: DiscreteConfiguration, t0: float,
                     dt_max: float, tol: float, params: ModelParams,
                     generator=None, max_iter: int = BISECT_MAX_ITER,
                     fd_step=None, derivative_floor: float = 0.0):
    """Root-find tau with residual(u U_tau) <= tol; None when no sign change.

    The residual is bracketed at tau in {-dt_max, 0, +dt_max} and bisected.
    RootFindStall is raised when a sign change exists but the tolerance is
    not reached within ``max_iter`` bisections.
    """
    gen = eta_rho.generator() if generator is None else np.asarray(generator)

    def res(tau: float) -> float:
        return slice_residual(u.compose(time_translation(tau, gen)), eta_rho, t0, params)

    r_mid = res(0.0)
    if abs(r_mid) <= tol:
        root, r_root = 0.0, r_mid
    else:
        r_lo, r_hi = res(-dt_max), res(dt_max)
        if math.copysign(1.0, r_lo) != math.copysign(1.0, r_mid):
            lo, f_lo, hi = -dt_max, r_lo, 0.0
        elif math.copysign(1.0, r_mid) != math.copysign(1.0, r_hi):
            lo, f_lo, hi = 0.0, r_mid, dt_max
        else:
            return None
        root = r_root = None
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            f_mid = res(mid)
            if abs(f_mid) <= tol:
                root, r_root = mid, f_mid
                break
            if math.copysign(1.0, f_mid) == math.copysign(1.0, f_lo):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
        if root is None:
            raise RootFindStall(
                f"sign change in [{lo}, {hi}] but |residual| > {tol} after {max_iter} bisections"
            )
    step = fd_step if fd_step is not None else 1e-6 * max(dt_max, 1e-12)
    dres = (res(root + step) - res(root - step)) / (2.0 * step)
    return SliceSample(
        element=u.compose(time_translation(root, gen)),
        tau=float(root), residual=float(r_root), weight=1.0,
        dres_dtau=float(dres), transversal=abs(dres) > derivative_floor,
    )


def slice_ensemble(k: int, eta_rho: DiscreteConfiguration, t0: float,
                   dt_max: float, tol, seed: int, params: ModelParams,
                   thicken_dt: float = 0.0, symmetrize: bool = True,
                   weight_mode: str = "uniform", sampler=None, generator=None,
                   probe_count: int = 32, max_proposals=None,
                   derivative_floor=None) -> SliceEnsemble:
    """Accepted slice samples with per-sample counter-derived streams.

    With ``symmetrize`` the ensemble holds inverse pairs (U, U^-1), which
    makes the equal-time integrand cancel pairwise.  ``thicken_dt`` > 0
    composes each sample with a uniform translation offset in
    [-thicken_dt, thicken_dt], realizing the thickened slice. ``tol`` may be
    None, in which case it is a fixed fraction of the proposal residual
    scale; the scale pilots always draw from the full group even when a
    restricted ``sampler`` supplies the proposals, so tolerances stay
    comparable across restrictions.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if symmetrize and k % 2:
        raise ValueError("a symmetrized ensemble needs an even sample count")
    if weight_mode not in ("uniform", "inverse_speed"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    gen = eta_rho.generator() if generator is None else np.asarray(generator)
    f = eta_rho.f
    draw = sampler if sampler is not None else (lambda rng: haar_unitary(rng, f))

    pilot = [
        abs(slice_residual(
            GroupElement(mat=haar_unitary(streams.stream(seed, "pilot", i), f)),
            eta_rho, t0, params))
        for i in range(probe_count)
    ]
    gamma_scale = float(np.median(pilot))
    slice_tol = 1e-9 * gamma_scale if tol is None else float(tol)
    floor = 0.0 if derivative_floor is None else float(derivative_floor)

    base_needed = k // 2 if symmetrize else k
    budget = max_proposals if max_proposals is not None else 60 * base_needed + 64
    accepted = []
    tried = 0
    while len(accepted) < base_needed and tried < budget:
        u = GroupElement(mat=draw(streams.stream(seed, "proposal", tried)))
        tried += 1
        sample = project_to_slice(u, eta_rho, t0, dt_max, slice_tol, params,
                                  generator=gen, derivative_floor=floor)
        if sample is not None:
            accepted.append(sample)
    if len(accepted) < base_needed:
        raise EnsembleEmpty(
            f"accepted {len(accepted)}/{base_needed} samples in {tried} proposals"
        )

    samples = []
    for i, s in enumerate(accepted):
        pair = [s]
        if symmetrize:
            inv = s.element.inverse()
            r_inv = slice_residual(inv, eta_rho, t0, params)
            pair.append(SliceSample(
                element=inv, tau=-s.tau, residual=float(r_inv), weight=1.0,
                dres_dtau=s.dres_dtau, transversal=s.transversal,
            ))
        if thicken_dt > 0.0:
            off = float(streams.stream(seed, "thicken", i).uniform(-thicken_dt, thicken_dt))
            offsets = [off, -off]
            pair = [
                replace(p, element=p.element.compose(time_translation(o, gen)),
                        tau_offset=o)
                for p, o in zip(pair, offsets)
            ]
        samples.extend(pair)
    if weight_mode == "inverse_speed":
        samples = [
            replace(s, weight=1.0 / max(abs(s.dres_dtau), 1e-300)) for s in samples
        ]
    return SliceEnsemble(
        samples=tuple(samples), acceptance_rate=len(accepted) / tried, seed=seed,
        dt_max=dt_max, thicken_dt=thicken_dt, t0=t0, config=eta_rho,
        gamma_scale=gamma_scale, slice_tol=slice_tol, weight_mode=weight_mode,
        config_checksum=eta_rho.checksum,
    )


@dataclass(frozen=True)
class IntegralEstimate:
    mean: float
    std_error: float


def normalized_integral(fn, ensemble: SliceEnsemble) -> IntegralEstimate:
    """Self-normalized ensemble mean of fn with jackknife standard error."""
    if ensemble.k == 0:
        raise EnsembleEmpty("cannot integrate over an empty ensemble")
    values = np.array([fn(s) for s in ensemble.samples], dtype=float)
    weights = ensemble.weights
    return _weighted_mean_jackknife(values, weights)


def _weighted_mean_jackknife(values: np.ndarray, weights: np.ndarray) -> IntegralEstimate:
    total_w = fold_sum(weights)
    total_wv = fold_sum(weights * values)
    mean = total_wv / total_w
    k = len(values)
    if k < 2:
        return IntegralEstimate(mean=float(mean), std_error=0.0)
    loo = (total_wv - weights * values) / (total_w - weights)
    var = (k - 1) / k * np.sum((loo - loo.mean()) ** 2)
    return IntegralEstimate(mean=float(mean), std_error=float(np.sqrt(var)))


class RestrictedSampler:
    """Haar sampler of the block subgroup acting on the leading subspace."""

    def __init__(self, dims: int, f: int):
        if not 0 <= dims <= f:
            raise DimensionMismatch(f"dims={dims} outside [0, {f}]")
        self.dims = dims
        self.f = f

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        u = np.eye(self.f, dtype=np.complex128)
        if self.dims > 0:
            u[: self.dims, : self.dims] = haar_unitary(rng, self.dims)
        return u

    def compress_generator(self, generator) -> np.ndarray:
        """Compression pi H pi of the translation generator onto the block."""
        h = np.asarray(generator, dtype=np.complex128).copy()
        h[self.dims:, :] = 0.0
        h[:, self.dims:] = 0.0
        return h


def subgroup_restriction(dims: int, f: int) -> RestrictedSampler:
    return RestrictedSampler(dims, f)


# ---------------------------------------------------------------------------
# ensemble cache files

def _encode_complex(mat) -> str:
    return base64.b64encode(np.ascontiguousarray(mat, dtype=np.complex128).tobytes()).decode("ascii")


def _decode_complex(text, f) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=np.complex128).reshape(f, f).copy()


def save_ensemble(path, ensemble: SliceEnsemble) -> None:
    """JSON-lines cache: one header record, then one sample per line."""
    header = {
        "kind": "cfse-slice-ensemble",
        "config_checksum": ensemble.config_checksum,
        "seed": ensemble.seed,
        "t0": ensemble.t0,
        "dt_max": ensemble.dt_max,
        "thicken_dt": ensemble.thicken_dt,
        "acceptance_rate": ensemble.acceptance_rate,
        "gamma_scale": ensemble.gamma_scale,
        "slice_tol": ensemble.slice_tol,
        "weight_mode": ensemble.weight_mode,
        "k": ensemble.k,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in ensemble.samples:
            fh.write(json.dumps({
                "mat_b64": _encode_complex(s.element.mat),
                "tau": s.tau,
                "residual": s.residual,
                "weight": s.weight,
                "tau_offset": s.tau_offset,
                "dres_dtau": s.dres_dtau,
                "transversal": s.transversal,
            }, sort_keys=True) + "\n")


def load_ensemble(path, config: DiscreteConfiguration) -> SliceEnsemble:
    """Reload a cached ensemble, verifying it was generated by ``config``."""
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "cfse-slice-ensemble":
            raise ValueError(f"{path} is not an ensemble cache")
        if header["config_checksum"] != config.checksum:
            raise ValueError("ensemble cache was generated from a different configuration")
        samples = []
        for line in fh:
            rec = json.loads(line)
            samples.append(SliceSample(
                element=GroupElement(mat=_decode_complex(rec["mat_b64"], config.f)),
                tau=rec["tau"], residual=rec["residual"], weight=rec["weight"],
                tau_offset=rec["tau_offset"], dres_dtau=rec["dres_dtau"],
                transversal=rec["transversal"],
            ))
    return SliceEnsemble(
        samples=tuple(samples), acceptance_rate=header["acceptance_rate"],
        seed=header["seed"], dt_max=header["dt_max"],
        thicken_dt=header["thicken_dt"], t0=header["t0"], config=config,
        gamma_scale=header["gamma_scale"], slice_tol=header["slice_tol"],
        weight_mode=header["weight_mode"], config_checksum=header["config_checksum"],
    )
