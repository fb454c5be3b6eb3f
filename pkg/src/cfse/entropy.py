"""Admissibility constraints, the entropy functional, and its optimizers.

The entropy of a past set is the infimum over admissible pairs (h, T) of

    log < exp(beta * gamma) >,

the bracket being the self-normalized slice-ensemble mean.  The two
constraints are enforced by decoupled dials: the target-set constraint by a
root-found recentering of the comparison time (the translation freedom of
the thickened slice), the optimized-set constraint by a root-found global
shift of the time function T.  Both residuals are continuous and monotone
because past sets enter through fractional cell weights, whose boundary
derivative is a signed sum of Lagrangian values.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .configuration import (
    DiscreteConfiguration,
    PastSet,
    past_fraction,
    past_mask,
)
from .errors import (
    ConstantDirection,
    DegenerateKernel,
    DimensionMismatch,
    EmptySlice,
    EnsembleEmpty,
    NoAdmissibleStart,
    NoBracket,
    OverflowGuard,
    RegularityGateFailed,
)
from .group import (
    GroupElement,
    SliceEnsemble,
    _weighted_mean_jackknife,
    slice_ensemble,
    subgroup_restriction,
    time_translation,
)
from .lagrangian import ModelParams, fold_sum, lagrangian_from_moduli
from .operators import haar_unitary, spin_intersection_dim, spin_space_dim
from .surface_layer import gamma_dt_kernel, gamma_terms
from . import streams

ADMISS_TOL_REL = 1e-6
KERNEL_CHUNK = 64


@dataclass(frozen=True)
class EnsembleSettings:
    """Monte Carlo controls for slice-ensemble construction."""

    k: int = 400
    dt_max_fraction: float = 0.45    # projection window, fraction of the period
    slice_tol: float | None = None   # None: 1e-9 of the proposal residual scale
    symmetrize: bool = True
    weight_mode: str = "uniform"
    pilot_count: int = 32
    ttr_probe: int = 16
    positivity_floor: float = 0.0
    verify: bool = True


def build_ensemble(eta_rho: DiscreteConfiguration, t0, seed, params,
                   settings: EnsembleSettings = EnsembleSettings(),
                   thicken_dt: float = 0.0, sampler=None, generator=None) -> SliceEnsemble:
    """Slice ensemble with the pipeline's conventions.

    Symmetrized ensembles hold inverse pairs, making equal-measure equal-time
    integrands cancel pairwise; thickened samples pair opposite translation
    offsets the same way.
    """
    if eta_rho.period is None:
        raise DimensionMismatch("slice sampling needs a periodic configuration")
    return slice_ensemble(
        settings.k, eta_rho, t0, settings.dt_max_fraction * eta_rho.period,
        settings.slice_tol, seed, params, thicken_dt=thicken_dt,
        symmetrize=settings.symmetrize, weight_mode=settings.weight_mode,
        sampler=sampler, generator=generator, probe_count=settings.pilot_count,
    )


def admiss_tol(ensemble: SliceEnsemble) -> float:
    """Scale-relative admissibility tolerance (gamma carries volume^2 units)."""
    return ADMISS_TOL_REL * ensemble.gamma_scale


def default_beta_grid(gamma_scale: float) -> tuple:
    base = (-100.0, -10.0, -1.0, 0.0, 1.0, 10.0, 100.0)
    return tuple(b / gamma_scale for b in base)


def resolve_front(rho_tilde: DiscreteConfiguration, omega) -> np.ndarray:
    """Fractional first-factor past weights from any past-set description."""
    if isinstance(omega, (PastSet, float, int)):
        return past_fraction(rho_tilde, omega)
    arr = np.asarray(omega, dtype=float)
    if arr.shape != (len(rho_tilde.atoms),):
        raise DimensionMismatch(
            f"mask of shape {arr.shape} against {len(rho_tilde.atoms)} atoms"
        )
    return arr


class PairKernels:
    """Per-sample Lagrangian blocks between a configuration and an ensemble.

    blocks[i, a, b] = L(x_a, W_i y_b W_i^-1) with W_i = h U_i.  Masked surface
    layer values over the blocks reproduce the public gamma operation bit for
    bit: same products, same left-fold order.  Re-masking (time functions,
    regions, comparison-time offsets) costs no block rebuild.
    """

    def __init__(self, rho_tilde: DiscreteConfiguration, ensemble: SliceEnsemble,
                 h: GroupElement, params: ModelParams):
        config = ensemble.config
        if rho_tilde.f != config.f or rho_tilde.n != config.n:
            raise DimensionMismatch("rho_tilde does not match the ensemble's vacuum")
        self.rho_tilde = rho_tilde
        self.ensemble = ensemble
        self.h = h
        self.params = params
        self.back_past = past_mask(config, ensemble.t0).astype(float)
        self.blocks = self._build(rho_tilde, ensemble, h, params)

    @staticmethod
    def _build(rho_tilde, ensemble, h, params):
        config = ensemble.config
        k = ensemble.k
        a_n, b_n = len(rho_tilde.atoms), len(config.atoms)
        blocks = np.empty((k, a_n, b_n), dtype=float)
        if a_n == 0 or b_n == 0 or k == 0:
            return blocks
        w_stack = np.stack([h.mat @ s.element.mat for s in ensemble.samples])
        sa, ba = rho_tilde.scaled_stack, rho_tilde.basis_stack
        sb, bb = config.scaled_stack, config.basis_stack
        for start in range(0, k, KERNEL_CHUNK):
            w = w_stack[start:start + KERNEL_CHUNK]
            ws = np.einsum("kij,bjm->kbim", w, sb)
            wb = np.einsum("kij,bjm->kbim", w, bb)
            g_front = np.einsum("afi,kbfj->kabij", sa.conj(), ws)
            g_back = np.einsum("kbfi,afj->kabij", wb.conj(), ba)
            small = np.einsum("kabij,kabjl->kabil", g_front, g_back)
            vals = _eig_small(small)
            blocks[start:start + KERNEL_CHUNK] = lagrangian_from_moduli(
                np.abs(vals), rho_tilde.n, params.kappa)
        return blocks

    def back_fraction(self, offset: float = 0.0) -> np.ndarray:
        """Second-factor past weights at comparison time t0 + offset.

        At zero offset this is exactly the hard mask (the fractional cells
        saturate on lattice points), keeping the bitwise gamma path.
        """
        if offset == 0.0:
            return self.back_past
        return past_fraction(self.ensemble.config, self.ensemble.t0 + offset)

    def gamma_values(self, front_fraction, v_mask=None, back=None) -> np.ndarray:
        """Surface layer value per sample; canonical fold per sample."""
        wt = self.rho_tilde.weights
        w = self.ensemble.config.weights
        vm = np.ones(len(wt)) if v_mask is None else np.asarray(v_mask, dtype=float)
        back = self.back_past if back is None else back
        fp = front_fraction * (vm * wt)
        fm = (1.0 - front_fraction) * (vm * wt)
        bp = (1.0 - back) * w
        bm = back * w
        return np.array([
            gamma_terms(self.blocks[i], fp, fm, bp, bm).value
            for i in range(self.ensemble.k)
        ])

    def mean_gamma(self, front_fraction, v_mask=None, back=None) -> float:
        wts = self.ensemble.weights
        values = self.gamma_values(front_fraction, v_mask, back=back)
        return fold_sum(wts * values) / fold_sum(wts)

    def kernel_slice(self) -> tuple:
        """(K, S) slice kernel sum_b w_b L(U^-1 h^-1 x h U, y_b) and measures.

        Rows are the first-factor atoms sitting at the ensemble's fixed time;
        the accompanying measure is atom weight per unit lattice time.
        """
        idx = self.rho_tilde.slice_indices(self.ensemble.t0)
        if idx.size == 0:
            raise EmptySlice(f"no atoms of rho_tilde at t0={self.ensemble.t0}")
        w = self.ensemble.config.weights
        kernel = np.array([
            [fold_sum(w * self.blocks[i, a]) for a in idx]
            for i in range(self.ensemble.k)
        ])
        mu = self.rho_tilde.weights[idx] / self.rho_tilde.lattice_spacing
        return kernel, mu, idx


def _eig_small(small: np.ndarray) -> np.ndarray:
    from .operators import _eigvals_2x2
    if small.shape[-1] == 2:
        return _eigvals_2x2(small)
    return np.linalg.eigvals(small)


def admissibility_residual(omega_tilde, h, rho_tilde, ensemble, params,
                           v_mask=None, kernels=None) -> float:
    """Ensemble mean of the surface layer integral for the pair (omega, h)."""
    if ensemble.k == 0:
        raise EnsembleEmpty("empty ensemble")
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    return kern.mean_gamma(resolve_front(rho_tilde, omega_tilde), v_mask)


def _illinois(fn, lo, f_lo, hi, f_hi, tol_f, max_iter=200):
    """Bracketed false-position root finding to |f| <= tol_f."""
    for _ in range(max_iter):
        denom = f_hi - f_lo
        x = 0.5 * (lo + hi) if denom == 0 else hi - f_hi * (hi - lo) / denom
        if not (min(lo, hi) < x < max(lo, hi)):
            x = 0.5 * (lo + hi)
        fx = fn(x)
        if abs(fx) <= tol_f:
            return x, fx
        if math.copysign(1.0, fx) == math.copysign(1.0, f_lo):
            lo, f_lo = x, fx
            f_hi *= 0.5
        else:
            hi, f_hi = x, fx
            f_lo *= 0.5
    return None


def project_admissible(t_set: PastSet, h, rho_tilde, ensemble, params,
                       v_mask=None, shift_range=None, tol=None,
                       kernels=None) -> PastSet:
    """Global time shift of T driving the admissibility residual to tolerance."""
    shifted, _, _ = _project_time_shift(t_set, h, rho_tilde, ensemble, params,
                                        v_mask, shift_range, tol, kernels)
    return shifted


def _project_time_shift(t_set, h, rho_tilde, ensemble, params, v_mask=None,
                        shift_range=None, tol=None, kernels=None, back=None):
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    tol = admiss_tol(ensemble) if tol is None else float(tol)
    if shift_range is None:
        span = rho_tilde.period if rho_tilde.period else float(
            rho_tilde.t_lattice[-1] - rho_tilde.t_lattice[0] or 1.0)
        shift_range = 0.5 * span

    def residual(s):
        return kern.mean_gamma(past_fraction(rho_tilde, t_set.shifted(s)),
                               v_mask, back=back)

    r0 = residual(0.0)
    if abs(r0) <= tol:
        return t_set, 0.0, r0
    # the residual decreases in s wherever the slice kernel is positive,
    # so scan outward on the side the sign calls for, then the other side
    sides = [1.0, -1.0] if r0 > 0 else [-1.0, 1.0]
    bracket = None
    for side in sides:
        prev_s, prev_r = 0.0, r0
        for frac in (0.125, 0.25, 0.5, 1.0):
            s = side * frac * shift_range
            r = residual(s)
            if math.copysign(1.0, r) != math.copysign(1.0, prev_r):
                bracket = (prev_s, prev_r, s, r)
                break
            prev_s, prev_r = s, r
        if bracket:
            break
    if bracket is None:
        raise NoBracket("admissibility residual does not change sign over the shift range")
    out = _illinois(lambda s: residual(s), *bracket, tol_f=tol)
    if out is None:
        raise NoBracket("bracketed shift did not reach the admissibility tolerance")
    s_star, r_star = out
    return t_set.shifted(s_star), s_star, r_star


@dataclass(frozen=True)
class FunctionalEstimate:
    value: float
    mc_error: float


@dataclass(frozen=True)
class PartitionEstimate:
    z: float
    log_z: float
    mc_error: float
    log_mc_error: float


def _log_mean_exp(beta, gammas, weights):
    """Shifted log of the weighted mean of exp(beta*gamma), with jackknife SE."""
    if len(gammas) == 0:
        raise EnsembleEmpty("no samples")
    arg = beta * np.asarray(gammas, dtype=float)
    shift = float(np.max(arg))
    if not np.isfinite(shift):
        raise OverflowGuard("exponents are not finite")
    exps = np.exp(arg - shift)
    est = _weighted_mean_jackknife(exps, weights)
    if est.mean <= 0.0:
        raise OverflowGuard("all shifted exponentials vanished")
    value = shift + math.log(est.mean)
    return value, est.std_error / est.mean, est


def entropy_functional(omega_prime, h, beta, rho_tilde, ensemble, params,
                       v_mask=None, kernels=None, back=None) -> FunctionalEstimate:
    """log of the ensemble mean of exp(beta * gamma) at a fixed pair."""
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    gam = kern.gamma_values(resolve_front(rho_tilde, omega_prime), v_mask, back=back)
    value, err, _ = _log_mean_exp(beta, gam, ensemble.weights)
    return FunctionalEstimate(value=value, mc_error=err)


def partition_function(omega_prime, h, beta, rho_tilde, ensemble, params,
                       v_mask=None, kernels=None, back=None) -> PartitionEstimate:
    """Ensemble mean of exp(beta*gamma); log_z is the entropy value verbatim."""
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    gam = kern.gamma_values(resolve_front(rho_tilde, omega_prime), v_mask, back=back)
    value, err, _ = _log_mean_exp(beta, gam, ensemble.weights)
    z = math.exp(value)
    return PartitionEstimate(z=z, log_z=value, mc_error=err * z, log_mc_error=err)


# ---------------------------------------------------------------------------
# regularity diagnostics

@dataclass(frozen=True)
class TtrReport:
    min_over_u: float
    pass_ok: bool
    values: tuple


def ttr_check(eta_rho, t0, ensemble, params, probe=None,
              positivity_floor: float = 0.0) -> TtrReport:
    """Positivity of the slice kernel integral over (a probe of) the ensemble.

    The per-sample value equals -gamma_dt_kernel at the sample's on-slice
    element; thickening offsets are removed before evaluation.
    """
    gen = eta_rho.generator() if ensemble.thicken_dt > 0.0 else None
    subset = ensemble.samples if probe is None else ensemble.samples[:probe]
    values = []
    for s in subset:
        element = s.element
        if gen is not None and s.tau_offset != 0.0:
            element = element.compose(time_translation(-s.tau_offset, gen))
        values.append(-gamma_dt_kernel(t0, eta_rho, element, params))
    lowest = float(min(values))
    return TtrReport(min_over_u=lowest, pass_ok=lowest > positivity_floor,
                     values=tuple(values))


def ttr_check_tilde(rho_tilde, t_set, h, ensemble, params,
                    positivity_floor: float = 0.0, kernels=None) -> TtrReport:
    """As ttr_check, with the kernel over the first factor's fixed-time slice."""
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    kernel, mu, _ = kern.kernel_slice()
    values = tuple(float(fold_sum(mu * kernel[i])) for i in range(ensemble.k))
    lowest = float(min(values))
    return TtrReport(min_over_u=lowest, pass_ok=lowest > positivity_floor,
                     values=values)


# ---------------------------------------------------------------------------
# optimality conditions

def lagrange_c(t_set, h, beta, rho_tilde, ensemble, params, v_mask=None,
               kernels=None) -> float:
    """Stationarity multiplier: kernel-weighted mean of exp(beta*gamma)."""
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    kernel, mu, _ = kern.kernel_slice()
    h_tot = np.array([fold_sum(mu * kernel[i]) for i in range(ensemble.k)])
    w = ensemble.weights
    den = fold_sum(w * h_tot)
    scale = fold_sum(np.abs(w * h_tot))
    if scale == 0.0 or abs(den) < 1e-12 * scale:
        raise DegenerateKernel("slice kernel integral vanishes")
    gam = kern.gamma_values(resolve_front(rho_tilde, t_set), v_mask)
    arg = beta * gam
    shift = float(np.max(arg))
    num = fold_sum(w * (h_tot * np.exp(arg - shift)))
    return math.exp(shift) * (num / den)


def optimality_residual(t_set, h, beta, c, rho_tilde, ensemble, params,
                        v_mask=None, kernels=None) -> float:
    """Max over slice sites of |<kernel * (exp(beta gamma) - c)>|."""
    report = optimality_report(t_set, h, beta, c, rho_tilde, ensemble, params,
                               v_mask, kernels)
    return report["max_abs"]


def optimality_report(t_set, h, beta, c, rho_tilde, ensemble, params,
                      v_mask=None, kernels=None, control_variate=True) -> dict:
    """Per-site stationarity residuals with jackknife errors.

    The aggregate combination sum_x mu(x) kernel(x) (exp(beta gamma) - c) has
    exactly zero ensemble mean when c is the kernel-weighted multiplier, so
    it serves as a zero-mean regression control that strips the shared
    exponential noise from the per-site estimates without moving their means.
    """
    kern = kernels if kernels is not None else PairKernels(rho_tilde, ensemble, h, params)
    kernel, mu, idx = kern.kernel_slice()
    gam = kern.gamma_values(resolve_front(rho_tilde, t_set), v_mask)
    factor = np.exp(beta * gam) - c
    w = ensemble.weights
    control = None
    if control_variate and ensemble.k >= 4:
        control = np.array([fold_sum(mu * kernel[i]) for i in range(ensemble.k)]) * factor
    per_site = []
    per_site_se = []
    for col in range(kernel.shape[1]):
        values = kernel[:, col] * factor
        if control is not None:
            cov = np.cov(values, control, aweights=w)
            if cov[1, 1] > 0:
                values = values - (cov[0, 1] / cov[1, 1]) * control
        est = _weighted_mean_jackknife(values, w)
        per_site.append(est.mean)
        per_site_se.append(est.std_error)
    per_site = np.array(per_site)
    return {
        "max_abs": float(np.max(np.abs(per_site))),
        "per_site": per_site,
        "per_site_se": np.array(per_site_se),
        "slice_atom_indices": idx,
        "max_abs_over_se": float(np.max(np.abs(per_site) / np.maximum(per_site_se, 1e-300))),
    }


@dataclass(frozen=True)
class SecondVariationProbe:
    leading_beta2_coeff: float
    leading_mc_error: float
    total: float


def second_variation_probe(g, beta, ensemble, params, fd_step=None) -> SecondVariationProbe:
    """Quadratic response of the entropy exponential to a time-function tilt.

    ``g`` assigns a tilt rate to each spatial site of the vacuum slice.  The
    leading coefficient is the ensemble mean of D^2 exp(beta gamma) with
    D = sum_x (g(x) - c) kernel(x) mu(x) and the translation rate c chosen so
    constant tilts are projected out.  ``total`` is the centered finite
    difference of the exponential along the admissibility-projected family
    T_tau = t0 + tau g.
    """
    vacuum = ensemble.config
    g = np.asarray(g, dtype=float)
    kern = PairKernels(vacuum, ensemble, GroupElement.identity(vacuum.f), params)
    kernel, mu, idx = kern.kernel_slice()
    if g.shape != mu.shape:
        raise DimensionMismatch(f"g has shape {g.shape}, slice has {mu.shape}")
    spread = float(np.max(g) - np.min(g))
    if spread <= 1e-12 * (1.0 + float(np.max(np.abs(g)))):
        raise ConstantDirection("constant tilts are pure time translations")

    w = ensemble.weights
    h_bar = np.array([
        _weighted_mean_jackknife(kernel[:, col], w).mean for col in range(kernel.shape[1])
    ])
    den = fold_sum(h_bar * mu)
    if den == 0.0:
        raise DegenerateKernel("mean slice kernel vanishes")
    c = fold_sum(g * (h_bar * mu)) / den
    d_vals = np.array([fold_sum((g - c) * (kernel[i] * mu)) for i in range(ensemble.k)])

    t0 = ensemble.t0
    front0 = resolve_front(vacuum, PastSet.constant(vacuum.sites, t0))
    gam0 = kern.gamma_values(front0)
    est = _weighted_mean_jackknife(d_vals * d_vals * np.exp(beta * gam0), w)

    step = fd_step if fd_step is not None else 0.05 * vacuum.lattice_spacing
    site_g = {site: float(val) for site, val in zip(sorted(set(vacuum.site_labels[idx])), g)}

    def exponential(tau):
        t_tau = PastSet(values=tuple(t0 + tau * site_g[s] for s in vacuum.sites))
        projected, _, _ = _project_time_shift(t_tau, GroupElement.identity(vacuum.f),
                                              vacuum, ensemble, params, kernels=kern)
        gam = kern.gamma_values(past_fraction(vacuum, projected))
        m = _weighted_mean_jackknife(np.exp(beta * gam), w)
        return m.mean

    e_plus = exponential(step)
    e_zero = exponential(0.0)
    e_minus = exponential(-step)
    total = (e_plus - 2.0 * e_zero + e_minus) / (step * step)
    return SecondVariationProbe(
        leading_beta2_coeff=float(est.mean), leading_mc_error=float(est.std_error),
        total=float(total),
    )


@dataclass(frozen=True)
class HypothesisReport:
    regular_atoms: tuple
    qualifying_triples: tuple
    hypothesis_i: bool
    hypothesis_ii: str
    ell_eta_values: tuple


def hypothesis_diagnostics(config, t0, params, rank_tol=None) -> HypothesisReport:
    """Spin-space conditions behind the positivity theorem, on the t0 slice.

    Lists the slice-atom triples that are regular with pairwise trivial
    spin-space intersections; the level-set dimension condition is not
    machine-checkable, so only the level values are reported.
    """
    from .lagrangian import ell

    idx = config.slice_indices(t0)
    points = [config.atoms[i].point for i in idx]
    regular = [spin_space_dim(p, rank_tol) == 2 * config.n for p in points]
    triples = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            for k in range(j + 1, len(points)):
                if not (regular[i] and regular[j] and regular[k]):
                    continue
                if (spin_intersection_dim(points[i], points[j], rank_tol) == 0
                        and spin_intersection_dim(points[i], points[k], rank_tol) == 0
                        and spin_intersection_dim(points[j], points[k], rank_tol) == 0):
                    triples.append((int(idx[i]), int(idx[j]), int(idx[k])))
    ell_values = tuple(ell(p, config, params) for p in points)
    return HypothesisReport(
        regular_atoms=tuple(int(idx[i]) for i, r in enumerate(regular) if r),
        qualifying_triples=tuple(triples),
        hypothesis_i=bool(triples),
        hypothesis_ii="not machine-checkable",
        ell_eta_values=ell_values,
    )


# ---------------------------------------------------------------------------
# optimization over (h, T)

@dataclass(frozen=True)
class OptimizationResult:
    value: float
    mc_error: float
    h_star: GroupElement
    t_star: PastSet
    window_offset: float
    target_residual: float
    omega_residual: float
    converged: bool
    evaluations: int
    best_step: int


def _random_hermitian(rng, f):
    g = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
    h = 0.5 * (g + g.conj().T)
    norm = np.linalg.norm(h, ord=2)
    return h / norm if norm > 0 else h


def _exp_i(h):
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(1j * vals)) @ vecs.conj().T


def optimize_configuration(omega_tilde_target, beta, rho_tilde, ensemble, params,
                           budget: int = 24, seed: int = 0, v_mask=None,
                           t_init=None, h_eps: float = 0.2, t_eps=None,
                           max_projection_evals: int = 60,
                           h_subspace=None) -> OptimizationResult:
    """Budgeted coordinate descent over the group element and the time function.

    Group moves are geodesic steps h exp(i eps A) with random Hermitian A.
    After every group move the target constraint is restored by root-finding
    a small recentering of the comparison time (the fractional-cell boundary
    derivative makes that residual strictly monotone); the optimized-set
    constraint is restored by a global shift of the time function.  Step
    sizes halve on rejected proposals; the group walk restarts from a fresh
    Haar point when its step collapses.  The reported value is the best
    feasible one seen, so enlarging the budget never worsens it.
    """
    if ensemble.k == 0:
        raise EnsembleEmpty("empty ensemble")
    target_front = resolve_front(rho_tilde, omega_tilde_target)
    tol = admiss_tol(ensemble)
    # project strictly inside the tolerance so reported pairs clear the
    # admissibility check with margin instead of sitting on its boundary
    tol_project = 0.5 * tol
    f = ensemble.config.f
    dims = f if h_subspace is None else int(h_subspace)
    dt = rho_tilde.lattice_spacing
    sites = rho_tilde.sites
    t_eps = 0.25 * dt if t_eps is None else t_eps
    evaluations = 0

    def embed(block):
        if dims == f:
            return block
        out = np.zeros((f, f), dtype=np.complex128)
        out[:dims, :dims] = block
        return out

    def project_window(kern, s_start):
        """Comparison-time offset making the target pair admissible.

        Moving the comparison time t0 -> t0 + s sweeps second-factor cells
        across the boundary, so the residual's s-derivative is a negative
        sum of Lagrangian values: strictly monotone, cheap to root-find on
        the cached blocks.
        """
        nonlocal evaluations
        evals = [max_projection_evals]

        def residual(s):
            nonlocal evaluations
            if evals[0] <= 0:
                raise NoBracket("window-projection budget exhausted")
            evals[0] -= 1
            evaluations += 1
            return kern.mean_gamma(target_front, v_mask,
                                   back=kern.back_fraction(s))

        try:
            r0 = residual(s_start)
            if abs(r0) <= tol_project:
                return s_start, r0
            # residual decreases in s: root lies on the side its sign names
            bracket = None
            for side in ((1.0, -1.0) if r0 > 0 else (-1.0, 1.0)):
                prev_s, prev_r = s_start, r0
                for frac in (0.25, 0.5, 1.0, 2.0):
                    s = s_start + side * frac * dt
                    r = residual(s)
                    if math.copysign(1.0, r) != math.copysign(1.0, prev_r):
                        bracket = (prev_s, prev_r, s, r)
                        break
                    prev_s, prev_r = s, r
                if bracket:
                    break
            if bracket is None:
                return None
            out = _illinois(residual, *bracket, tol_f=tol_project,
                            max_iter=max_projection_evals)
        except NoBracket:
            return None
        if out is None:
            return None
        return out

    def evaluate(kern, t_start, offset):
        nonlocal evaluations
        back = kern.back_fraction(offset)
        t_proj, _, r_omega = _project_time_shift(
            t_start, None, rho_tilde, ensemble, params, v_mask=v_mask,
            tol=tol_project, kernels=kern, back=back)
        est = entropy_functional(t_proj, None, beta, rho_tilde, ensemble,
                                 params, v_mask=v_mask, kernels=kern, back=back)
        evaluations += 1
        return t_proj, r_omega, est

    # feasible start: identity first, then Haar restarts
    proj = None
    restart_idx = 0
    h0 = GroupElement.identity(f)
    while proj is None:
        kern0 = PairKernels(rho_tilde, ensemble, h0, params)
        proj = project_window(kern0, 0.0)
        if proj is not None:
            break
        restart_idx += 1
        if restart_idx > 8 or dims == 0:
            raise NoAdmissibleStart("no admissible group element found")
        mat = np.eye(f, dtype=np.complex128)
        mat[:dims, :dims] = haar_unitary(
            streams.stream(seed, "opt", "restart", restart_idx), dims)
        h0 = GroupElement(mat=mat)
    h, kern = h0, kern0
    offset, r_target = proj
    t0_set = t_init if t_init is not None else PastSet.constant(
        sites, ensemble.t0)
    try:
        t_star, r_omega, est = evaluate(kern, t0_set, offset)
    except NoBracket:
        raise NoAdmissibleStart("initial time function cannot satisfy the constraint")

    best = {
        "value": est.value, "err": est.mc_error, "h": h, "t": t_star,
        "offset": offset, "r_target": r_target, "r_omega": r_omega, "step": 0,
    }
    cur_t = t_star
    eps_h, eps_t = h_eps, t_eps
    last_improvement = 0

    for step in range(budget):
        rng = streams.stream(seed, "opt", "step", step)
        if step % 2 == 0 and dims > 0:
            direction = embed(_random_hermitian(rng, max(dims, 1)))
            cand = h.compose(GroupElement(mat=_exp_i(eps_h * direction)))
            kern2 = PairKernels(rho_tilde, ensemble, cand, params)
            evaluations += 1
            proj = project_window(kern2, offset)
            if proj is None:
                eps_h = max(eps_h * 0.5, 1e-6)
                continue
            off2, r_t2 = proj
            try:
                t2, r_o2, est2 = evaluate(kern2, cur_t, off2)
            except NoBracket:
                eps_h = max(eps_h * 0.5, 1e-6)
                continue
            if est2.value < best["value"]:
                h, kern, cur_t, offset = cand, kern2, t2, off2
                best = {"value": est2.value, "err": est2.mc_error, "h": cand,
                        "t": t2, "offset": off2, "r_target": r_t2,
                        "r_omega": r_o2, "step": step}
                last_improvement = step
            else:
                eps_h = max(eps_h * 0.5, 1e-6)
                if eps_h <= 2e-6:
                    eps_h = h_eps   # collapse: restart the walk size
        else:
            site_pos = (step // 2) % max(len(sites), 1)
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            values = list(cur_t.values)
            values[site_pos] = values[site_pos] + sign * eps_t
            try:
                t2, r_o2, est2 = evaluate(kern, PastSet(values=tuple(values)),
                                          offset)
            except NoBracket:
                eps_t = max(eps_t * 0.5, 1e-9 * dt)
                continue
            if est2.value < best["value"]:
                cur_t = t2
                best = {"value": est2.value, "err": est2.mc_error, "h": h,
                        "t": t2, "offset": offset,
                        "r_target": best["r_target"], "r_omega": r_o2,
                        "step": step}
                last_improvement = step
            else:
                eps_t = max(eps_t * 0.5, 1e-9 * dt)

    converged = (budget == 0) or (last_improvement < max(1, 3 * budget // 4))
    return OptimizationResult(
        value=best["value"], mc_error=best["err"], h_star=best["h"],
        t_star=best["t"], window_offset=best["offset"],
        target_residual=best["r_target"], omega_residual=best["r_omega"],
        converged=converged, evaluations=evaluations, best_step=best["step"],
    )


# ---------------------------------------------------------------------------
# pipelines

@dataclass(frozen=True, eq=False)
class EntropyReport:
    """Entropy estimate with its optimizer trace and provenance manifest."""

    value: float
    mc_error: float
    beta: float
    h_star: GroupElement
    t_star: PastSet
    window_offset: float             # comparison-time recentering
    admiss_residuals: tuple          # (target constraint, optimized constraint)
    admiss_tolerance: float
    verify_residuals: tuple | None   # same residuals on a fresh ensemble
    converged: bool
    jensen_ok: bool
    acceptance_rate: float
    gamma_scale: float
    evaluations: int
    seed_manifest: dict
    vacuum_checksum: str
    rho_checksum: str
    dt_schedule: tuple | None = None
    dt_values: tuple | None = None   # rows (dt, value, mc_error, running_min)
    liminf_estimate: float | None = None
    dims: int | None = None

    def to_dict(self) -> dict:
        import base64 as _b64
        return {
            "value": self.value,
            "mc_error": self.mc_error,
            "beta": self.beta,
            "h_star_b64": _b64.b64encode(
                np.ascontiguousarray(self.h_star.mat, dtype=np.complex128).tobytes()
            ).decode("ascii"),
            "t_star": list(self.t_star.values),
            "window_offset": self.window_offset,
            "admiss_residuals": list(self.admiss_residuals),
            "admiss_tolerance": self.admiss_tolerance,
            "verify_residuals": None if self.verify_residuals is None
            else list(self.verify_residuals),
            "converged": self.converged,
            "jensen_ok": self.jensen_ok,
            "acceptance_rate": self.acceptance_rate,
            "gamma_scale": self.gamma_scale,
            "evaluations": self.evaluations,
            "seed_manifest": self.seed_manifest,
            "vacuum_checksum": self.vacuum_checksum,
            "rho_checksum": self.rho_checksum,
            "dt_schedule": None if self.dt_schedule is None else list(self.dt_schedule),
            "dt_values": None if self.dt_values is None
            else [list(row) for row in self.dt_values],
            "liminf_estimate": self.liminf_estimate,
            "dims": self.dims,
        }


def liminf_tail_min(values) -> float:
    """Summary of a schedule trace: minimum over its final half."""
    values = list(values)
    return float(min(values[len(values) // 2:]))


def _jensen_ok(value, mc_error, beta, tol) -> bool:
    return value >= -(abs(beta) * tol + 3.0 * mc_error)


def _verify(result, rho_tilde, ensemble_fresh, params, v_mask) -> tuple:
    kern = PairKernels(rho_tilde, ensemble_fresh, result.h_star, params)
    back = kern.back_fraction(result.window_offset)
    front_t = resolve_front(rho_tilde, result.t_star)
    return (
        kern.mean_gamma(resolve_front(rho_tilde, ensemble_fresh.t0), v_mask, back=back),
        kern.mean_gamma(front_t, v_mask, back=back),
    )


def entropy_static(omega_tilde_target, beta, rho_tilde, eta_rho, t0, params,
                   seed, settings: EnsembleSettings = EnsembleSettings(),
                   budget: int = 24, v_mask=None, ensemble=None,
                   stream_tag: str = "entropy", sampler=None,
                   generator=None, h_subspace=None) -> EntropyReport:
    """Fixed-time entropy on a static vacuum: zero-thickness slice ensemble.

    The time-translation-regularity gate runs on a probe subset before any
    optimization; the optimum is re-verified on a fresh ensemble when
    ``settings.verify`` is set.  ``beta=None`` selects the scale-relative
    default 1 / (median |gamma| over Haar proposals).
    """
    if ensemble is None:
        ensemble = build_ensemble(eta_rho, t0, _tag_seed(seed, stream_tag, "ensemble"),
                                  params, settings, sampler=sampler,
                                  generator=generator)
    if beta is None:
        beta = 1.0 / ensemble.gamma_scale
    gate = ttr_check(eta_rho, t0, ensemble, params, probe=settings.ttr_probe,
                     positivity_floor=settings.positivity_floor)
    if not gate.pass_ok:
        raise RegularityGateFailed(
            f"slice kernel minimum {gate.min_over_u:.3e} is not positive"
        )
    result = optimize_configuration(
        omega_tilde_target, beta, rho_tilde, ensemble, params, budget=budget,
        seed=_tag_seed(seed, stream_tag, "opt"), v_mask=v_mask,
        h_subspace=h_subspace)
    verify = None
    if settings.verify:
        fresh = build_ensemble(eta_rho, t0, _tag_seed(seed, stream_tag, "verify"),
                               params, settings, sampler=sampler,
                               generator=generator)
        verify = _verify(result, rho_tilde, fresh, params, v_mask)
    tol = admiss_tol(ensemble)
    return EntropyReport(
        value=result.value, mc_error=result.mc_error, beta=beta,
        h_star=result.h_star, t_star=result.t_star,
        window_offset=result.window_offset,
        admiss_residuals=(result.target_residual, result.omega_residual),
        admiss_tolerance=tol, verify_residuals=verify,
        converged=result.converged,
        jensen_ok=_jensen_ok(result.value, result.mc_error, beta, tol),
        acceptance_rate=ensemble.acceptance_rate,
        gamma_scale=ensemble.gamma_scale, evaluations=result.evaluations,
        seed_manifest=streams.manifest(seed, (stream_tag, "ensemble"),
                                       (stream_tag, "opt"), (stream_tag, "verify")),
        vacuum_checksum=eta_rho.checksum, rho_checksum=rho_tilde.checksum,
    )


def entropy_dt_limit(omega_tilde_target, beta, rho_tilde, eta_rho, t0, params,
                     dt_schedule, seed,
                     settings: EnsembleSettings = EnsembleSettings(),
                     budget: int = 24, v_mask=None,
                     stream_tag: str = "entropy-dt") -> EntropyReport:
    """Shrinking-window entropy: one optimization per thickening, min-tracked.

    The schedule must be strictly decreasing with at least three entries.
    The summary value is the minimum over the final half of the trace; the
    full trace and its running minimum are reported alongside.
    """
    schedule = [float(d) for d in dt_schedule]
    if len(schedule) < 3 or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("dt schedule must be strictly decreasing with >= 3 points")
    rows = []
    best_result = None
    gate_done = False
    running = math.inf
    for i, dt in enumerate(schedule):
        ensemble = build_ensemble(eta_rho, t0, _tag_seed(seed, stream_tag, "dt", i),
                                  params, settings, thicken_dt=dt)
        if not gate_done:
            gate = ttr_check(eta_rho, t0, ensemble, params,
                             probe=settings.ttr_probe,
                             positivity_floor=settings.positivity_floor)
            if not gate.pass_ok:
                raise RegularityGateFailed(
                    f"slice kernel minimum {gate.min_over_u:.3e} is not positive")
            gate_done = True
        result = optimize_configuration(
            omega_tilde_target, beta, rho_tilde, ensemble, params, budget=budget,
            seed=_tag_seed(seed, stream_tag, "opt", i), v_mask=v_mask)
        running = min(running, result.value)
        rows.append((dt, result.value, result.mc_error, running))
        if best_result is None or result.value < best_result[1].value:
            best_result = (ensemble, result)
    estimate = liminf_tail_min([r[1] for r in rows])
    ensemble, result = best_result
    verify = None
    if settings.verify:
        fresh = build_ensemble(eta_rho, t0, _tag_seed(seed, stream_tag, "verify"),
                               params, settings, thicken_dt=ensemble.thicken_dt)
        verify = _verify(result, rho_tilde, fresh, params, v_mask)
    tol = admiss_tol(ensemble)
    err_at_tail = max(r[2] for r in rows[len(rows) // 2:])
    return EntropyReport(
        value=estimate, mc_error=err_at_tail, beta=beta,
        h_star=result.h_star, t_star=result.t_star,
        window_offset=result.window_offset,
        admiss_residuals=(result.target_residual, result.omega_residual),
        admiss_tolerance=tol, verify_residuals=verify,
        converged=result.converged,
        jensen_ok=_jensen_ok(estimate, err_at_tail, beta, tol),
        acceptance_rate=ensemble.acceptance_rate,
        gamma_scale=ensemble.gamma_scale, evaluations=result.evaluations,
        seed_manifest=streams.manifest(seed, (stream_tag, "dt", "*"),
                                       (stream_tag, "opt", "*"),
                                       (stream_tag, "verify")),
        vacuum_checksum=eta_rho.checksum, rho_checksum=rho_tilde.checksum,
        dt_schedule=tuple(schedule), dt_values=tuple(rows),
        liminf_estimate=estimate,
    )


def exhaustion_sweep(omega_tilde_target, beta, rho_tilde, eta_rho, t0, params,
                     dims_schedule, seed,
                     settings: EnsembleSettings = EnsembleSettings(),
                     budget: int = 24, v_mask=None,
                     stream_tag: str = "entropy-dims") -> list:
    """Fixed-time entropy against an increasing family of block subgroups.

    Each entry reruns the static pipeline with proposals restricted to the
    leading ``dims`` directions and the translation generator compressed onto
    that block.  dims = 0 degenerates to the identity-only group.
    """
    dims_list = [int(d) for d in dims_schedule]
    if any(b <= a for a, b in zip(dims_list, dims_list[1:])):
        raise ValueError("dims schedule must be strictly increasing")
    if dims_list and dims_list[-1] > eta_rho.f:
        raise DimensionMismatch("dims exceed the Hilbert dimension")
    reports = []
    for i, dims in enumerate(dims_list):
        sampler = subgroup_restriction(dims, eta_rho.f)
        generator = sampler.compress_generator(eta_rho.generator())
        sub_settings = settings
        if dims == 0:
            # identity-only group: a two-element (symmetrized) ensemble suffices
            sub_settings = EnsembleSettings(
                k=2, dt_max_fraction=settings.dt_max_fraction,
                slice_tol=settings.slice_tol, symmetrize=True,
                weight_mode=settings.weight_mode,
                pilot_count=settings.pilot_count, ttr_probe=settings.ttr_probe,
                positivity_floor=settings.positivity_floor,
                verify=settings.verify)
        report = entropy_static(
            omega_tilde_target, beta, rho_tilde, eta_rho, t0, params, seed,
            settings=sub_settings, budget=budget, v_mask=v_mask,
            stream_tag=f"{stream_tag}-{i}", sampler=sampler, generator=generator,
            h_subspace=dims)
        reports.append(dataclasses.replace(report, dims=dims))
    return reports


def _tag_seed(seed, *tags) -> int:
    """Fold stream tags into a derived integer master seed."""
    words = [streams._tag_word(t) for t in tags]
    acc = int(seed) & 0xFFFFFFFFFFFFFFFF
    for w in words:
        acc = (acc * 0x9E3779B97F4A7C15 + w) & 0xFFFFFFFFFFFFFFFF
    return acc
