"""Nonlinear surface layer integrals in all variants.

Every variant reduces to the same accumulation: a plus-term and a minus-term,
each the row-major left fold over products

    front_weight[a] * (back_weight[b] * L[a, b]),

with value = term_plus - term_minus.  Masks may be boolean or fractional
(floats in [0, 1]); a boolean mask is the exact 0/1 special case.  A naive
quadruple loop accumulating the same products in the same (a, b) order
reproduces every value bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .configuration import CutoffSpec, DiscreteConfiguration, past_mask
from .errors import DimensionMismatch, NoSliceAtoms
from .lagrangian import ModelParams, fold_sum, lagrangian_block


@dataclass(frozen=True)
class SurfaceLayerValue:
    value: float
    term_plus: float
    term_minus: float


def _weights_like(mask, count, name) -> np.ndarray:
    if mask is None:
        return np.ones(count, dtype=float)
    arr = np.asarray(mask, dtype=float)
    if arr.shape != (count,):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({count},)")
    return arr


def gamma_terms(block, front_plus, front_minus, back_plus, back_minus) -> SurfaceLayerValue:
    """Canonical two-term accumulation over a Lagrangian block."""
    plus = fold_sum(front_plus[:, None] * (back_plus[None, :] * block))
    minus = fold_sum(front_minus[:, None] * (back_minus[None, :] * block))
    return SurfaceLayerValue(value=plus - minus, term_plus=plus, term_minus=minus)


def gamma(mask_tilde, mask, rho_tilde: DiscreteConfiguration,
          rho: DiscreteConfiguration, u, params: ModelParams,
          v_mask=None) -> SurfaceLayerValue:
    """Surface layer integral between two configurations.

    ``mask_tilde`` selects the past of the first factor, ``mask`` the past of
    the second; the complement sums use (1 - mask).  ``u`` conjugates the
    second factor inside the Lagrangian.  ``v_mask`` optionally restricts the
    first-factor atoms to a region.
    """
    a_count, b_count = len(rho_tilde.atoms), len(rho.atoms)
    mt = _weights_like(mask_tilde, a_count, "mask_tilde")
    mb = _weights_like(mask, b_count, "mask")
    vm = _weights_like(v_mask, a_count, "v_mask")
    if a_count == 0 or b_count == 0:
        return SurfaceLayerValue(0.0, 0.0, 0.0)
    block = lagrangian_block(rho_tilde, rho, params, conj=u)
    wt = rho_tilde.weights
    w = rho.weights
    return gamma_terms(
        block,
        front_plus=mt * (vm * wt),
        front_minus=(1.0 - mt) * (vm * wt),
        back_plus=(1.0 - mb) * w,
        back_minus=mb * w,
    )


def gamma_tt(t, t_prime, eta_rho: DiscreteConfiguration, u,
             params: ModelParams) -> SurfaceLayerValue:
    """Hard-cutoff variant: pasts at times t and t_prime on one measure."""
    return gamma(past_mask(eta_rho, t), past_mask(eta_rho, t_prime),
                 eta_rho, eta_rho, u, params)


def gamma_soft(t, t_prime, config: DiscreteConfiguration, cut: CutoffSpec, u,
               params: ModelParams) -> SurfaceLayerValue:
    """Softened variant: the hard pasts are replaced by the window profile."""
    eta_t = cut.soft_eta(t, config.times)
    eta_tp = cut.soft_eta(t_prime, config.times)
    return gamma(eta_t, eta_tp, config, config, u, params)


def gamma_local(mask_tilde, mask, v_mask, rho_tilde, rho, u,
                params: ModelParams) -> SurfaceLayerValue:
    """Surface layer integral with the first factor restricted to a region."""
    return gamma(mask_tilde, mask, rho_tilde, rho, u, params, v_mask=v_mask)


def gamma_dt_kernel(t0, config: DiscreteConfiguration, u,
                    params: ModelParams) -> float:
    """Analytic slope of gamma_tt in its second time at t_prime = t0.

    Returns - sum over slice atoms a of mu_a * sum_b w_b L(U x_a U^-1, y_b),
    where mu is the spatial slice measure (atom weight per unit lattice
    time).  Matches the finite-difference slope of gamma_tt up to lattice
    resolution.
    """
    idx = config.slice_indices(t0)
    if idx.size == 0:
        raise NoSliceAtoms(f"no atoms at time {t0}")
    u_mat = np.asarray(getattr(u, "mat", u), dtype=np.complex128)
    # L(U x U^-1, y) = L(x, U^-1 y U): conjugate the second factor by U^H
    block = lagrangian_block(config, config, params, conj=u_mat.conj().T)
    mu = config.slice_measure(t0)
    w = config.weights
    kernel = np.array([fold_sum(w * block[a]) for a in idx])
    return -fold_sum(mu * kernel)


@dataclass(frozen=True)
class ImproperConvergenceReport:
    per_site_tails: tuple   # (site, past-side sum, future-side sum) per site
    total: float


def improper_convergence_report(mask_tilde, rho_tilde: DiscreteConfiguration,
                                rho_truncated: DiscreteConfiguration, u,
                                t0, params: ModelParams) -> ImproperConvergenceReport:
    """Windowed tails of the two semi-infinite time sums, per spatial site.

    For each site y of the truncated second factor, the future-side integral
    sums dt * L over the past of the first factor against times > t0, the
    past-side integral over the complement against times <= t0.  The total is
    the spatial sum of |difference| against the site measure.  On a finite
    periodic configuration the tails are the full sums.
    """
    a_count = len(rho_tilde.atoms)
    mt = _weights_like(mask_tilde, a_count, "mask_tilde")
    if a_count == 0 or not rho_truncated.atoms:
        return ImproperConvergenceReport(per_site_tails=(), total=0.0)
    block = lagrangian_block(rho_tilde, rho_truncated, params, conj=u)
    wt = rho_tilde.weights
    dt = rho_truncated.lattice_spacing
    times = rho_truncated.times
    labels = rho_truncated.site_labels
    per_site = []
    total = 0.0
    for site in rho_truncated.sites:
        at_site = labels == site
        future = np.flatnonzero(at_site & (times > t0))
        past = np.flatnonzero(at_site & (times <= t0))
        i_plus = fold_sum((mt * wt)[:, None] * (dt * block[:, future]))
        i_minus = fold_sum(((1.0 - mt) * wt)[:, None] * (dt * block[:, past]))
        mu_site = float(rho_truncated.weights[at_site].mean()) / dt
        per_site.append((int(site), float(i_plus), float(i_minus)))
        total += mu_site * abs(i_plus - i_minus)
    return ImproperConvergenceReport(per_site_tails=tuple(per_site), total=float(total))
