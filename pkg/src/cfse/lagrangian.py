"""Spectral Lagrangian, action on discrete configurations, EL residuals.

The pair functional combines the spread of the closed-chain eigenvalue
moduli with a kappa-weighted square of their sum,

    L(x, y) = sum |l_i|^2 - (sum |l_i|)^2 / (2n) + kappa (sum |l_i|)^2,

which is the expanded form of the (1/4n) double sum over squared modulus
differences plus the kappa term.  All heavy evaluation goes through one
batched block routine so that single-pair calls and configuration-sized
blocks are the same floating-point computation.
"""

from dataclasses import dataclass

import numpy as np

from .configuration import DiscreteConfiguration
from .errors import DimensionMismatch
from .operators import OperatorPoint, chain_eigenvalue_stack, random_point
from . import streams


@dataclass(frozen=True)
class ModelParams:
    """kappa: boundedness multiplier (>0); s_param: volume multiplier (>=0)."""

    kappa: float
    n: int
    s_param: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.s_param < 0:
            raise ValueError("s_param must be nonnegative")


def lagrangian_from_moduli(moduli: np.ndarray, n: int, kappa: float) -> np.ndarray:
    """Pair functional from |eigenvalue| arrays whose last axis has length 2n."""
    s1 = moduli.sum(axis=-1)
    s2 = (moduli * moduli).sum(axis=-1)
    return s2 - s1 * s1 / (2.0 * n) + kappa * (s1 * s1)


def _stacks(obj):
    if isinstance(obj, OperatorPoint):
        return obj.chain_scaled[None], obj.chain_basis[None], obj.f, obj.n
    if isinstance(obj, DiscreteConfiguration):
        return obj.scaled_stack, obj.basis_stack, obj.f, obj.n
    raise TypeError(f"expected OperatorPoint or DiscreteConfiguration, got {type(obj)}")


def lagrangian_block(front, back, params: ModelParams, conj=None) -> np.ndarray:
    """Matrix of L(x_a, W y_b W^-1) over all pairs of two atom families.

    ``front``/``back`` are points or configurations; ``conj`` is an optional
    f x f unitary W applied to the second family.  Deterministic: fixed
    einsum contractions, no threading-dependent reductions.
    """
    sa, ba, f1, n1 = _stacks(front)
    sb, bb, f2, n2 = _stacks(back)
    if f1 != f2 or n1 != n2:
        raise DimensionMismatch(f"(f={f1}, n={n1}) vs (f={f2}, n={n2})")
    if conj is not None:
        w = np.asarray(getattr(conj, "mat", conj), dtype=np.complex128)
        sb = np.einsum("ij,bjk->bik", w, sb)
        bb = np.einsum("ij,bjk->bik", w, bb)
    vals = chain_eigenvalue_stack(sa, ba, sb, bb)
    return lagrangian_from_moduli(np.abs(vals), n1, params.kappa)


def kappa_lagrangian(x: OperatorPoint, y: OperatorPoint, params: ModelParams) -> float:
    """L(x, y); symmetric and unitarily invariant."""
    return float(lagrangian_block(x, y, params)[0, 0])


def fold_sum(values: np.ndarray) -> float:
    """Left-to-right sequential sum in C order; the canonical reduction."""
    flat = np.ascontiguousarray(values).ravel()
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


def causal_action(config: DiscreteConfiguration, params: ModelParams) -> float:
    """Full double sum sum_{a,b} w_a w_b L(x_a, x_b), diagonal included."""
    if not config.atoms:
        return 0.0
    block = lagrangian_block(config, config, params)
    w = config.weights
    return fold_sum(w[:, None] * (w[None, :] * block))


def ell(x: OperatorPoint, config: DiscreteConfiguration, params: ModelParams) -> float:
    """Euler-Lagrange function sum_b w_b L(x, x_b) - s_param."""
    if not config.atoms:
        return -params.s_param
    row = lagrangian_block(x, config, params)[0]
    return fold_sum(config.weights * row) - params.s_param


def calibrate_s(config: DiscreteConfiguration, params: ModelParams) -> float:
    """Value of s_param making ell >= 0 on the atoms with equality somewhere."""
    if not config.atoms:
        return 0.0
    block = lagrangian_block(config, config, params)
    sums = [fold_sum(config.weights * block[a]) for a in range(len(config.atoms))]
    return float(min(sums))


def el_residual(config: DiscreteConfiguration, params: ModelParams,
                probe_count: int = 200, seed: int = 0) -> dict:
    """EL diagnostics: max |ell| on the atoms, min ell over a probe set.

    The probe set is the atoms plus ``probe_count`` seeded random valid
    points; a configuration consistent with the EL equations has both
    numbers near zero from the right side.
    """
    if not config.atoms:
        return {"max_abs_on_m": 0.0, "min_off_m_probe": 0.0}
    block = lagrangian_block(config, config, params)
    on_m = np.array([
        fold_sum(config.weights * block[a]) - params.s_param
        for a in range(len(config.atoms))
    ])
    rng = streams.stream(seed, "el-probe")
    probes = [random_point(config.f, config.n, rng) for _ in range(probe_count)]
    off_m = [ell(p, config, params) for p in probes]
    return {
        "max_abs_on_m": float(np.max(np.abs(on_m))),
        "min_off_m_probe": float(min(on_m.min(), min(off_m) if off_m else np.inf)),
    }
