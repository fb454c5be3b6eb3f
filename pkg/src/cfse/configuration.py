"""Discrete spacetime configurations with product time structure.

A configuration is a weighted family of atoms (t, site, weight, operator
point) on a time lattice, optionally periodic and optionally static under a
one-parameter unitary group with integer frequencies.  Atoms are kept in
(time, site) order; every summation downstream folds over that order.
"""

import base64
import hashlib
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import InvalidSeed, NonPeriodicGenerator, ValidationFailure
from .operators import OperatorPoint, conjugate, make_point
from . import streams

TIME_MATCH_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class SpacetimeAtom:
    point: OperatorPoint
    t: float
    site: int
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise ValidationFailure(f"atom weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class StaticStructure:
    """Generator data of the one-parameter group the vacuum is built from."""

    freqs: tuple          # integer frequency per Hilbert-space direction
    site_weights: tuple
    n_t: int


@dataclass(frozen=True, eq=False)
class DiscreteConfiguration:
    atoms: tuple
    f: int
    n: int
    period: float | None = None
    static: StaticStructure | None = None
    time_window: tuple | None = None

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([a.t for a in self.atoms], dtype=float)

    @cached_property
    def site_labels(self) -> np.ndarray:
        return np.array([a.site for a in self.atoms], dtype=int)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms], dtype=float)

    @cached_property
    def t_lattice(self) -> np.ndarray:
        return np.unique(self.times)

    @cached_property
    def sites(self) -> tuple:
        return tuple(sorted(set(int(a.site) for a in self.atoms)))

    @cached_property
    def lattice_spacing(self) -> float:
        lat = self.t_lattice
        if len(lat) >= 2:
            return float(np.min(np.diff(lat)))
        if self.period:
            return float(self.period)
        return 1.0

    @cached_property
    def basis_stack(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, self.f, 2 * self.n), dtype=np.complex128)
        return np.stack([a.point.chain_basis for a in self.atoms])

    @cached_property
    def scaled_stack(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, self.f, 2 * self.n), dtype=np.complex128)
        return np.stack([a.point.chain_scaled for a in self.atoms])

    @cached_property
    def volume(self) -> float:
        return float(self.weights.sum()) if self.atoms else 0.0

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.f, self.n, self.period, self.time_window)).encode())
        for a in self.atoms:
            h.update(np.float64(a.t).tobytes())
            h.update(int(a.site).to_bytes(8, "little", signed=True))
            h.update(np.float64(a.weight).tobytes())
            h.update(np.ascontiguousarray(a.point.mat).tobytes())
        return h.hexdigest()

    def generator(self) -> np.ndarray:
        """Diagonal infinitesimal generator of the declared time translations."""
        if self.static is None or self.period is None:
            raise NonPeriodicGenerator("configuration carries no static structure")
        freqs = np.asarray(self.static.freqs, dtype=float)
        return np.diag(2.0 * np.pi * freqs / self.period).astype(np.complex128)

    def slice_indices(self, t0: float) -> np.ndarray:
        scale = max(abs(self.period) if self.period else 1.0, 1.0)
        return np.flatnonzero(np.abs(self.times - t0) <= TIME_MATCH_RTOL * scale)

    def slice_measure(self, t0: float) -> np.ndarray:
        """Spatial weights of the t0 slice: atom weight per unit lattice time."""
        idx = self.slice_indices(t0)
        return self.weights[idx] / self.lattice_spacing


def make_configuration(atoms, f, n, period=None, static=None, time_window=None):
    """Canonical constructor: atoms sorted by (time, site)."""
    ordered = tuple(sorted(atoms, key=lambda a: (a.t, a.site)))
    for a in ordered:
        if a.point.f != f or a.point.n != n:
            raise ValidationFailure("atom dimensions disagree with the configuration")
    return DiscreteConfiguration(
        atoms=ordered, f=f, n=n, period=period, static=static,
        time_window=time_window,
    )


def build_static_vacuum(f, n, generator_spec, seeds, n_t, period,
                        site_weights=None) -> DiscreteConfiguration:
    """Static time-periodic vacuum: each site's seed swept along its orbit.

    ``generator_spec`` lists one integer frequency per Hilbert-space
    direction, so the group closes after one period exactly.  Atom weights
    are site_weight * period / n_t, making the total volume
    period * sum(site_weights).
    """
    freqs = list(generator_spec)
    for k in freqs:
        if abs(k - round(k)) > 1e-12:
            raise NonPeriodicGenerator(f"frequency {k} is not an integer")
    freqs = [int(round(k)) for k in freqs]
    if len(freqs) != f:
        raise NonPeriodicGenerator(f"need {f} frequencies, got {len(freqs)}")
    if n_t < 2:
        raise ValidationFailure("n_t must be at least 2")
    if not period > 0:
        raise ValidationFailure("period must be positive")
    seeds = list(seeds)
    for s in seeds:
        if not isinstance(s, OperatorPoint):
            raise InvalidSeed("seeds must be OperatorPoint instances")
        if s.f != f or s.n != n:
            raise InvalidSeed("seed dimensions disagree with the vacuum")
    if site_weights is None:
        site_weights = [1.0] * len(seeds)
    site_weights = [float(w) for w in site_weights]
    if len(site_weights) != len(seeds):
        raise ValidationFailure("one site weight per seed required")

    omega = 2.0 * np.pi * np.asarray(freqs, dtype=float) / period
    dt = period / n_t
    atoms = []
    for m in range(n_t):
        t = m * dt
        u_t = np.diag(np.exp(-1j * t * omega))
        for s_idx, seed in enumerate(seeds):
            atoms.append(SpacetimeAtom(
                point=conjugate(u_t, seed), t=t, site=s_idx,
                weight=site_weights[s_idx] * dt,
            ))
    static = StaticStructure(freqs=tuple(freqs), site_weights=tuple(site_weights),
                             n_t=n_t)
    return make_configuration(atoms, f, n, period=period, static=static)


def pushforward(u, config: DiscreteConfiguration) -> DiscreteConfiguration:
    """Conjugate every atom's operator by u; times and weights unchanged."""
    atoms = tuple(
        replace(a, point=conjugate(u, a.point)) for a in config.atoms
    )
    return DiscreteConfiguration(
        atoms=atoms, f=config.f, n=config.n, period=config.period,
        static=config.static, time_window=config.time_window,
    )


# ---------------------------------------------------------------------------
# cutoff windows

@dataclass(frozen=True)
class CutoffSpec:
    """Time window inserted into surface layer integrals.

    Hard mode: trapezoid equal to one on (t0 - delta, t0 + delta), vanishing
    on the first and last ``ramp_fraction`` of the period.  Soft mode: for a
    window time t, eta_t is a logistic past indicator of steepness
    1/softness, so d(eta_t)/dt >= 0 pointwise.
    """

    t0: float
    delta: float
    mode: str = "hard"
    ramp_fraction: float = 0.1
    softness: float = 0.25

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationFailure("delta must be positive")
        if self.mode not in ("hard", "soft"):
            raise ValidationFailure(f"unknown cutoff mode {self.mode!r}")
        if not 0 <= self.ramp_fraction < 0.5:
            raise ValidationFailure("ramp_fraction must lie in [0, 0.5)")

    def hard_eta(self, times, period: float) -> np.ndarray:
        lo = self.ramp_fraction * period
        hi = (1.0 - self.ramp_fraction) * period
        p_lo = self.t0 - self.delta
        p_hi = self.t0 + self.delta
        if not (lo <= p_lo and p_hi <= hi):
            raise ValidationFailure(
                "cutoff plateau must sit inside the nonvanishing window"
            )
        knots_t = [lo, p_lo, p_hi, hi]
        knots_v = [0.0, 1.0, 1.0, 0.0]
        return np.interp(np.asarray(times, dtype=float), knots_t, knots_v,
                         left=0.0, right=0.0)

    def soft_eta(self, t, times) -> np.ndarray:
        z = (t - np.asarray(times, dtype=float)) / self.softness
        return 1.0 / (1.0 + np.exp(-z))

    def soft_theta(self, t, times) -> np.ndarray:
        e = self.soft_eta(t, times)
        return e * (1.0 - e) / self.softness


def apply_cutoff(config: DiscreteConfiguration, cut: CutoffSpec) -> DiscreteConfiguration:
    """Multiply atom weights by the hard window; drop atoms scaled to zero."""
    if config.period is None:
        raise ValidationFailure("hard cutoff requires a periodic configuration")
    eta = cut.hard_eta(config.times, config.period)
    atoms = tuple(
        replace(a, weight=a.weight * e)
        for a, e in zip(config.atoms, eta) if e > 0.0
    )
    return DiscreteConfiguration(
        atoms=atoms, f=config.f, n=config.n, period=config.period,
        static=config.static, time_window=config.time_window,
    )


# ---------------------------------------------------------------------------
# past sets

@dataclass(frozen=True)
class PastSet:
    """Time function T on the spatial sites; induces {t <= T(site)}."""

    values: tuple

    @classmethod
    def constant(cls, sites, t) -> "PastSet":
        return cls(values=tuple(float(t) for _ in sites))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def shifted(self, s: float) -> "PastSet":
        return PastSet(values=tuple(v - s for v in self.values))


def _threshold_per_atom(config: DiscreteConfiguration, omega) -> np.ndarray:
    if isinstance(omega, PastSet):
        lookup = {site: v for site, v in zip(config.sites, omega.values)}
        if len(omega.values) != len(config.sites):
            raise ValidationFailure(
                f"past set has {len(omega.values)} sites, configuration {len(config.sites)}"
            )
        return np.array([lookup[int(s)] for s in config.site_labels], dtype=float)
    return np.full(len(config.atoms), float(omega))


def past_mask(config: DiscreteConfiguration, omega) -> np.ndarray:
    """Boolean mask: atom selected iff t <= T(site) (ties included)."""
    if len(config.atoms) == 0:
        return np.zeros(0, dtype=bool)
    return config.times <= _threshold_per_atom(config, omega)


def past_fraction(config: DiscreteConfiguration, omega) -> np.ndarray:
    """Fractional past weights: atom at lattice time t owns the cell (t-dt, t].

    Piecewise linear in the time function, equal to the hard mask whenever
    T sits on the lattice; this is what makes root finding on time shifts
    well posed on a discrete measure.
    """
    if len(config.atoms) == 0:
        return np.zeros(0, dtype=float)
    thr = _threshold_per_atom(config, omega)
    dt = config.lattice_spacing
    return np.clip((thr - config.times) / dt + 1.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# perturbation

def _hermitian(rng, f):
    g = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
    h = 0.5 * (g + g.conj().T)
    norm = np.linalg.norm(h, ord=2)
    return h / norm if norm > 0 else h


def _exp_i_hermitian(h):
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(1j * vals)) @ vecs.conj().T


def perturb(config: DiscreteConfiguration, strength: float, seed: int,
            max_retries: int = 3) -> DiscreteConfiguration:
    """Conjugate each atom by a site/time-correlated random unitary.

    The rotation generator varies smoothly over the period and is correlated
    across atoms through a shared global component, so nearby atoms move
    together.  Conjugation preserves trace and signature; re-validation after
    the move is kept as a guard and retried at half strength if it ever
    trips.
    """
    if strength < 0:
        raise ValidationFailure("strength must be nonnegative")
    if strength == 0 or not config.atoms:
        return config
    a_global = _hermitian(streams.stream(seed, "perturb", "global"), config.f)
    per_site = {}
    for s in config.sites:
        rs = streams.stream(seed, "perturb", "site", s)
        per_site[s] = (_hermitian(rs, config.f), _hermitian(rs, config.f))
    period = config.period if config.period else max(config.t_lattice[-1], 1.0)

    atoms = []
    for a in config.atoms:
        phase = 2.0 * np.pi * a.t / period
        a_s, b_s = per_site[int(a.site)]
        direction = a_global + math.cos(phase) * a_s + math.sin(phase) * b_s
        eps = strength
        for attempt in range(max_retries):
            u = _exp_i_hermitian(eps * direction)
            try:
                new_point = make_point(u @ a.point.mat @ u.conj().T, config.n)
                break
            except Exception:
                eps *= 0.5
        else:
            raise ValidationFailure(
                f"atom at (t={a.t}, site={a.site}) failed re-validation"
            )
        atoms.append(replace(a, point=new_point))
    return DiscreteConfiguration(
        atoms=tuple(atoms), f=config.f, n=config.n, period=config.period,
        static=config.static, time_window=config.time_window,
    )


# ---------------------------------------------------------------------------
# serialization

def _encode_f64(arr) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode("ascii")


def _decode_f64(text, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=np.float64).reshape(shape).copy()


def to_dict(config: DiscreteConfiguration) -> dict:
    doc = {
        "f": config.f,
        "n": config.n,
        "period": config.period,
        "atoms": [
            {
                "t": a.t,
                "site": int(a.site),
                "weight": a.weight,
                "mat_re": _encode_f64(a.point.mat.real),
                "mat_im": _encode_f64(a.point.mat.imag),
            }
            for a in config.atoms
        ],
    }
    if config.static is not None:
        doc["generator_freqs"] = list(config.static.freqs)
        doc["site_weights"] = list(config.static.site_weights)
        doc["n_t"] = config.static.n_t
    if config.time_window is not None:
        doc["time_window"] = list(config.time_window)
    return doc


def from_dict(doc: dict) -> DiscreteConfiguration:
    f, n = int(doc["f"]), int(doc["n"])
    atoms = []
    for rec in doc["atoms"]:
        mat = _decode_f64(rec["mat_re"], (f, f)) + 1j * _decode_f64(rec["mat_im"], (f, f))
        atoms.append(SpacetimeAtom(
            point=make_point(mat, n), t=float(rec["t"]), site=int(rec["site"]),
            weight=float(rec["weight"]),
        ))
    static = None
    if "generator_freqs" in doc:
        static = StaticStructure(
            freqs=tuple(int(k) for k in doc["generator_freqs"]),
            site_weights=tuple(float(w) for w in doc["site_weights"]),
            n_t=int(doc["n_t"]),
        )
    window = tuple(doc["time_window"]) if "time_window" in doc else None
    return make_configuration(
        atoms, f, n,
        period=None if doc["period"] is None else float(doc["period"]),
        static=static, time_window=window,
    )


def to_json(config: DiscreteConfiguration) -> str:
    return json.dumps(to_dict(config), sort_keys=True, indent=1)


def from_json(text: str) -> DiscreteConfiguration:
    return from_dict(json.loads(text))
