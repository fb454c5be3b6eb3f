"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The standard system everywhere is the f=4, n=1 static vacuum with 4 sites and
8 times (period 8, lattice step 1), cut off around t0 = 4 (conftest fixtures).
beta conventions follow the fixed-time run: beta = 1 / (median |gamma| over
Haar proposals), the ensemble's recorded scale.
"""

import json
import time

import numpy as np
import pytest

import cfse
from cfse import streams
from cfse.configuration import PastSet, past_mask
from cfse.entropy import (
    EnsembleSettings,
    PairKernels,
    admiss_tol,
    entropy_dt_limit,
    entropy_functional,
    entropy_static,
    lagrange_c,
    optimality_report,
    optimize_configuration,
    partition_function,
    second_variation_probe,
)
from cfse.group import GroupElement, slice_residual
from cfse.lagrangian import kappa_lagrangian
from cfse.operators import conjugate, haar_unitary, random_point
from cfse.surface_layer import gamma, gamma_local

ID4 = GroupElement.identity(4)


def verdict(number, description, ok):
    print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {description}")
    assert ok, f"criterion {number} failed: {description}"


def test_criterion_1_vacuum_zero_entropy(eta_rho, params):
    started = time.time()
    report = entropy_static(4.0, None, eta_rho, eta_rho, 4.0, params, seed=101,
                            settings=EnsembleSettings(k=400), budget=8,
                            ensemble=None)
    elapsed = time.time() - started
    ok = abs(report.value) <= 3 * report.mc_error and elapsed <= 120.0
    verdict(1, f"vacuum entropy {report.value:.3e} within 3*{report.mc_error:.3e}, "
               f"{elapsed:.0f}s <= 120s", ok)


@pytest.fixture(scope="module")
def beta400(ensemble400):
    return 1.0 / ensemble400.gamma_scale


def test_criterion_1_beta_convention(eta_rho, params, ensemble400, beta400):
    # rerun the criterion-1 system at the stated beta on the shared ensemble
    report = entropy_static(4.0, beta400, eta_rho, eta_rho, 4.0, params,
                            seed=102, settings=EnsembleSettings(k=400, verify=False),
                            budget=8, ensemble=ensemble400)
    ok = abs(report.value) <= 3 * report.mc_error
    verdict(1, f"(beta = 1/median|gamma|) value {report.value:.3e} "
               f"within 3*{report.mc_error:.3e}", ok)


def test_criterion_2_c_dt_envelope(eta_rho, params, ensemble400, beta400):
    schedule = [0.2, 0.1, 0.05, 0.025]   # in lattice steps; step = 1.0
    report = entropy_dt_limit(4.0, beta400, eta_rho, eta_rho, 4.0, params,
                              schedule, seed=202,
                              settings=EnsembleSettings(k=128, verify=False),
                              budget=6)
    dts = np.array([row[0] for row in report.dt_values])
    values = np.array([row[1] for row in report.dt_values])
    errors = np.array([row[2] for row in report.dt_values])
    running = [row[3] for row in report.dt_values]
    assert all(a >= b for a, b in zip(running, running[1:]))
    design = np.vstack([np.ones_like(dts), dts]).T
    (intercept, slope), *_ = np.linalg.lstsq(design, values, rcond=None)
    envelope_c = slope + max(intercept, 0.0) / dts.min()
    single_c_ok = all(v <= envelope_c * d + 3 * e
                      for v, d, e in zip(values, dts, errors))
    ok = slope > 0 and intercept <= 3 * errors.max() and single_c_ok
    verdict(2, f"values {np.round(values, 5).tolist()} fit slope {slope:.4f} > 0, "
               f"intercept {intercept:.5f} <= {3 * errors.max():.5f}", ok)


def test_criterion_3_nonnegativity_on_perturbed_systems(eta_rho, params,
                                                        ensemble64):
    beta = 1.0 / ensemble64.gamma_scale
    tol = admiss_tol(ensemble64)
    rng = streams.stream(303, "strengths")
    failures = []
    for case in range(50):
        strength = float(rng.uniform(0.0, 0.3))
        rho_tilde = cfse.perturb(eta_rho, strength, seed=5000 + case)
        result = optimize_configuration(4.0, beta, rho_tilde, ensemble64,
                                        params, budget=2, seed=6000 + case)
        bound = -(abs(beta) * tol + 3 * result.mc_error)
        if not result.value >= bound:
            failures.append((case, strength, result.value, bound))
    verdict(3, f"50 perturbed systems all above the Jensen bound "
               f"(failures: {failures})", not failures)


def test_criterion_4_bruteforce_oracles(params):
    # gamma variants against the naive quadruple loop, bitwise
    from test_surface_layer import oracle_gamma, random_system
    mismatches = 0
    for case in range(100):
        rng = streams.stream(case, "crit4")
        tilde, rho, u = random_system(10_000 + case, int(rng.integers(1, 7)),
                                      int(rng.integers(1, 7)))
        mt = rng.uniform(size=len(tilde.atoms)) < 0.5
        mb = rng.uniform(size=len(rho.atoms)) < 0.5
        got = gamma(mt, mb, tilde, rho, u, params)
        plus, minus = oracle_gamma(mt, mb, tilde, rho, u, params)
        if not (got.term_plus == plus and got.term_minus == minus
                and got.value == plus - minus):
            mismatches += 1
        vm = rng.uniform(size=len(tilde.atoms)) < 0.5
        got_local = gamma_local(mt, mb, vm, tilde, rho, u, params)
        plus_l, minus_l = oracle_gamma(mt, mb, tilde, rho, u, params, v_mask=vm)
        if not (got_local.term_plus == plus_l and got_local.term_minus == minus_l):
            mismatches += 1
    # pair functional against a full f x f eigensolve
    worst = 0.0
    for case in range(1000):
        rng = streams.stream(case, "crit4-lag")
        f = int(rng.integers(2, 9))
        x = random_point(f, 1, rng)
        y = random_point(f, 1, rng)
        lam = np.linalg.eigvals(x.mat @ y.mat)
        lam = np.abs(lam[np.argsort(-np.abs(lam))][:2])
        a = np.zeros(2)
        a[: len(lam)] = lam
        oracle = ((a[0] - a[1]) ** 2 + (a[1] - a[0]) ** 2) / 4 \
            + params.kappa * a.sum() ** 2
        got = kappa_lagrangian(x, y, params)
        worst = max(worst, abs(got - oracle) / max(abs(oracle), 1.0))
    ok = mismatches == 0 and worst <= 1e-9
    verdict(4, f"gamma bitwise mismatches: {mismatches}; "
               f"Lagrangian worst relative error {worst:.2e} <= 1e-9", ok)


def test_criterion_5_symmetry_suite(eta_rho, params, ensemble400):
    # unitary invariance of the pair functional
    worst_inv = 0.0
    for case in range(200):
        rng = streams.stream(case, "crit5-inv")
        x = random_point(4, 1, rng)
        y = random_point(4, 1, rng)
        u = haar_unitary(rng, 4)
        a = kappa_lagrangian(x, y, params)
        b = kappa_lagrangian(conjugate(u, x), conjugate(u, y), params)
        worst_inv = max(worst_inv, abs(a - b) / max(abs(a), 1.0))
    # equal-time antisymmetry under inversion
    worst_anti = 0.0
    scale = ensemble400.gamma_scale
    for case in range(30):
        rng = streams.stream(case, "crit5-anti")
        u = GroupElement(mat=haar_unitary(rng, 4))
        r_fwd = slice_residual(u, eta_rho, 4.0, params)
        r_inv = slice_residual(u.inverse(), eta_rho, 4.0, params)
        worst_anti = max(worst_anti, abs(r_fwd + r_inv) / scale)
    # point symmetry on the shared ensemble
    slack = 10 * ensemble400.slice_tol + 1e-10 * scale
    sym_ok = all(
        abs(slice_residual(s.element.inverse(), eta_rho, 4.0, params)) <= slack
        for s in ensemble400.samples[:50])
    # exact additivity of the localized integral over disjoint regions
    rng = streams.stream(55, "crit5-add")
    u = GroupElement(mat=haar_unitary(rng, 4))
    mt = past_mask(eta_rho, 4.0)
    mb = past_mask(eta_rho, 3.0)
    sites = eta_rho.site_labels
    v1, v2 = (sites < 2).astype(float), (sites >= 2).astype(float)
    from test_surface_layer import _exact_terms
    additive_ok = all(
        _exact_terms(mt, mb, eta_rho, u, v1 + v2, field)
        == _exact_terms(mt, mb, eta_rho, u, v1, field)
        + _exact_terms(mt, mb, eta_rho, u, v2, field)
        for field in ("term_plus", "term_minus"))
    parts = [gamma_local(mt, mb, v, eta_rho, eta_rho, u, params).value
             for v in (v1, v2, v1 + v2)]
    additive_ok = additive_ok and parts[2] == pytest.approx(
        parts[0] + parts[1], rel=1e-12, abs=1e-12)
    ok = worst_inv <= 1e-9 and worst_anti <= 1e-9 and sym_ok and additive_ok
    verdict(5, f"L-invariance {worst_inv:.2e}, antisymmetry {worst_anti:.2e}, "
               f"point symmetry {sym_ok}, additivity {additive_ok}", ok)


def test_criterion_6_static_dt_limit_consistency(eta_rho, params, ensemble400,
                                                 beta400):
    static = entropy_static(4.0, beta400, eta_rho, eta_rho, 4.0, params,
                            seed=606, settings=EnsembleSettings(k=128, verify=False),
                            budget=6)
    limit = entropy_dt_limit(4.0, beta400, eta_rho, eta_rho, 4.0, params,
                             [0.2, 0.1, 0.05, 0.025], seed=607,
                             settings=EnsembleSettings(k=128, verify=False),
                             budget=6)
    gap = abs(static.value - limit.value)
    bound = 3 * (static.mc_error + limit.mc_error)
    ok = gap <= bound
    verdict(6, f"|static - dt-limit| = {gap:.4f} <= {bound:.4f}", ok)


def test_criterion_7_stationarity(eta_rho, params, ensemble400, beta400):
    result = optimize_configuration(4.0, beta400, eta_rho, ensemble400, params,
                                    budget=6, seed=707)
    kern = PairKernels(eta_rho, ensemble400, result.h_star, params)
    c_opt = lagrange_c(result.t_star, result.h_star, beta400, eta_rho,
                       ensemble400, params, kernels=kern)
    at_opt = optimality_report(result.t_star, result.h_star, beta400, c_opt,
                               eta_rho, ensemble400, params, kernels=kern)
    shifted_values = list(result.t_star.values)
    shifted_values[1] += eta_rho.lattice_spacing
    t_shifted = PastSet(values=tuple(shifted_values))
    c_shift = lagrange_c(t_shifted, result.h_star, beta400, eta_rho,
                         ensemble400, params, kernels=kern)
    off_opt = optimality_report(t_shifted, result.h_star, beta400, c_shift,
                                eta_rho, ensemble400, params, kernels=kern)
    ok = at_opt["max_abs_over_se"] <= 3.0 and off_opt["max_abs_over_se"] > 3.0
    verdict(7, f"optimum residual {at_opt['max_abs_over_se']:.2f} sigma <= 3; "
               f"one-step perturbation {off_opt['max_abs_over_se']:.2f} sigma > 3", ok)


def test_criterion_8_second_variation_sign(eta_rho, params, ensemble400):
    beta = 100.0 / ensemble400.gamma_scale
    g = np.array([1.0, -1.0, 0.5, -0.5])
    probe = second_variation_probe(g, beta, ensemble400, params)
    positive_ok = probe.leading_beta2_coeff > 3 * probe.leading_mc_error
    # degenerate construction: duplicate seeds factorize the slice kernel
    rng = streams.stream(808, "degenerate")
    seed_pt = random_point(4, 1, rng)
    vac = cfse.build_static_vacuum(4, 1, [0, 1, 2, 3], [seed_pt, seed_pt], 8, 8.0)
    eta_deg = cfse.apply_cutoff(vac, cfse.CutoffSpec(t0=4.0, delta=1.2))
    ens_deg = cfse.build_ensemble(eta_deg, 4.0, 809, params,
                                  EnsembleSettings(k=64))
    probe_deg = second_variation_probe(np.array([1.0, -1.0]),
                                       100.0 / ens_deg.gamma_scale, ens_deg,
                                       params)
    degenerate_ok = abs(probe_deg.leading_beta2_coeff) <= max(
        3 * probe_deg.leading_mc_error, 1e-18)
    ok = positive_ok and degenerate_ok
    verdict(8, f"coefficient {probe.leading_beta2_coeff:.3f} > "
               f"3*{probe.leading_mc_error:.3f}; degenerate "
               f"{probe_deg.leading_beta2_coeff:.2e} ~ 0", ok)


def test_criterion_9_partition_function(eta_rho, params, ensemble400, beta400):
    zero = partition_function(4.0, ID4, 0.0, eta_rho, ensemble400, params)
    kern = PairKernels(eta_rho, ensemble400, ID4, params)
    part = partition_function(4.0, None, beta400, eta_rho, ensemble400, params,
                              kernels=kern)
    est = entropy_functional(4.0, None, beta400, eta_rho, ensemble400, params,
                             kernels=kern)
    ok = zero.z == 1.0 and part.log_z == est.value
    verdict(9, f"Z(0) = {zero.z} exactly; log Z == entropy bitwise "
               f"({part.log_z} == {est.value})", ok)


def test_criterion_10_cli_determinism(tmp_path):
    from cfse.cli import canonical_json, main
    config = """\
seed = 99

[model]
f = 4
n = 1
kappa = 1.0

[vacuum]
sites = 2
times = 6
period = 6.0
freqs = [0, 1, 2, 3]

[cutoff]
t0 = 3.0
delta = 0.8

[ensemble]
k = 16
verify = false
pilot_count = 8

[entropy]
beta = 1.0
beta_scale = "relative"
budget = 2
betas = [0.0, 1.0]
"""
    cfg = tmp_path / "exp.toml"
    cfg.write_text(config)
    out = str(tmp_path / "out")

    def run_all():
        assert main(["vacuum", "--config", str(cfg), "--out", out]) == 0
        assert main(["entropy", "--config", str(cfg), "--out", out]) == 0
        assert main(["sweep", "--config", str(cfg), "--out", out]) == 0
        report = json.loads(open(f"{out}/report.json", encoding="utf-8").read())
        report.pop("timestamp")
        return {
            "vacuum": open(f"{out}/vacuum.json", "rb").read(),
            "report": canonical_json(report).encode(),
            "checksum": report["content_checksum"],
            "ensemble": open(f"{out}/ensemble.jsonl", "rb").read(),
            "sweep": open(f"{out}/sweep.csv", "rb").read(),
        }

    first = run_all()
    second = run_all()
    ok = all(first[k] == second[k] for k in first)
    verdict(10, "vacuum/report/ensemble/sweep outputs byte-identical on rerun "
                "(timestamp excluded)", ok)
