"""Experiment driver: `cfse vacuum|entropy|sweep|entangle --config file.toml`.

Configs are strict TOML documents; unknown sections or keys are rejected.
Every output embeds the config hash and the master seed.  Reruns with the
same config and seed are byte-identical apart from the timestamp field,
which is excluded from the embedded content checksum.
"""

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import configuration as cfg
from . import streams
from .entropy import (
    EnsembleSettings,
    build_ensemble,
    entropy_dt_limit,
    entropy_static,
    exhaustion_sweep,
)
from .errors import CfseError, ConfigError, NoAdmissibleStart, RegularityGateFailed
from .group import save_ensemble
from .lagrangian import ModelParams, calibrate_s, el_residual
from .local import RegionSpec, entanglement_entropy
from .operators import make_point, random_point

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_REGULARITY = 3
EXIT_INFEASIBLE = 4
EXIT_INTERNAL = 5

_NUM = (int, float)
SCHEMA = {
    "seed": int,
    "model": {"f": int, "n": int, "kappa": _NUM, "s_param": _NUM,
              "s_policy": str},
    "vacuum": {"sites": int, "times": int, "period": _NUM, "freqs": list,
               "site_weights": list, "seed_kind": str},
    "cutoff": {"t0": _NUM, "delta": _NUM, "ramp_fraction": _NUM},
    "perturbation": {"strength": _NUM},
    "ensemble": {"k": int, "dt_max_fraction": _NUM, "symmetrize": bool,
                 "weight_mode": str, "pilot_count": int, "ttr_probe": int,
                 "verify": bool},
    "entropy": {"beta": _NUM, "beta_scale": str, "betas": list,
                "pipeline": str, "dt_schedule": list, "dims_schedule": list,
                "budget": int},
    "region": {"sites": list, "mask": list},
}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}")
    _validate(doc, SCHEMA, "")
    for section in ("model", "vacuum", "cutoff"):
        if section not in doc:
            raise ConfigError(f"missing required section [{section}]")
    return doc


def _validate(doc, schema, prefix):
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown key {prefix}{key}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{key} must be a table")
            _validate(value, expected, f"{prefix}{key}.")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{prefix}{key} must be an integer")
        elif expected is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{prefix}{key} must be a boolean")
        elif not isinstance(value, expected):
            raise ConfigError(f"{prefix}{key} has the wrong type")


def config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode("utf-8")
    ).hexdigest()


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False)


def content_checksum(payload: dict) -> str:
    body = {k: v for k, v in payload.items()
            if k not in ("timestamp", "content_checksum")}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def write_report(path, payload: dict) -> None:
    payload = dict(payload)
    payload["content_checksum"] = content_checksum(payload)
    payload["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload) + "\n")


# ---------------------------------------------------------------------------
# config -> objects

def _model_params(doc) -> ModelParams:
    m = doc["model"]
    return ModelParams(kappa=float(m.get("kappa", 1.0)), n=int(m["n"]),
                       s_param=float(m.get("s_param", 0.0)))


def _master_seed(doc, override) -> int:
    if override is not None:
        return int(override)
    return int(doc.get("seed", 0))


def _build_vacuum(doc, seed):
    m, v = doc["model"], doc["vacuum"]
    f, n = int(m["f"]), int(m["n"])
    n_sites, n_t = int(v["sites"]), int(v["times"])
    period = float(v["period"])
    freqs = v.get("freqs", list(range(f)))
    kind = v.get("seed_kind", "rank2")
    rng = streams.stream(seed, "vacuum-seeds")
    seeds = []
    for _ in range(n_sites):
        if kind == "rank2":
            seeds.append(random_point(f, n, rng))
        elif kind == "projector":
            z = rng.standard_normal(f) + 1j * rng.standard_normal(f)
            z /= np.linalg.norm(z)
            seeds.append(make_point(np.outer(z, z.conj()), n))
        else:
            raise ConfigError(f"unknown seed_kind {kind!r}")
    weights = v.get("site_weights")
    return cfg.build_static_vacuum(f, n, freqs, seeds, n_t, period,
                                   site_weights=weights)


def _cutoff(doc) -> cfg.CutoffSpec:
    c = doc["cutoff"]
    return cfg.CutoffSpec(t0=float(c["t0"]), delta=float(c["delta"]),
                          ramp_fraction=float(c.get("ramp_fraction", 0.1)))


def _settings(doc) -> EnsembleSettings:
    e = doc.get("ensemble", {})
    return EnsembleSettings(
        k=int(e.get("k", 400)),
        dt_max_fraction=float(e.get("dt_max_fraction", 0.45)),
        symmetrize=bool(e.get("symmetrize", True)),
        weight_mode=e.get("weight_mode", "uniform"),
        pilot_count=int(e.get("pilot_count", 32)),
        ttr_probe=int(e.get("ttr_probe", 16)),
        verify=bool(e.get("verify", True)),
    )


def _prepare_system(doc, seed, out_dir):
    """Load the vacuum file, apply cutoff and perturbation."""
    vacuum_path = os.path.join(out_dir, "vacuum.json")
    if not os.path.exists(vacuum_path):
        raise ConfigError(f"vacuum file not found: {vacuum_path} (run `cfse vacuum` first)")
    with open(vacuum_path, encoding="utf-8") as fh:
        vacuum = cfg.from_json(fh.read())
    cut = _cutoff(doc)
    eta_rho = cfg.apply_cutoff(vacuum, cut)
    strength = float(doc.get("perturbation", {}).get("strength", 0.0))
    rho_tilde = cfg.perturb(eta_rho, strength, _sub_seed(seed, "perturb"))
    return vacuum, eta_rho, rho_tilde, cut


def _sub_seed(seed, tag) -> int:
    return int.from_bytes(
        hashlib.blake2s(f"{seed}:{tag}".encode(), digest_size=8).digest(), "little")


def _resolve_beta(doc, ensemble) -> float:
    e = doc.get("entropy", {})
    beta = float(e.get("beta", 1.0))
    scale = e.get("beta_scale", "relative")
    if scale == "relative":
        return beta / ensemble.gamma_scale
    if scale == "absolute":
        return beta
    raise ConfigError(f"unknown beta_scale {scale!r}")


def _audit(doc, seed) -> dict:
    return {"config_hash": config_hash(doc), "master_seed": seed}


# ---------------------------------------------------------------------------
# subcommands

def cmd_vacuum(doc, seed, out_dir) -> int:
    params = _model_params(doc)
    vacuum = _build_vacuum(doc, seed)
    policy = doc["model"].get("s_policy", "fixed")
    if policy == "calibrated":
        params = ModelParams(kappa=params.kappa, n=params.n,
                             s_param=calibrate_s(vacuum, params))
    elif policy != "fixed":
        raise ConfigError(f"unknown s_policy {policy!r}")
    residual = el_residual(vacuum, params, seed=_sub_seed(seed, "el-probe"))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "vacuum.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json(vacuum) + "\n")
    print(f"vacuum written: {len(vacuum.atoms)} atoms, volume {vacuum.volume:.6g}")
    print(f"s_param ({policy}): {params.s_param:.6g}")
    print(f"EL residual: max|ell| on M = {residual['max_abs_on_m']:.6g}, "
          f"min ell over probes = {residual['min_off_m_probe']:.6g}")
    return EXIT_OK


def cmd_entropy(doc, seed, out_dir) -> int:
    params = _model_params(doc)
    _, eta_rho, rho_tilde, cut = _prepare_system(doc, seed, out_dir)
    settings = _settings(doc)
    e = doc.get("entropy", {})
    budget = int(e.get("budget", 24))
    ensemble = build_ensemble(eta_rho, cut.t0, _sub_seed(seed, "ensemble"),
                              params, settings)
    beta = _resolve_beta(doc, ensemble)
    pipeline = e.get("pipeline", "static")
    if pipeline == "static":
        report = entropy_static(cut.t0, beta, rho_tilde, eta_rho, cut.t0,
                                params, seed, settings=settings, budget=budget,
                                ensemble=ensemble)
    elif pipeline == "dt_limit":
        schedule = [float(x) for x in e.get("dt_schedule", [])]
        report = entropy_dt_limit(cut.t0, beta, rho_tilde, eta_rho, cut.t0,
                                  params, schedule, seed, settings=settings,
                                  budget=budget)
    else:
        raise ConfigError(f"unknown pipeline {pipeline!r}")
    save_ensemble(os.path.join(out_dir, "ensemble.jsonl"), ensemble)
    payload = {"kind": "entropy-report", "report": report.to_dict(),
               "audit": _audit(doc, seed)}
    write_report(os.path.join(out_dir, "report.json"), payload)
    print(f"entropy = {report.value:.6g} +- {report.mc_error:.3g} (beta={beta:.6g})")
    return EXIT_OK


def cmd_sweep(doc, seed, out_dir) -> int:
    params = _model_params(doc)
    _, eta_rho, rho_tilde, cut = _prepare_system(doc, seed, out_dir)
    settings = _settings(doc)
    e = doc.get("entropy", {})
    budget = int(e.get("budget", 24))
    ensemble = build_ensemble(eta_rho, cut.t0, _sub_seed(seed, "ensemble"),
                              params, settings)
    factors = [float(b) for b in e.get("betas", [e.get("beta", 1.0)])]
    scale = e.get("beta_scale", "relative")
    betas = [b / ensemble.gamma_scale if scale == "relative" else b
             for b in factors]
    dims_schedule = e.get("dims_schedule")
    dt_schedule = e.get("dt_schedule")

    rows = []
    ok_rows = 0
    for factor, beta in zip(factors, betas):
        try:
            if dims_schedule:
                reports = exhaustion_sweep(
                    cut.t0, beta, rho_tilde, eta_rho, cut.t0, params,
                    [int(d) for d in dims_schedule], seed, settings=settings,
                    budget=budget)
                for rep in reports:
                    rows.append((beta, rep.dims, rep.value, rep.mc_error, "ok"))
                    ok_rows += 1
            elif dt_schedule:
                rep = entropy_dt_limit(
                    cut.t0, beta, rho_tilde, eta_rho, cut.t0, params,
                    [float(d) for d in dt_schedule], seed, settings=settings,
                    budget=budget)
                for dt, value, err, _ in rep.dt_values:
                    rows.append((beta, dt, value, err, "ok"))
                    ok_rows += 1
            else:
                rep = entropy_static(cut.t0, beta, rho_tilde, eta_rho, cut.t0,
                                     params, seed, settings=settings,
                                     budget=budget, ensemble=ensemble)
                rows.append((beta, 0.0, rep.value, rep.mc_error, "ok"))
                ok_rows += 1
        except CfseError as exc:
            rows.append((beta, "", "", "", f"failed: {type(exc).__name__}"))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "dt_or_dims", "value", "mc_error", "status"])
        writer.writerows(rows)
    print(f"sweep written: {ok_rows}/{len(rows)} rows ok")
    return EXIT_OK if ok_rows else EXIT_INTERNAL


def cmd_entangle(doc, seed, out_dir) -> int:
    params = _model_params(doc)
    _, eta_rho, rho_tilde, cut = _prepare_system(doc, seed, out_dir)
    settings = _settings(doc)
    e = doc.get("entropy", {})
    budget = int(e.get("budget", 24))
    region_doc = doc.get("region", {})
    if "mask" in region_doc:
        mask = np.asarray(region_doc["mask"], dtype=bool)
        if mask.shape != (len(rho_tilde.atoms),):
            raise ConfigError(
                f"region mask has {mask.size} entries, expected {len(rho_tilde.atoms)}")
        region = RegionSpec(v_mask=mask)
    elif "sites" in region_doc:
        region = RegionSpec.from_sites(rho_tilde, region_doc["sites"])
    else:
        raise ConfigError("section [region] needs `sites` or `mask`")
    ensemble = build_ensemble(eta_rho, cut.t0, _sub_seed(seed, "ensemble"),
                              params, settings)
    beta = _resolve_beta(doc, ensemble)
    report = entanglement_entropy(cut.t0, region, beta, rho_tilde, eta_rho,
                                  cut.t0, params, seed, settings=settings,
                                  budget=budget)
    payload = {"kind": "entanglement-report", "report": report.to_dict(),
               "audit": _audit(doc, seed)}
    write_report(os.path.join(out_dir, "report.json"), payload)
    print(f"entanglement entropy = {report.e:.6g} +- {report.mc_error:.3g}")
    return EXIT_OK


COMMANDS = {
    "vacuum": cmd_vacuum,
    "entropy": cmd_entropy,
    "sweep": cmd_sweep,
    "entangle": cmd_entangle,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cfse", description="causal fermion system entropy experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (CFSE_THREADS as fallback)")
    parser.add_argument("--out", default=".")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None and os.environ.get("CFSE_THREADS"):
        threads = int(os.environ["CFSE_THREADS"])
    if threads is not None:
        os.environ["OMP_NUM_THREADS"] = str(threads)

    try:
        doc = load_config(args.config)
        seed = _master_seed(doc, args.seed)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](doc, seed, args.out)
    except RegularityGateFailed as exc:
        print(f"error: regularity gate failed: {exc}", file=sys.stderr)
        return EXIT_REGULARITY
    except NoAdmissibleStart as exc:
        print(f"error: no admissible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CfseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
