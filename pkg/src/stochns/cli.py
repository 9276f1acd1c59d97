"""Batch front-end: ``stochns --config run.yaml [--seed N] [--out DIR] [--threads N] [--quiet]``.

Every flag can also be set through an environment variable with the
``STOCHNS_`` prefix (``STOCHNS_CONFIG``, ``STOCHNS_SEED``, ``STOCHNS_OUT``,
``STOCHNS_THREADS``, ``STOCHNS_QUIET``).  Flags win over the environment,
which wins over the config file.

Exit status: 0 success, 2 verification failure, 1 usage or config error
(nothing is written in that case).  A run's ``manifest.json`` embeds the
resolved config, so ``stochns --config DIR/manifest.json --out OTHER``
repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import os
import platform
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .energy import audit_run, gronwall_constant, ladyzhenskaya_constant, write_energy_csv
from .estimates import check_admissibility, limit_constant, verify_hs_regime, write_regime_csv
from .fbm import HurstGrid, covariance_check
from .solver import (
    SolveConfig,
    cross_validate,
    noise_hash,
    sample_noise,
    seed_contrast,
    solve_local,
    uniqueness_probe,
)
from .spectral import NoiseOperator, StokesModel, _lp_norms, lp_norm, random_field, write_snapshot, zero_field

log = logging.getLogger("stochns")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2
HS_LIMIT_RTOL = 0.02
UNIQUENESS_FACTOR = 10.0
CONTRAST_FACTOR = 1e3


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-12" as a string; accept it as a float
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?"
        r"|[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)"
        r"|\.[0-9_]+(?:[eE][-+][0-9]+)?"
        r"|[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$"
    ),
    list("-+0123456789."),
)


def _schema(name: str) -> dict:
    return json.loads(resources.files("stochns").joinpath("schemas", name).read_text())


def load_config(path: str | Path) -> dict:
    """Parse YAML or JSON, unwrap a manifest, and validate against the config schema."""
    try:
        raw = yaml.load(Path(path).read_text(), Loader=_Loader)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw.get("config")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, _schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid at {list(exc.absolute_path)}: {exc.message}") from exc
    return raw


def _seeds(cfg: dict) -> list[int]:
    base = int(cfg.get("seed", 0))
    policy = cfg.get("seed_policy", {"mode": "fixed"})
    if policy["mode"] == "sweep":
        return list(range(base, base + int(policy.get("n", 1))))
    return [base]


def build_model(block: dict) -> StokesModel:
    return StokesModel(
        int(block["dim"]),
        block.get("backend", "fourier_periodic"),
        int(block["size"]),
        float(block.get("viscosity", 1.0)),
    )


def build_solve_config(cfg: dict, seed: int) -> SolveConfig:
    model = build_model(cfg["model"])
    noise = cfg.get("noise", {})
    op = NoiseOperator(float(noise.get("q_exponent", 0.0)), float(noise.get("amplitude", 1.0)))
    s = cfg["solve"]
    init = cfg.get("initial", {"kind": "zero"})
    if init["kind"] == "random":
        rng = np.random.default_rng(int(init.get("seed", 0)))
        u0 = random_field(model, rng, decay=float(init.get("decay", 2.0)))
        u0 = u0 * (float(init.get("lp_norm", 1.0)) / lp_norm(u0, float(s["p_exponent"])))
    else:
        u0 = zero_field(model)
    M = s.get("M_constant", 1.0)
    return SolveConfig(
        model=model,
        noise_operator=op,
        hurst=float(s["hurst"]),
        p_exponent=float(s["p_exponent"]),
        t_final=float(s.get("t_final", 1.0)),
        n_steps=int(s.get("n_steps", 256)),
        seed=seed,
        M_constant=M if isinstance(M, str) else float(M),
        max_picard_iters=int(s.get("max_picard_iters", 50)),
        picard_tol=float(s.get("picard_tol", 1e-12)),
        u0=u0,
        scheme=s.get("scheme", "trapezoid"),
        local_steps=int(s.get("local_steps", 64)),
        quadrature_order=int(s.get("quadrature_order", 4)),
    )


def _as_list(x) -> list:
    return list(x) if isinstance(x, list) else [x]


class Run:
    """Output sink for one experiment: CSV/JSON writers plus the manifest."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.files: list[Path] = []
        self.columns: dict[str, dict[str, str]] = {}
        self.noise_hashes: dict[str, str] = {}

    def csv(self, name: str, header: list[tuple[str, str]], rows) -> Path:
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([h for h, _ in header])
            for row in rows:
                w.writerow([_cell(x) for x in row])
        self.columns[name] = dict(header)
        self.files.append(path)
        return path

    def adopt(self, path: Path, header: list[tuple[str, str]]) -> None:
        self.columns[path.name] = dict(header)
        self.files.append(path)

    def finish(self, status: str, reason: str, summary: dict) -> None:
        result = {
            "command": self.cfg["command"],
            "status": status,
            "reason_code": reason,
            "summary": _jsonable(summary),
            "columns": self.columns,
        }
        jsonschema.validate(result, _schema("result.schema.json"))
        path = self.out / "results.json"
        path.write_text(json.dumps(result, indent=2, sort_keys=True))
        self.files.append(path)
        manifest = {
            "manifest_version": 1,
            "code_version": __version__,
            "command": self.cfg["command"],
            "config": self.cfg,
            "platform": {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine()},
            "noise_hashes": self.noise_hashes,
            "outputs": {
                str(p.relative_to(self.out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files
            },
        }
        jsonschema.validate(manifest, _schema("manifest.schema.json"))
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def _map(fn, items, threads: int) -> list:
    """Ordered map, in worker processes when ``threads > 1``."""
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- commands -------------------------------------------------------------------------


def _simulate_one(args) -> dict:
    cfg, seed, out, snapshots = args
    sc = build_solve_config(cfg, seed)
    sol = solve_local(sc)
    d = sol.diagnostics
    p = sc.p_exponent
    model = sc.model
    traj = list(
        zip(
            sol.times,
            _lp_norms(model, sol.u, p),
            _lp_norms(model, sol.v, p),
            _lp_norms(model, sol.z.coefficients, p),
        )
    )
    if snapshots:
        snap_dir = Path(out) / f"snapshots_seed{seed}"
        snap_dir.mkdir(exist_ok=True)
        for n in range(len(sol.times)):
            write_snapshot(sol.state(n), snap_dir / f"u_{n:06d}.snap")
    return {
        "seed": seed,
        "diag": d.to_dict(),
        "contraction_ok": d.contraction_ok(),
        "traj": traj,
        "noise_hash": noise_hash(sample_noise(sc)),
    }


def cmd_simulate(cfg: dict, run: Run, threads: int):
    seeds = _seeds(cfg)
    snaps = bool(cfg.get("snapshots", False))
    results = _map(_simulate_one, [(cfg, s, str(run.out), snaps) for s in seeds], threads)
    unit = {"t": "time", "norm": "velocity L^p norm"}
    for r in results:
        run.noise_hashes[f"seed{r['seed']}"] = r["noise_hash"]
        run.csv(
            f"trajectory_seed{r['seed']}.csv",
            [("t", unit["t"]), ("u_lp", unit["norm"]), ("v_lp", unit["norm"]), ("z_lp", unit["norm"])],
            r["traj"],
        )
        if snaps:
            for f in sorted((run.out / f"snapshots_seed{r['seed']}").iterdir()):
                run.files.append(f)
    rows = [
        (
            r["seed"],
            r["diag"]["K0"],
            r["diag"]["tau"],
            r["diag"]["C0"],
            len(r["diag"]["iteration_gaps"]),
            r["diag"]["iteration_gaps"][-1],
            r["diag"]["sup_v_norm"],
            r["diag"]["converged"],
            r["diag"]["bound_ok"],
            r["contraction_ok"],
        )
        for r in results
    ]
    run.csv(
        "runs.csv",
        [
            ("seed", "1"),
            ("K0", "velocity L^p norm"),
            ("tau", "time"),
            ("C0", "1"),
            ("iterations", "count"),
            ("final_gap", "velocity L^p norm"),
            ("sup_v_norm", "velocity L^p norm"),
            ("converged", "bool"),
            ("bound_ok", "bool"),
            ("contraction_ok", "bool"),
        ],
        rows,
    )
    failures = [r for r in results if r["diag"]["status"] != "converged" or not r["contraction_ok"]]
    summary = {"runs": [r["diag"] for r in results]}
    if failures:
        first = failures[0]["diag"]
        reason = first["status"] if first["status"] != "converged" else "contraction_violated"
        return "fail", reason, summary
    return "pass", "ok", summary


def cmd_verify_hs(cfg: dict, run: Run, threads: int):
    hs = cfg["hs"]
    q, d = float(hs["q"]), int(hs["d"])
    t = np.geomspace(float(hs.get("t_min", 1e-6)), float(hs.get("t_max", 1.0)), int(hs.get("n_t", 31)))
    try:
        report = verify_hs_regime(q, d, t)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    path = write_regime_csv(report, run.out / "hs_regime.csv")
    run.adopt(
        path,
        [("t", "time"), ("partial_sum", "1"), ("tail_bound", "1"), ("bound_shape_value", "1"), ("ratio", "1")],
    )
    summary = report.summary()
    reason = "ok" if report.passed else "hs_shape_failed"
    if report.regime != "critical":
        limit = limit_constant(q, d)
        summary["limit"] = limit
        summary["sup_relative_to_limit"] = report.sup_ratio / limit
        if reason == "ok" and abs(report.sup_ratio / limit - 1) > HS_LIMIT_RTOL:
            reason = "hs_limit_out_of_range"
    return ("pass" if reason == "ok" else "fail"), reason, summary


def cmd_check_params(cfg: dict, run: Run, threads: int):
    p_block = cfg["params"]
    hursts = _as_list(p_block["hurst"]) if "hurst" in p_block else [None]
    rows, reports = [], []
    for d, p, q, h in itertools.product(
        _as_list(p_block["d"]), _as_list(p_block["p"]), _as_list(p_block["q"]), hursts
    ):
        try:
            rep = check_admissibility(int(d), float(p), float(q), 0.5 if h is None else float(h))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        entry = {
            "d": rep.d,
            "p": rep.p,
            "q": rep.q,
            "hurst": h,
            "hurst_lower_bound": rep.lhs,
            "admissible": rep.admissible if h is not None else None,
            "margin": rep.margin if h is not None else None,
            "existence_applicable": rep.existence_applicable,
            "notes": list(rep.notes),
        }
        reports.append(entry)
        rows.append(
            (
                rep.d,
                rep.p,
                rep.q,
                "" if h is None else float(h),
                rep.lhs,
                "" if h is None else rep.margin,
                "" if h is None else rep.admissible,
                rep.existence_applicable,
                "; ".join(rep.notes),
            )
        )
    run.csv(
        "admissibility.csv",
        [
            ("d", "1"),
            ("p", "1"),
            ("q", "1"),
            ("hurst", "1"),
            ("hurst_lower_bound", "1"),
            ("margin", "1"),
            ("admissible", "bool"),
            ("existence_applicable", "bool"),
            ("notes", "text"),
        ],
        rows,
    )
    for entry in reports:
        if not cfg.get("_quiet"):
            msg = ", ".join(entry["notes"]) or (
                "admissible" if entry["admissible"] else "inadmissible" if entry["admissible"] is False else
                f"admissible iff {entry['hurst_lower_bound']:.6g} < H < 1"
            )
            print(f"d={entry['d']} p={entry['p']:g} q={entry['q']:g}: {msg}")
    return "pass", "ok", {"reports": reports}


def _picard_one(args) -> dict:
    cfg, seed, other = args
    sc = build_solve_config(cfg, seed)
    sol = solve_local(sc)
    d = sol.diagnostics
    ratios = d.gap_ratios
    return {
        "seed": seed,
        "diag": d.to_dict(),
        "contraction_ok": d.contraction_ok(),
        "max_ratio": float(np.nanmax(ratios[1:])) if ratios.size > 1 else float("nan"),
        "uniqueness": uniqueness_probe(sc),
        "contrast": seed_contrast(sc, other),
        "noise_hash": noise_hash(sample_noise(sc)),
    }


def cmd_picard_study(cfg: dict, run: Run, threads: int):
    seeds = _seeds(cfg)
    others = seeds[1:] + [seeds[0]] if len(seeds) > 1 else [seeds[0] + 1]
    results = _map(_picard_one, [(cfg, s, o) for s, o in zip(seeds, others)], threads)
    tol = float(cfg["solve"].get("picard_tol", 1e-12))
    rows, gap_rows = [], []
    ok = True
    for r in results:
        d = r["diag"]
        uniq_ok = r["uniqueness"] <= UNIQUENESS_FACTOR * tol
        contrast_ok = r["contrast"] > CONTRAST_FACTOR * tol
        good = d["status"] == "converged" and r["contraction_ok"] and uniq_ok and contrast_ok
        ok &= good
        run.noise_hashes[f"seed{r['seed']}"] = r["noise_hash"]
        rows.append(
            (
                r["seed"], d["K0"], d["tau"], d["C0"], len(d["iteration_gaps"]), r["max_ratio"],
                r["contraction_ok"], d["bound_ok"], d["sup_v_norm"], r["uniqueness"], r["contrast"], good,
            )
        )
        gap_rows += [(r["seed"], j, g) for j, g in enumerate(d["iteration_gaps"])]
    run.csv(
        "picard.csv",
        [
            ("seed", "1"), ("K0", "velocity L^p norm"), ("tau", "time"), ("C0", "1"), ("iterations", "count"),
            ("max_gap_ratio", "1"), ("contraction_ok", "bool"), ("bound_ok", "bool"),
            ("sup_v_norm", "velocity L^p norm"), ("uniqueness_deviation", "velocity L^p norm"),
            ("seed_contrast", "velocity L^p norm"), ("pass", "bool"),
        ],
        rows,
    )
    run.csv("gaps.csv", [("seed", "1"), ("iteration", "count"), ("gap", "velocity L^p norm")], gap_rows)
    summary = {"runs": [{k: v for k, v in r.items() if k != "noise_hash"} for r in results]}
    return ("pass", "ok", summary) if ok else ("fail", "picard_study_failed", summary)


def cmd_convergence_study(cfg: dict, run: Run, threads: int):
    conv = cfg.get("convergence", {})
    sc = build_solve_config(cfg, _seeds(cfg)[0])
    cv = cross_validate(sc, int(conv.get("finest_steps", 512)), int(conv.get("levels", 4)))
    ratios = np.append(np.nan, cv.ratios)
    run.noise_hashes["seed"] = noise_hash(sample_noise(sc))
    run.csv(
        "convergence.csv",
        [("n_steps", "count"), ("error_lp", "velocity L^p norm"), ("ratio", "1")],
        zip(cv.n_steps, cv.errors, ratios),
    )
    threshold = float(conv.get("min_ratio", 1.8))
    ok = bool(np.all(cv.ratios >= threshold))
    summary = {"n_steps": cv.n_steps, "errors": cv.errors, "ratios": cv.ratios, "K0": cv.K0, "horizon": cv.horizon}
    return ("pass", "ok", summary) if ok else ("fail", "order_below_threshold", summary)


def cmd_energy_audit(cfg: dict, run: Run, threads: int):
    sc = build_solve_config(cfg, _seeds(cfg)[0])
    if sc.model.dim != 2:
        raise ConfigError("energy-audit needs dim 2")
    C_cfg = cfg.get("energy", {}).get("C_constant", "calibrated")
    c_lady = None
    if C_cfg == "calibrated":
        c_lady = ladyzhenskaya_constant(sc.model, sc.seed)
        C = gronwall_constant(c_lady)
    else:
        C = float(C_cfg)
    audit = audit_run(sc, C)
    run.noise_hashes["seed"] = noise_hash(sample_noise(sc))
    header = [
        ("t", "time"), ("v_l2_sq", "energy"), ("grad_v_sq", "enstrophy"), ("z_l4_fourth", "velocity^4"),
        ("envelope", "energy"), ("residual", "energy/time"), ("pass", "bool"),
    ]
    for ledger, n in zip(audit.ledgers, audit.n_steps):
        run.adopt(write_energy_csv(ledger, run.out / f"energy_{n}.csv"), header)
    run.adopt(write_energy_csv(audit.control, run.out / "energy_control.csv"), header)
    ratios = np.append(np.nan, audit.ratios)
    run.csv(
        "residual_orders.csv",
        [("n_steps", "count"), ("residual_norm", "energy/time"), ("ratio", "1")],
        zip(audit.n_steps, audit.residual_norms, ratios),
    )
    summary = {
        "C_constant": C,
        "ladyzhenskaya_constant": c_lady,
        "verdicts": [l.verdict for l in audit.ledgers],
        "residual_ratios": audit.ratios,
        "control_monotone": audit.control_monotone,
        "max_trilinear_defect": max(float(l.trilinear_defect.max()) for l in audit.ledgers) if audit.ledgers else None,
        "interpolation": None if audit.interpolation is None else {
            "r": audit.interpolation.r, "s": audit.interpolation.s,
            "lhs": audit.interpolation.lr_hs, "rhs": audit.interpolation.bound, "holds": audit.interpolation.holds,
        },
    }
    if audit.blowup:
        return "fail", "numerical_blowup", summary
    if not all(l.passed for l in audit.ledgers):
        return "fail", "envelope_violated", summary
    if not np.all(audit.ratios >= 1.8):
        return "fail", "order_below_threshold", summary
    if not audit.control_monotone:
        return "fail", "control_not_monotone", summary
    return "pass", "ok", summary


def cmd_fbm_selftest(cfg: dict, run: Run, threads: int):
    fb = cfg.get("fbm", {})
    hursts = [float(h) for h in _as_list(fb.get("hurst", [0.3, 0.5, 0.75, 0.9]))]
    seed = _seeds(cfg)[0]
    checks = []
    for h in hursts:
        grid = HurstGrid(h, float(fb.get("t_final", 1.0)), int(fb.get("n_steps", 256)))
        checks.append(covariance_check(grid, int(fb.get("n_paths", 20000)), seed, float(fb.get("n_sigma", 5.0))))
    run.csv(
        "fbm_selftest.csv",
        [("hurst", "1"), ("n_paths", "count"), ("n_pairs", "count"), ("fraction_within", "1"), ("max_z", "1"), ("pass", "bool")],
        [(c.hurst, c.n_paths, c.n_pairs, c.fraction_within, c.max_z, c.passed) for c in checks],
    )
    ok = all(c.passed for c in checks)
    summary = {"checks": [c.__dict__ for c in checks]}
    return ("pass", "ok", summary) if ok else ("fail", "covariance_mismatch", summary)


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-hs": cmd_verify_hs,
    "check-params": cmd_check_params,
    "picard-study": cmd_picard_study,
    "convergence-study": cmd_convergence_study,
    "energy-audit": cmd_energy_audit,
    "fbm-selftest": cmd_fbm_selftest,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochns", description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=os.environ.get("STOCHNS_CONFIG"), help="YAML or JSON config, or a manifest")
    ap.add_argument("--seed", type=int, default=_env_int("STOCHNS_SEED"))
    ap.add_argument("--out", default=os.environ.get("STOCHNS_OUT"))
    ap.add_argument("--threads", type=int, default=_env_int("STOCHNS_THREADS") or 1)
    ap.add_argument("--quiet", action="store_true", default=os.environ.get("STOCHNS_QUIET", "") not in ("", "0"))
    return ap


def _env_int(name: str) -> int | None:
    val = os.environ.get(name)
    return int(val) if val not in (None, "") else None


def _fail_config(msg: str) -> int:
    print(json.dumps({"reason_code": "config_invalid", "message": msg}), file=sys.stderr)
    return EXIT_CONFIG


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if not args.config:
        return _fail_config("no config given (--config or STOCHNS_CONFIG)")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail_config(str(exc))
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    out = Path(args.out or cfg.get("output_dir") or f"runs/{cfg['command']}")
    # build the solver config up front so that bad values never leave artifacts behind
    if "model" in cfg and "solve" in cfg:
        try:
            build_solve_config(cfg, cfg["seed"])
        except (ValueError, KeyError) as exc:
            return _fail_config(str(exc))
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, out)
    cfg_exec = dict(cfg, _quiet=args.quiet)
    try:
        status, reason, summary = COMMANDS[cfg["command"]](cfg_exec, run, max(1, args.threads))
    except ConfigError as exc:
        for f in run.files:
            f.unlink(missing_ok=True)
        if out.exists() and not any(out.iterdir()):
            out.rmdir()
        return _fail_config(str(exc))
    run.finish(status, reason, summary)
    log.info("%s: %s (%s) -> %s", cfg["command"], status, reason, out)
    return EXIT_OK if status == "pass" else EXIT_VERIFY


if __name__ == "__main__":
    raise SystemExit(main())
