"""Command line front end: ``ldtprob {solve,gradcheck,sweep,estimate,eigs}``.

Every command reads one configuration file, writes CSV/JSON files into the
output directory and a ``manifest.json`` holding the effective
configuration, its hash, library versions and wall time.  The manifest is
itself a valid ``--config`` argument.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .adjoint import gradient_check
from .config import MANIFEST_KEY, RunConfig, config_hash
from .errors import ConfigError, CurvatureError, NumericalError
from .estimators import (
    OptimizerPoint,
    combine_estimates,
    fit_constant_prefactor,
    form_estimate,
    is_curve,
    mc_from_values,
    mc_values,
    prefactor_extract,
    sorm_estimate_lowrank,
    sorm_from_eigenvalues,
)
from .optimize import OptimumRecord, find_local_optima, is_distinct, solve_at_level
from .source import write_basis_csv, write_slip_samples
from .study import Study, build_model
from .swe.backend import BACKEND

log = logging.getLogger("ldtprob")

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2
SWEEP_FILE = "sweep.json"


class CheckFailed(NumericalError):
    """A verification command found a result outside its tolerance."""


# ----------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Outputs:
    """Writes files into the output directory and remembers their names."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return p

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
        return p


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, np.uint64)[0])


def _lam_tag(lam: float) -> str:
    return f"{lam:g}".replace(".", "p")


# ----------------------------------------------------------------------------
# sweep artifact


def record_to_json(rec: OptimumRecord, extra: dict | None = None) -> dict:
    d = rec.to_dict()
    d["kkt"] = _finite_or_none(rec.kkt)
    d["z"] = _finite_or_none(rec.z)
    d["I"] = _finite_or_none(rec.I)
    d["theta"] = [float(t) for t in rec.theta]
    d["level"] = rec.level
    if extra:
        d.update(extra)
    return d


def load_sweep(cfg, out: Path, needed_by: str) -> dict:
    path = Path(cfg["estimator"]["sweep"]) if cfg["estimator"]["sweep"] else out / SWEEP_FILE
    if not path.is_file():
        raise ConfigError(
            f"{needed_by} needs a sweep artifact but {path} does not exist; "
            f"run 'ldtprob sweep' with the same config first or set 'estimator.sweep'"
        )
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep artifact {path}: {exc}") from None
    if data.get("problem") != cfg["problem"] or data.get("kind") != cfg["objective"]["kind"]:
        raise ConfigError(
            f"sweep artifact {path} was made for problem {data.get('problem')!r}, objective "
            f"{data.get('kind')!r}; this run uses {cfg['problem']!r}, {cfg['objective']['kind']!r}"
        )
    return data


def _usable(records: list[dict]) -> list[dict]:
    return [r for r in records if r["z"] is not None and r["I"] is not None and all(map(math.isfinite, r["theta"]))]


def _point(r: dict) -> OptimizerPoint:
    return OptimizerPoint(np.array(r["theta"], dtype=float), float(r["lambda"]), float(r["z"]), float(r["I"]))


def _points(r: dict) -> list[OptimizerPoint]:
    """The sweep optimizer of a record followed by the other optimizers at its level."""
    return [_point(r)] + [_point(b) for b in r.get("branches", [])]


# ----------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig, out: Outputs, workers: int) -> dict:
    model = build_model(cfg)
    sv = cfg["solve"]
    if sv["slips"] is not None:
        S = np.asarray(sv["slips"], dtype=float)
        if S.shape != (model.n_s,):
            raise ConfigError(f"'solve.slips' has {S.size} entries, the basis has {model.n_s} patches")
    elif sv["sample"] is not None:
        S = model.measure.sample(cfg["seed"], int(sv["sample"]) + 1)[-1]
    else:
        S = np.zeros(model.n_s)
    traj = model.forward(S)
    stride = sv["stride"]
    t = traj.times
    xk = model.mesh.dg_nodes
    levels = list(range(0, traj.nsteps + 1, stride))
    if levels[-1] != traj.nsteps:
        levels.append(traj.nsteps)
    rows = (
        (t[m], x, h, v)
        for m in levels
        for x, h, v in zip(xk.ravel(), traj.H[m].ravel(), traj.V[m].ravel())
    )
    out.csv("trajectory.csv", ["t", "x", "h", "v"], rows)
    out.csv("observable.csv", ["t", "f_ob"], zip(t, traj.fobs))
    out.csv("bathymetry.csv", ["x", "B"], zip(model.mesh.nodes, traj.bathymetry.B))
    out.csv("bathymetry_B0.csv", ["x", "B"], zip(model.mesh.nodes, model.B0))
    write_basis_csv(model.basis, out.path("basis.csv"))
    write_slip_samples(S[None, :], out.path("slips.csv"))
    mass = [traj.mass(0), traj.mass(traj.nsteps)]
    m_star = int(np.argmax(traj.fobs))
    summary = {
        "F_gamma": model.F(S),
        "F_max": float(traj.fobs[m_star]),
        "t_max": float(t[m_star]),
        "rate": model.measure.rate(S),
        "dt": traj.dt,
        "nsteps": traj.nsteps,
        "mass_drift": float(abs(mass[-1] - mass[0]) / abs(mass[0])),
        "cmax": traj.cmax,
    }
    out.json("solve.json", summary)
    return summary


def cmd_gradcheck(cfg: RunConfig, out: Outputs, workers: int) -> dict:
    study = Study.from_config(cfg)
    gc = cfg["gradcheck"]
    lam = cfg["objective"]["lam"]
    rng = np.random.default_rng(cfg["seed"])
    if gc["point"] == "sample":
        theta = study.measure.mean + study.measure.sqrt_cov @ rng.standard_normal(study.dim)
    else:
        theta = study.measure.mean.copy()
    level = None
    if study.kind == "timeopt":
        level = int(np.argmax(study.model.observable(theta)))
    grad = study.J_grad(theta, lam, level)
    check = gradient_check(lambda t: study.J(t, lam, level), grad, theta,
                           rng.standard_normal((gc["directions"], study.dim)), gc["steps"])
    mins = [float(e) for e in check.min_errors]
    for k, e in enumerate(mins, start=1):
        log.info("direction %d: min relative error %.3e", k, e)
    rows = check.table
    out.csv("gradcheck.csv", ["direction", "step", "fd", "adjoint", "rel_error"], rows)
    out.csv("gradcheck_summary.csv", ["direction", "min_rel_error"], enumerate(mins, start=1))
    summary = {"lambda": lam, "kind": study.kind, "min_rel_errors": mins, "max_of_min": max(mins),
               "threshold": gc["threshold"], "level": level}
    out.json("gradcheck.json", summary)
    if max(mins) > gc["threshold"]:
        raise CheckFailed(f"gradient check failed: worst min relative error {max(mins):.3e} > {gc['threshold']:.1e}")
    return summary


_WORKER_STUDY: Study | None = None


def _init_worker(cfg_dict: dict) -> None:
    global _WORKER_STUDY
    _WORKER_STUDY = Study.from_config(RunConfig(cfg_dict))


def _minimize_in_worker(lam: float):
    try:
        return _WORKER_STUDY.minimize(lam), None
    except NumericalError as exc:
        return None, str(exc)


def _failed(lam: float, dim: int) -> OptimumRecord:
    nan = float("nan")
    return OptimumRecord(lam=lam, theta=np.full(dim, nan), z=nan, I=nan, kkt=nan, iterations=0, converged=False)


def _run_sweep(study: Study, cfg: RunConfig, workers: int) -> tuple[list[OptimumRecord], list[str | None]]:
    lams = cfg["objective"]["lam_grid"]
    warm = cfg["objective"]["warm"]
    if not warm and workers > 1 and len(lams) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(lams)), initializer=_init_worker,
                                 initargs=(cfg.to_dict(),)) as pool:
            results = list(pool.map(_minimize_in_worker, lams))
        recs = [r if r is not None else _failed(l, study.dim) for (r, _), l in zip(results, lams)]
        return recs, [e for _, e in results]
    recs, errors, start = [], [], None
    for lam in lams:
        try:
            rec, err = study.minimize(lam, start), None
        except NumericalError as exc:
            rec, err = _failed(lam, study.dim), str(exc)
        recs.append(rec)
        errors.append(err)
        if warm and err is None:
            start = rec.theta
    return recs, errors


def _asymptotics(study: Study, rec: OptimumRecord, rank: int, seed: int):
    """FORM and SORM values at one optimizer: ``(P_FO, P_SO, eigenvalues, status, error)``."""
    p_so = float("nan")
    p_fo = form_estimate(rec).p_hat
    try:
        est, spec = sorm_estimate_lowrank(rec, study.measure, study.hvp(rec.theta), rank, seed=seed)
    except CurvatureError as exc:
        return p_fo, p_so, [], "curvature", str(exc)
    except NumericalError as exc:
        return p_fo, p_so, [], "failed", str(exc)
    status = "ok" if rec.converged else "not-converged"
    return p_fo, est.p_hat, [float(e) for e in spec.eigenvalues], status, None


def _branches(study: Study, cfg: RunConfig, records: list[OptimumRecord], errors) -> list[list[OptimumRecord]]:
    """Other local optimizers at the level of every successful sweep record.

    Candidates come from minimizations at the first successful lambda started
    at the reflection of its optimizer through the mean and at
    ``objective.starts - 1`` prior draws.  Each distinct branch is then
    followed along the sweep levels.
    """
    out: list[list[OptimumRecord]] = [[] for _ in records]
    ok = [i for i, e in enumerate(errors) if e is None and math.isfinite(records[i].z)]
    k = cfg["objective"]["starts"]
    if k == 0 or not ok:
        return out
    m = study.measure
    first = records[ok[0]]
    starts = [2.0 * m.mean - first.theta]
    if k > 1:
        starts.extend(m.sample(_derived_seed(cfg["seed"], 300), k - 1))
    found = find_local_optima(study.minimize, m, first.lam, [first.theta], starts)
    log.info("multi-start at lambda=%g found %d further optimizer(s)", first.lam, len(found))
    for b, branch in enumerate(found):
        prev = branch
        for i in ok:
            rec = records[i]
            try:
                at = solve_at_level(study.minimize, rec.z, prev.lam * rec.z / prev.z, prev.theta)
            except NumericalError as exc:
                log.warning("branch %d lost at z=%g: %s", b + 1, rec.z, exc)
                break
            if not is_distinct(m, at.theta, [rec.theta]):
                log.warning("branch %d merged with the sweep optimizer at z=%g", b + 1, rec.z)
                break
            out[i].append(at)
            prev = at
    return out


def cmd_sweep(cfg: RunConfig, out: Outputs, workers: int) -> dict:
    study = Study.from_config(cfg)
    records, errors = _run_sweep(study, cfg, workers)
    branches = _branches(study, cfg, records, errors)
    rank = cfg["estimator"]["rank"]
    rows, entries, theta_rows = [], [], []
    for i, (rec, err) in enumerate(zip(records, errors)):
        nan = float("nan")
        p_fo = p_so = nan
        eigs: list[float] = []
        others = []
        if err is not None:
            flag = "failed"
            log.error("lambda=%g failed: %s", rec.lam, err)
        else:
            p_fo, p_so, eigs, flag, err = _asymptotics(study, rec, rank, _derived_seed(cfg["seed"], 100 + i))
            for j, b in enumerate(branches[i]):
                if b.I < rec.I:
                    log.warning("z=%g: another optimizer has a lower rate (%g < %g)", rec.z, b.I, rec.I)
                bseed = _derived_seed(cfg["seed"], 1000 * (j + 1) + i)
                bfo, bso, beigs, bflag, berr = _asymptotics(study, b, rank, bseed)
                # totals sum the contributions of all optimizers at this level
                p_fo += bfo
                p_so += bso
                others.append(record_to_json(b, {"P_FO": _finite_or_none(bfo), "P_SO": _finite_or_none(bso),
                                                 "eigenvalues": beigs, "status": bflag, "error": berr}))
        I_min = min([rec.I] + [b.I for b in branches[i]])
        rows.append((rec.lam, rec.z, rec.I, I_min, rec.iterations, rec.converged, rec.kkt, p_fo, p_so,
                     nan if rec.t_star is None else rec.t_star, 1 + len(others), flag))
        entries.append(record_to_json(rec, {"P_FO": _finite_or_none(p_fo), "P_SO": _finite_or_none(p_so),
                                            "eigenvalues": eigs, "status": flag, "error": err,
                                            "branches": others}))
        theta_rows.append(rec.theta)
    out.csv("sweep.csv", ["lambda", "z", "I_star", "I_min", "iterations", "converged", "kkt", "P_FO", "P_SO",
                          "t_star", "optimizers", "status"], rows)
    write_slip_samples(np.array(theta_rows), out.path("optimizers.csv"))
    if study.model is not None:
        x = study.model.mesh.nodes
        out.csv("bathymetry_B0.csv", ["x", "B"], zip(x, study.model.B0))
        for rec in records:
            if np.all(np.isfinite(rec.theta)):
                B = study.model.bathymetry(rec.theta).B
                out.csv(f"bathymetry_lam{_lam_tag(rec.lam)}.csv", ["x", "B"], zip(x, B))
    z = np.array([r.z for r in records])
    fin = np.isfinite(z)
    monotone = bool(np.all(np.diff(z[fin]) > 0))
    if not monotone:
        log.warning("z(lambda) is not strictly increasing along the sweep")
    data = {"problem": cfg["problem"], "kind": study.kind, "warm": cfg["objective"]["warm"],
            "records": entries, "z_increasing": monotone, "config_hash": cfg.hash}
    out.json(SWEEP_FILE, data)
    nfail = sum(1 for r in entries if r["status"] == "failed")
    return {"records": len(entries), "failed": nfail, "z_increasing": monotone}


def cmd_estimate(cfg: RunConfig, out: Outputs, workers: int) -> dict:
    study = Study.from_config(cfg)
    e = cfg["estimator"]
    methods = list(dict.fromkeys(e["methods"]))
    needs_sweep = [m for m in methods if m in ("is", "form", "sorm", "fit")]
    sweep = load_sweep(cfg, out.root, f"method '{needs_sweep[0]}'") if needs_sweep else None
    recs = _usable(sweep["records"]) if sweep else []
    if sweep and not recs:
        raise NumericalError("the sweep artifact holds no successful optimizer")
    recs.sort(key=lambda r: r["z"])
    if e["z_grid"] is not None:
        zs = np.array(e["z_grid"], dtype=float)
    elif recs:
        zs = np.array([r["z"] for r in recs])
    else:
        raise ConfigError("missing config key 'estimator.z_grid' (needed when no sweep artifact is used)")
    seed = cfg["seed"]
    N = e["N"]
    curves: dict[str, list] = {}
    if "mc" in methods or "fit" in methods:
        vals = mc_values(study.F, study.measure, N, seed, workers)
        mc = mc_from_values(vals, list(zs))
        if "mc" in methods:
            curves["mc"] = mc
    if "is" in methods:
        # one mixture component per optimizer at the level
        optima = [OptimizerPoint(np.array([p.theta for p in _points(r)]), r["lambda"], r["z"], r["I"]) for r in recs]
        N_is = N if e["N_is"] is None else e["N_is"]
        curves["is"] = is_curve(study.F, study.measure, optima, zs, N_is, _derived_seed(seed, 1), workers)
    if "form" in methods:
        curves["form"] = [combine_estimates([form_estimate(p) for p in _points(r)], r["z"]) for r in recs]
    if "sorm" in methods:
        sorm = []
        for r in recs:
            try:
                parts = [sorm_from_eigenvalues(_point(r), r["eigenvalues"])]
                parts += [sorm_from_eigenvalues(_point(b), b["eigenvalues"]) for b in r.get("branches", [])]
                sorm.append(combine_estimates(parts, r["z"]))
            except CurvatureError as exc:
                log.warning("lambda=%g: %s", r["lambda"], exc)
        curves["sorm"] = sorm
    summary: dict = {"methods": methods, "N": N}
    sz = [r["z"] for r in recs]
    sI = [r["I"] for r in recs]
    if "fit" in methods:
        C0, zc, pc = fit_constant_prefactor(zs, [m.p_hat for m in mc], sz, sI, tuple(e["fit_window"]))
        summary["fit_C0"] = C0
        curves["fit"] = [_Row(float(a), float(b), "fit") for a, b in zip(zc, pc)]
    header = ["z", "p", "ci_low", "ci_high", "method"]
    merged = []
    for name in methods:
        rows = [_row(est) for est in curves[name]]
        out.csv(f"estimate_{name}.csv", header, rows)
        merged.extend(rows)
    out.csv("estimate_all.csv", header, merged)
    if recs:
        pre = []
        for name in methods:
            rows = [_row(est) for est in curves[name]]
            zz = np.array([r[0] for r in rows])
            pp = np.array([r[1] for r in rows])
            inside = (zz >= min(sz)) & (zz <= max(sz))
            C = prefactor_extract(zz[inside], pp[inside], sz, sI)
            pre.extend((a, b, name) for a, b in zip(zz[inside], C))
        out.csv("prefactor.csv", ["z", "C0", "method"], pre)
    out.json("estimate.json", summary)
    return summary


class _Row:
    def __init__(self, z, p, method):
        self.z, self.p_hat, self.method = z, p, method
        self.ci_low = self.ci_high = None


def _row(est) -> tuple:
    nan = float("nan")
    lo = nan if est.ci_low is None else est.ci_low
    hi = nan if est.ci_high is None else est.ci_high
    return (est.z, est.p_hat, lo, hi, est.method)


def cmd_eigs(cfg: RunConfig, out: Outputs, workers: int) -> dict:
    study = Study.from_config(cfg)
    sweep = load_sweep(cfg, out.root, "eigs")
    lam = cfg["objective"]["lam"]
    recs = [r for r in _usable(sweep["records"]) if math.isclose(r["lambda"], lam, rel_tol=1e-9)]
    if not recs:
        have = [r["lambda"] for r in sweep["records"]]
        raise ConfigError(f"no successful sweep record for objective.lam={lam:g} (sweep has {have})")
    r = cfg["eigs"]["rank"]
    if r > study.dim - 1:
        log.warning("rank %d exceeds n - 1 = %d; clamped", r, study.dim - 1)
        r = study.dim - 1
    pt = _point(recs[0])
    est, spec = sorm_estimate_lowrank(pt, study.measure, study.hvp(pt.theta), r, seed=cfg["seed"])
    out.csv(f"spectrum_lam{_lam_tag(lam)}.csv", ["i", "lambda_i", "lam_lambda_i"], spec.rows())
    return {"lambda": lam, "rank": r, "scaled": [float(x) for x in spec.scaled], "P_SO": est.p_hat}


COMMANDS = {
    "solve": cmd_solve,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "estimate": cmd_estimate,
    "eigs": cmd_eigs,
}


# ----------------------------------------------------------------------------
# entry point


def _versions() -> dict:
    import scipy

    return {"ldtprob": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "backend": BACKEND}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldtprob", description="Rare event probabilities via large deviation theory.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML/JSON run configuration (or a previous manifest.json)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="random seed, 0 <= seed < 2^64 (overrides seed)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: number of cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _write_manifest(root: Path, manifest: dict) -> None:
    """Write ``manifest_<command>.json`` and a copy as ``manifest.json`` (latest run)."""
    root.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
    (root / f"manifest_{manifest['command']}.json").write_text(text)
    (root / "manifest.json").write_text(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = RunConfig.from_file(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output"] = {"dir": args.out}
        if overrides:
            cfg = cfg.replace(**overrides)
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise ConfigError("--workers must be at least 1")
    except ConfigError as exc:
        print(f"ldtprob: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    root = Path(cfg["output"]["dir"])
    manifest = {
        MANIFEST_KEY: 1,
        "command": args.command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "seed": cfg["seed"],
        "workers": workers,
        "versions": _versions(),
    }
    code, message, result = EXIT_OK, None, None
    outs = None
    try:
        outs = Outputs(root)
        result = COMMANDS[args.command](cfg, outs, workers)
    except ConfigError as exc:
        code, message = EXIT_CONFIG, f"configuration error: {exc}"
    except NumericalError as exc:
        code, message = EXIT_NUMERICAL, f"numerical failure: {exc}"
    except OSError as exc:
        code, message = EXIT_CONFIG, f"cannot write output: {exc}"
    manifest["status"] = "ok" if code == EXIT_OK else "error"
    manifest["exit_code"] = code
    manifest["message"] = message
    manifest["result"] = result
    manifest["outputs"] = outs.files if outs else []
    manifest["wall_time_s"] = time.perf_counter() - t0
    try:
        _write_manifest(root, manifest)
    except OSError as exc:
        print(f"ldtprob: cannot write manifest: {exc}", file=sys.stderr)
    if message:
        print(f"ldtprob {args.command}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
