"""Task dispatch: configuration in, CSV / JSON artifacts and a manifest out."""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import free_gamma
from .config import ExperimentConfig, build_model
from .drivers import ConstantModel, OrbitSeed, member_seed
from .exceptional import (Schedule, Weight, build_cover, cover_shrinkage, gauge_catalog, gauge_content, liminf_scan,
                          pn_scan, restricted_growth, subseq_statistic)
from .io import sha256_file, write_csv, write_json
from .lyapunov import ldp_tail, lyapunov_spectra, lyapunov_spectrum
from .operators import green_block, ids_estimate, thouless_residual, thouless_test_points
from .subharmonic import (ComplexGrid, analytic_field, circular_mean, defect_tolerance, field_gamma,
                          log_potential, riesz_measure, submean_defect)
from .symplectic import LagrangianFrame

OUT_ENV = "COCYCLELAB_OUT"

# index of the ensemble member that seeds single-orbit statistics
_ORBIT_INDEX = 1 << 40


class TaskError(RuntimeError):
    def __init__(self, module: str, operation: str, digest: str, cause: BaseException):
        self.module, self.operation, self.digest, self.cause = module, operation, digest, cause
        super().__init__(f"{module}.{operation} failed ({type(cause).__name__}: {cause})")

    def report(self) -> dict:
        return {"error": "task", "module": self.module, "operation": self.operation,
                "inputs_digest": self.digest, "type": type(self.cause).__name__,
                "message": str(self.cause)}


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list] = field(default_factory=list)


@dataclass
class TaskResult:
    tables: list[Table]
    summary: dict


def _orbit(seed: int) -> OrbitSeed:
    return member_seed(seed, _ORBIT_INDEX)


def _reference(model, E, cfg, p):
    return lyapunov_spectrum(model, E, p["ref_n"], p["ref_samples"], cfg.seed, threads=cfg.threads or 1)


def _grid(p) -> ComplexGrid:
    g = p["grid"]
    return ComplexGrid(g["x0"], g["x1"], g["y0"], g["y1"], g["h"])


def _energies(spec) -> np.ndarray:
    return np.linspace(spec["start"], spec["stop"], spec["num"])


def _field(model, cfg, p):
    grid = _grid(p)
    if p["estimator"] == "analytic":
        if not (isinstance(model, ConstantModel) and model.W == 1 and not np.any(model.V)):
            raise ValueError("the analytic estimator is only available for the free scalar model")
        return analytic_field(grid, free_gamma, p["k"])
    return field_gamma(model, grid, p["n"], p["k"], p["samples"], cfg.seed, p["shared"],
                       p["estimator"], cfg.threads or 1)


# -- tasks ----------------------------------------------------------------------


def task_lyapunov(model, cfg, p) -> TaskResult:
    ests = lyapunov_spectra(model, p["z"], p["n"], p["samples"], cfg.seed, p["stride"], cfg.threads or 1)
    t = Table("lyapunov", ["z_re", "z_im", "j", "gamma", "stderr"])
    for e in ests:
        W = e.W
        for j in range(2 * W):
            se = e.stderr[j] if j < W else e.stderr[2 * W - 1 - j]
            t.rows.append([e.z.real, e.z.imag, j + 1, e.gamma[j], se])
    return TaskResult([t], {"n": p["n"], "samples": p["samples"]})


def task_field(model, cfg, p) -> TaskResult:
    fld = _field(model, cfg, p)
    t = Table("field", ["x", "y", "value", "stderr"])
    se = fld.stderr if fld.stderr is not None else np.full(fld.values.shape, math.nan)
    Z = fld.grid.Z
    for idx in np.ndindex(Z.shape):
        t.rows.append([Z[idx].real, Z[idx].imag, fld.values[idx], se[idx]])
    return TaskResult([t], {"k": fld.k, "n": fld.n, "samples": fld.samples,
                            "submean_defect": submean_defect(fld), "tolerance": defect_tolerance(fld),
                            })


def task_riesz(model, cfg, p) -> TaskResult:
    fld = _field(model, cfg, p)
    mu = riesz_measure(fld, max_radius=p["max_radius"])
    t = Table("riesz", ["x", "y", "mass"])
    C = mu.centers
    for idx in np.ndindex(C.shape):
        t.rows.append([C[idx].real, C[idx].imag, mu.cell_mass[idx]])
    summary = {"total": mu.total, "negative_clipped": mu.negative_clipped,
               "negative_raw": mu.negative_raw, "boundary_fraction": mu.boundary_fraction,
               "ball_mass_bound": mu.ball_mass_bound, }
    if p["strip"] is not None:
        a, b = p["strip"]
        summary["strip"] = [a, b]
        summary["strip_mass"] = mu.mass_in(a, b)
    tables = [t]
    if p["potential_at"] is not None:
        pot = Table("potential", ["z_re", "z_im", "potential"])
        for z in p["potential_at"]:
            pot.rows.append([z.real, z.imag, log_potential(mu, z)])
        tables.append(pot)
    return TaskResult(tables, summary)


def task_circular(model, cfg, p) -> TaskResult:
    t = Table("circular", ["R", "j", "M", "stderr"])
    for R in p["R"]:
        cm = circular_mean(model, R, p["ntheta"], p["n"], p["samples"], cfg.seed, cfg.threads or 1)
        for j in range(model.W):
            t.rows.append([R, j + 1, cm.M[j], cm.stderr[j]])
    return TaskResult([t], {"ntheta": p["ntheta"], "n": p["n"]})


def task_ids(model, cfg, p) -> TaskResult:
    ids = ids_estimate(model, p["L"], p["samples"], cfg.seed, threads=cfg.threads or 1)
    lo, hi = ids.support_hull
    E = _energies(p["energies"]) if p["energies"] else np.linspace(lo - 0.5, hi + 0.5, 201)
    t = Table("ids", ["E", "kappa"], [[e, k] for e, k in zip(E, ids.kappa(E))])
    return TaskResult([t], {"support_hull": [lo, hi], "eigenvalues": int(ids.eigenvalues.size),
                            })


def task_thouless(model, cfg, p) -> TaskResult:
    ids = ids_estimate(model, p["L"], p["samples"], cfg.seed, threads=cfg.threads or 1)
    pts = np.array(p["points"]) if p["points"] else thouless_test_points(ids.support_hull)
    ests = lyapunov_spectra(model, pts, p["n"], p["lyap_samples"], cfg.seed, threads=cfg.threads or 1)
    G = np.array([e.Gamma(model.W) for e in ests])
    rep = thouless_residual(pts, G, ids)
    keep = {complex(z) for z in rep.points}
    t = Table("thouless", ["z_re", "z_im", "Gamma_W", "potential", "difference"])
    pot = ids.log_potential(pts)
    for z, g, u in zip(pts, G, pot):
        if complex(z) in keep:
            t.rows.append([z.real, z.imag, g, u, g / model.W - u])
    return TaskResult([t], {"residual": rep.residual, "excluded": len(rep.excluded)})


def task_scan_liminf(model, cfg, p) -> TaskResult:
    E = _energies(p["energies"])
    # reference exponents on a coarse sub-grid, interpolated
    coarse = np.linspace(E[0], E[-1], min(E.size, 51))
    refs = lyapunov_spectra(model, coarse, p["ref_n"], p["ref_samples"], cfg.seed, threads=cfg.threads or 1)
    gW = np.interp(E, coarse, [r.gamma[model.W - 1] for r in refs])
    eps = None if p["eps"] is None else p["eps"]
    rep = liminf_scan(model, _orbit(cfg.seed), E, Schedule(p["tau"], p["i_max"], p["i_min"]), gW, eps,
                      cfg.threads or 1)
    t = Table("scan", ["E", "statistic", "reference"],
              [[e, s, r] for e, s, r in zip(rep.energies, rep.statistic, rep.reference)])
    return TaskResult([t], {"levels": list(rep.levels), "dips": rep.dips})


def task_scan_pn(model, cfg, p) -> TaskResult:
    E = _energies(p["energies"])
    w = p["weight"]
    rep = pn_scan(model, _orbit(cfg.seed), E, Weight(w["kind"], w["param"], w["scale"]), p["n_max"],
                  p["threshold"], cfg.threads or 1)
    t = Table("scan", ["E", "statistic", "log_statistic"],
              [[e, s, ls] for e, s, ls in zip(rep.energies, rep.statistic, rep.log_statistic)])
    return TaskResult([t], {"n_max": p["n_max"], "dips": rep.dips})


def task_cover(model, cfg, p) -> TaskResult:
    a, b = p["interval"]
    ref = _reference(model, a, cfg, p)
    catalog = gauge_catalog()
    names = p["gauges"] if p["gauges"] is not None else list(catalog)
    unknown = [n for n in names if n not in catalog]
    if unknown:
        raise ValueError(f"unknown gauges {unknown}; available: {list(catalog)}")
    t = Table("cover", ["level", "a", "b"])
    covers = []
    for lv in p["levels"]:
        c = build_cover(model, _orbit(cfg.seed), (a, b), p["eps"], lv, ref)
        t.rows.extend([lv, lo, hi] for lo, hi in c.intervals)
        covers.append({"level": lv, "threshold": c.threshold, "step": c.step,
                       "intervals": [list(iv) for iv in c.intervals],
                       "content": {n: gauge_content(c, catalog[n]) for n in names}})
    tables = [t]
    summary = {"eps": p["eps"], "covers": covers, }
    if p["orbits"] > 1:
        sh = cover_shrinkage(model, cfg.seed, (a, b), p["eps"], p["levels"], ref, p["orbits"])
        mean = Table("shrinkage", ["level", "mean_max_length", "mean_content_sqrt"],
                     [[lv, x, y] for lv, x, y in zip(sh.levels, sh.mean_max_length, sh.mean_content)])
        tables.append(mean)
        rate, r2 = sh.rate
        summary.update(orbits=p["orbits"], shrinkage_rate=rate, shrinkage_r2=r2)
    return TaskResult(tables, summary)


def task_subseq(model, cfg, p) -> TaskResult:
    ref = _reference(model, p["E"], cfg, p)
    rec = subseq_statistic(model, _orbit(cfg.seed), p["E"], p["N_max"], ref)
    t = Table("subseq", ["n", "value"], [[n, v] for n, v in zip(rec.ns, rec.values)])
    starts = [n for n in (10, 30, 100, 300) if n * n <= p["N_max"]]
    return TaskResult([t], {"gamma_ref": ref.gamma[: model.W], "min_value": rec.min_value,
                            "argmin": rec.argmin, "window_starts": starts,
                            "window_minima": rec.window_minima(starts)})


def task_restricted(model, cfg, p) -> TaskResult:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    t = Table("restricted", ["index", "volume_rate", "min_column_rate", "unrestricted"])
    for i in range(p["frames"]):
        F = LagrangianFrame.dirichlet(model.W) if p["frame"] == "dirichlet" else LagrangianFrame.random(model.W, rng)
        r = restricted_growth(model, member_seed(cfg.seed, _ORBIT_INDEX + i), p["z"], F, p["n"])
        t.rows.append([i, r.volume_rate, r.min_column_rate, r.unrestricted])
    return TaskResult([t], {"z": p["z"], "n": p["n"]})


def task_green(model, cfg, p) -> TaskResult:
    g = green_block(model, _orbit(cfg.seed), p["z"], range(p["n_min"], p["n_max"] + 1), p["L"])
    t = Table("green", ["n", "norm"], [[n, v] for n, v in zip(g.ns, g.norms)])
    return TaskResult([t], {"z": g.z, "rate": g.rate, "r2": g.r2, "prefactor": g.prefactor,
                            "combes_thomas_ratio": g.combes_thomas_ratio})


def task_ldp(model, cfg, p) -> TaskResult:
    ref = _reference(model, p["E"], cfg, p)
    c = ldp_tail(model, p["E"], p["j"], p["epsilon"], p["n_list"], p["M"], ref, cfg.seed,
                 cfg.threads or 1)
    t = Table("ldp", ["n", "p_hat"], [[n, v] for n, v in zip(c.n_list, c.p_hat)])
    return TaskResult([t], {"gamma_ref": float(ref.gamma[p["j"] - 1]), "rate": c.rate,
                            "prefactor": c.prefactor, "r2": c.r2, "censored": c.censored,
                            "strictly_decreasing": c.strictly_decreasing})


TASK_FUNCS = {
    "lyapunov": ("lyapunov", "lyapunov_spectra", task_lyapunov),
    "field": ("subharmonic", "field_gamma", task_field),
    "riesz": ("subharmonic", "riesz_measure", task_riesz),
    "circular": ("subharmonic", "circular_mean", task_circular),
    "ids": ("operators", "ids_estimate", task_ids),
    "thouless": ("operators", "thouless_residual", task_thouless),
    "scan-liminf": ("exceptional", "liminf_scan", task_scan_liminf),
    "scan-pn": ("exceptional", "pn_scan", task_scan_pn),
    "cover": ("exceptional", "build_cover", task_cover),
    "subseq": ("exceptional", "subseq_statistic", task_subseq),
    "restricted": ("exceptional", "restricted_growth", task_restricted),
    "green": ("operators", "green_block", task_green),
    "ldp": ("lyapunov", "ldp_tail", task_ldp),
}


def resolve_out(cli_out: str | None, cfg: ExperimentConfig) -> Path:
    return Path(cli_out or os.environ.get(OUT_ENV) or cfg.out or "cocyclelab-out")


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Run the configured task, write its artifacts and return the manifest."""
    start = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    module, op, func = TASK_FUNCS[cfg.task]
    model = build_model(cfg.model)
    try:
        res = func(model, cfg, cfg.params)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise TaskError(module, op, cfg.digest(), exc) from exc
    stem = cfg.task.replace("-", "_")
    files, columns = [], {}
    for t in res.tables:
        path = write_csv(out_dir / f"{stem}_{t.name}.csv", t.header, t.rows)
        files.append(path)
        columns[path.name] = t.header
    summary = {"task": cfg.task, "seed": cfg.seed, "model": cfg.model, **res.summary,
               "tables": {f"{stem}_{t.name}.csv": t.rows for t in res.tables}}
    files.append(write_json(out_dir / f"{stem}_summary.json", summary))
    numeric = hashlib.sha256()
    for f in files:
        numeric.update(f.name.encode())
        numeric.update(f.read_bytes())
    manifest = {
        "task": cfg.task,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "threads": cfg.threads,
        "wall_time_s": time.perf_counter() - start,
        "files": {f.name: sha256_file(f) for f in files},
        "columns": columns,
        "numeric_hash": numeric.hexdigest(),
        "float_format": "17 significant digits",
    }
    write_json(out_dir / "manifest.json", manifest)
    return manifest

