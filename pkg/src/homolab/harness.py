"""Config-driven experiment runner: dispatch, CSV/JSON output, acceptance checks."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .corrector import localization_gap
from .homog import (
    fluctuation_experiment,
    systematic_experiment,
    weight_independence_experiment,
)
from .material import family_from_config, validate_assumptions
from .randomfield import empirical_spectral_gap_ratio, sample_parameter_field
from .rates import fit_rate, seed_stream
from .twoscale import homogenization_error_experiment

__all__ = ["run_experiment", "RunOutput", "check_bounds"]


# slope windows used by --check, keyed by (kind, d)
ACCEPTANCE_BOUNDS = {
    ("fluctuation", 1): (-0.65, -0.35),
    ("fluctuation", 2): (-1.3, -0.7),
    ("systematic", 1): (None, -0.8),
    ("localization", 1): (-0.7, -0.3),
    ("homogenization_error", 1): (0.35, 0.65),
    ("homogenization_error", 2): (0.7, 1.3),
}


class RunOutput:
    def __init__(self, out_dir: Path, summary: dict, rows: list, columns: list[str]):
        self.out_dir = out_dir
        self.summary = summary
        self.rows = rows
        self.columns = columns
        self.csv_path: Path | None = None
        self.json_path: Path | None = None


def _family(cfg: ExperimentConfig):
    fam = family_from_config(cfg.family, cfg.d)
    report = validate_assumptions(fam)
    if not report.passed:
        raise ConfigError(f"family fails assumption audit: {report.passes}")
    return fam


def _xi(cfg: ExperimentConfig, fam):
    xi = cfg.options.get("xi", 1.0)
    if np.isscalar(xi):
        arr = np.zeros((fam.m, fam.d))
        arr[0, 0] = float(xi)
        return arr
    return np.asarray(xi, dtype=float).reshape(fam.m, fam.d)


def _run_localization(cfg: ExperimentConfig, fam):
    eps = float(cfg.field.get("epsilon", 1 / 256))
    n = int(cfg.grid.get("n", 1024))
    L = float(cfg.grid.get("L", 1.0))
    from .grid import PeriodicGrid

    grid = PeriodicGrid(d=cfg.d, n=n, L=L)
    T_list = sorted(float(t) * eps**2 for t in cfg.sweep.get("T_over_eps2", [4, 16, 64, 256]))
    xi = _xi(cfg, fam)
    rows = []
    means = []
    for T in T_list:
        gaps = []
        for s in range(cfg.n_samples):
            seed = seed_stream(cfg.base_seed, len(rows))
            omega = sample_parameter_field(grid, eps, seed=seed,
                                           kernel=cfg.field.get("kernel", "gaussian-bump"))
            lg = localization_gap(omega, fam, xi, T, tol=cfg.tol)
            gaps.append(lg.gap)
            rows.append({"T": T, "sqrtT": np.sqrt(T), "sample": s, "seed": seed, "gap": lg.gap})
        means.append(float(np.sqrt(np.mean(np.square(gaps)))))
    fit = fit_rate(np.sqrt(T_list), means)
    summary = {"kind": "localization", "fit": asdict(fit),
               "sqrtT": list(map(float, np.sqrt(T_list))), "gap_rms": means}
    return rows, ["T", "sqrtT", "sample", "seed", "gap"], summary, fit.slope


def _run_spectral_gap(cfg: ExperimentConfig, fam):
    from .grid import PeriodicGrid

    eps = float(cfg.field.get("epsilon", 1 / 32))
    n = int(cfg.grid.get("n", 256))
    L = float(cfg.grid.get("L", 1.0))
    grid = PeriodicGrid(d=cfg.d, n=n, L=L)
    radius = float(cfg.options.get("radius", 8 * eps))

    def sampler(i):
        return sample_parameter_field(grid, eps, seed=seed_stream(cfg.base_seed, i),
                                      kernel=cfg.field.get("kernel", "gaussian-bump"))

    diag = empirical_spectral_gap_ratio(sampler, radius, cfg.n_samples)
    rows = [{"radius": diag.radius, "ratio": diag.ratio, "stderr": diag.stderr,
             "n_samples": diag.n_samples}]
    summary = {"kind": "spectral_gap", "ratio": diag.ratio, "stderr": diag.stderr}
    return rows, ["radius", "ratio", "stderr", "n_samples"], summary, None


def run_experiment(cfg: ExperimentConfig, out_dir=None, check: bool = False, workers: int = 1):
    """Run the configured experiment, write CSV rows + JSON summary, and return a RunOutput.

    With ``check``, the fitted slope is compared against the built-in acceptance
    window for (kind, d); the verdict lands in the summary as ``check_passed``.
    """
    fam = _family(cfg)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slope = None

    if cfg.kind == "fluctuation":
        res = fluctuation_experiment(
            d=cfg.d, fam=fam, xi=_xi(cfg, fam),
            L_over_eps_list=cfg.sweep.get("L_over_eps", [8, 16, 32, 64]),
            epsilon=float(cfg.field.get("epsilon", 1.0)),
            field_cfg=cfg.field, n_samples=cfg.n_samples,
            base_seed=cfg.base_seed, tol=cfg.tol,
            use_oracle=cfg.options.get("use_oracle"), workers=workers,
        )
        rows, columns = res.rows, ["L_over_eps", "sample", "seed", "value"]
        summary = {"kind": cfg.kind, "fit": asdict(res.fit),
                   "L_over_eps": res.L_over_eps.tolist(), "sd": res.sd.tolist()}
        slope = res.fit.slope
    elif cfg.kind == "systematic":
        res = systematic_experiment(
            d=cfg.d, fam=fam, xi=_xi(cfg, fam),
            L_over_eps_list=cfg.sweep.get("L_over_eps", [8, 16, 32, 64]),
            epsilon=float(cfg.field.get("epsilon", 1.0)),
            field_cfg=cfg.field, n_samples=cfg.n_samples,
            base_seed=cfg.base_seed, tol=cfg.tol,
            use_oracle=cfg.options.get("use_oracle"), workers=workers,
        )
        rows, columns = res.rows, ["L_over_eps", "sample", "seed", "value"]
        summary = {"kind": cfg.kind, "bias": res.bias.tolist(), "sd": res.sd.tolist(),
                   "reference": res.reference, "conclusive": res.conclusive,
                   "fit": asdict(res.fit) if res.fit else None}
        slope = res.fit.slope if res.fit else None
    elif cfg.kind == "weight_independence":
        res = weight_independence_experiment(
            d=cfg.d, fam=fam, xi=_xi(cfg, fam),
            L_over_eps=float(cfg.sweep.get("L_over_eps", [16])[0]),
            T_over_eps2=float(cfg.sweep.get("T_over_eps2", [4])[0]),
            epsilon=float(cfg.field.get("epsilon", 1.0)),
            field_cfg=cfg.field, n_samples=cfg.n_samples,
            base_seed=cfg.base_seed, tol=cfg.tol,
        )
        rows = [{"mean_a": res.means[0], "mean_b": res.means[1],
                 "difference": res.difference, "combined_se": res.combined_se,
                 "n_samples": res.n_samples}]
        columns = list(rows[0])
        summary = {"kind": cfg.kind, "consistent": res.consistent, **rows[0]}
    elif cfg.kind == "homogenization_error":
        from .homog import scalar_effective_table
        from .material import scalar_linear_family

        eps_list = cfg.sweep.get("epsilon", [2**-3, 2**-4, 2**-5])
        if cfg.family.get("name") == "linear" and cfg.d >= 1:
            base, spread = float(cfg.family.get("base", 1.5)), float(cfg.family.get("spread", 0.5))
            a_eff = float(cfg.options.get("a_eff", base))

            def a_hom(g):
                return a_eff * g
        else:
            a_hom = scalar_effective_table(
                fam, xi_max=float(cfg.options.get("xi_max", 8.0)),
                epsilon=min(eps_list), field_cfg=cfg.field,
            )
        res = homogenization_error_experiment(
            d=cfg.d, fam=fam, a_hom=a_hom, n=int(cfg.grid.get("n", 1024)),
            L=float(cfg.grid.get("L", 1.0)), epsilons=eps_list,
            n_samples=cfg.n_samples, base_seed=cfg.base_seed, tol=cfg.tol,
            field_cfg=cfg.field, profile=cfg.options.get("profile"),
            dirichlet=bool(cfg.options.get("dirichlet", False)), workers=workers,
        )
        rows, columns = res.rows, ["epsilon", "sample", "seed", "error"]
        summary = {"kind": cfg.kind, "fit": asdict(res.fit),
                   "epsilons": res.epsilons.tolist(), "errors": res.errors.tolist()}
        slope = res.fit.slope
    elif cfg.kind == "localization":
        rows, columns, summary, slope = _run_localization(cfg, fam)
    elif cfg.kind == "spectral_gap":
        rows, columns, summary, slope = _run_spectral_gap(cfg, fam)
    elif cfg.kind == "structure":
        from .grid import PeriodicGrid
        from .homog import structure_checks

        eps = float(cfg.field.get("epsilon", 1 / 8))
        n = int(cfg.grid.get("n", 64))
        grid = PeriodicGrid(d=cfg.d, n=n, L=float(cfg.grid.get("L", 1.0)))

        def sampler(i):
            return sample_parameter_field(grid, eps, seed=seed_stream(cfg.base_seed, i))

        xi = _xi(cfg, fam)
        rep = structure_checks(fam, sampler, [(xi, 2.0 * xi), (0.5 * xi, xi)],
                               n_samples=cfg.n_samples, tol=cfg.tol)
        rows = [{"monotonicity_min": rep.monotonicity_min, "lipschitz_max": rep.lipschitz_max,
                 "isotropy_error": rep.isotropy_error_max, "isotropy_threshold": rep.isotropy_threshold,
                 "passed": rep.passed}]
        columns = list(rows[0])
        summary = {"kind": cfg.kind, "passes": rep.passes, "passed": rep.passed}
    else:
        raise ConfigError(f"no runner for kind {cfg.kind!r}")

    summary["version"] = __version__
    summary["config"] = {"kind": cfg.kind, "d": cfg.d, "family": cfg.family,
                         "n_samples": cfg.n_samples, "base_seed": cfg.base_seed, "tol": cfg.tol}
    if check:
        summary["check_passed"] = check_bounds(cfg.kind, cfg.d, slope, summary)

    # every row carries full provenance
    provenance = {"kind": cfg.kind, "d": cfg.d, "family": cfg.family.get("name"),
                  "tol": cfg.tol, "version": __version__}
    rows = [{**provenance, **row} for row in rows]
    columns = list(provenance) + columns

    output = RunOutput(out, summary, rows, columns)
    if rows:
        output.csv_path = out / f"{cfg.kind}.csv"
        with open(output.csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
    output.json_path = out / f"{cfg.kind}_summary.json"
    output.json_path.write_text(json.dumps(summary, indent=2, default=float))
    return output


def check_bounds(kind: str, d: int, slope: float | None, summary: dict) -> bool:
    """Compare a fitted slope (or kind-specific verdict) to the acceptance window."""
    if kind == "weight_independence":
        return bool(summary.get("consistent"))
    if kind == "structure":
        return bool(summary.get("passed"))
    if kind == "spectral_gap":
        return True
    window = ACCEPTANCE_BOUNDS.get((kind, d))
    if window is None or slope is None:
        return False
    lo, hi = window
    return (lo is None or slope >= lo) and (hi is None or slope <= hi)
