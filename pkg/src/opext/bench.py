"""Desk-scale experiment grids: configs, runners, CSV/Markdown tables and manifests.

Every runner writes into ``<out>/<table>/``: a CSV with the numeric cells, a
Markdown rendering and ``manifest.json`` (config, content hash, seeds, output
checksums). Reruns with an equal config reproduce the CSV cells exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .extension import ResponseCache, _inputs_on_cloud, bound_reports, estimate_c1, fit_inputs, write_reports
from .geometry import (
    fill_distance,
    farthest_point_sample,
    sample_radial_manifold,
    save_cloud,
    separation_radius,
    shape_preset,
)
from .kernels import KernelSpec
from .lb import MeshfreeOracle, PerturbedOracle, SpectralSphereOracle, make_test_functions, make_training_pairs, write_pairs
from .rkhs import assemble_gram, condition_number, error_norms

logger = logging.getLogger(__name__)

__all__ = [
    "KernelGrid",
    "InputFunctionSpec",
    "TrainSection",
    "ConvergenceSection",
    "ExperimentConfig",
    "TableResult",
    "run_table_h1",
    "run_table_l2",
    "run_table_l1",
    "run_table_cond",
    "run_train",
    "run_convergence",
    "run_extend",
    "run_fit",
    "run_solve",
    "geometry_summary",
    "TABLES",
]


@dataclass
class KernelGrid:
    family: str
    nu_or_k: str = "0"
    sigmas: list = field(default_factory=lambda: [5.0, 10.0])

    def specs(self) -> list[KernelSpec]:
        return [KernelSpec(self.family, Fraction(self.nu_or_k), float(s)) for s in self.sigmas]


def _default_kernels():
    return [
        KernelGrid("gaussian", "0", [5.0, 10.0]),
        KernelGrid("matern", "1/2", [5.0, 10.0]),
        KernelGrid("matern", "3/2", [5.0, 10.0]),
        KernelGrid("wendland", "0", [5 / 3, 10 / 3]),
        KernelGrid("wendland", "2", [5 / 3, 10 / 3]),
    ]


@dataclass
class InputFunctionSpec:
    max_degrees: list = field(default_factory=lambda: [3, 6, 8, 10, 12])
    per_degree: int = 3
    seed: int = 0

    def build(self):
        return make_test_functions(self.max_degrees, self.per_degree, self.seed)


@dataclass
class TrainSection:
    n_cloud: int = 512
    n_pairs: int = 64
    n_heldout: int = 16
    kernel: dict = field(default_factory=lambda: {"family": "matern", "nu_or_k": "3/2", "sigma": 5.0})
    gnp: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


@dataclass
class ConvergenceSection:
    kernel: dict = field(default_factory=lambda: {"family": "matern", "nu_or_k": "3/2", "sigma": 5.0})
    centers: list = field(default_factory=lambda: [156, 312, 625, 1250])
    max_degree: int = 8
    function_seed: int = 0


@dataclass
class ExperimentConfig:
    """Everything a run depends on; serialized verbatim into the manifest."""

    name: str = "desk"
    manifold: str = "sphere"
    n_cloud: int = 4000
    kernels: list = field(default_factory=_default_kernels)
    centers: list = field(default_factory=lambda: [312, 625, 1250, 2500])
    lam: float = 1e-10
    oracle: str = "auto"
    deltas: list = field(default_factory=lambda: [0.0])
    perturb_seed: int = 0
    checkpoint: str | None = None
    test_functions: InputFunctionSpec = field(default_factory=InputFunctionSpec)
    c1_probes: int = 8
    seed: int = 0
    out: str = "runs"
    jobs: int = 1
    train: TrainSection = field(default_factory=TrainSection)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)

    def __post_init__(self):
        self.kernels = [k if isinstance(k, KernelGrid) else KernelGrid(**k) for k in self.kernels]
        for name, cls in (("test_functions", InputFunctionSpec), ("train", TrainSection), ("convergence", ConvergenceSection)):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, cls(**val))
        if self.oracle not in ("auto", "spectral", "meshfree", "gnp"):
            raise ValueError(f"unknown oracle kind {self.oracle!r}")

    def specs(self) -> list[KernelSpec]:
        return [s for grid in self.kernels for s in grid.specs()]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def content_hash(self) -> str:
        """Hash of the numeric inputs; output location and worker count excluded."""
        d = self.to_dict()
        d.pop("out", None)
        d.pop("jobs", None)
        blob = json.dumps(d, sort_keys=True) + __version__
        return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------ shared context


@dataclass
class _Context:
    cloud: object
    oracle: object
    reference: object
    functions: list
    truths: list
    c1: float


@lru_cache(maxsize=4)
def _context(config_json: str) -> _Context:
    config = ExperimentConfig.from_dict(json.loads(config_json))
    cloud = sample_radial_manifold(shape_preset(config.manifold), config.n_cloud, seed=config.seed)
    kind = config.oracle
    if kind == "auto":
        kind = "spectral" if cloud.shape.is_unit_sphere else "meshfree"
    if kind == "spectral":
        reference = SpectralSphereOracle(cloud)
    elif kind == "meshfree":
        reference = MeshfreeOracle(cloud)
    else:
        from .gnp import GnpOracle, load_checkpoint

        if not config.checkpoint:
            raise ValueError("oracle 'gnp' needs a checkpoint path")
        model, _, _ = load_checkpoint(config.checkpoint)
        reference = SpectralSphereOracle(cloud) if cloud.shape.is_unit_sphere else MeshfreeOracle(cloud)
        oracle = GnpOracle(model, cloud)
    if kind != "gnp":
        oracle = reference
    functions = config.test_functions.build()
    truths = [reference.solve_field(f) for f in functions]
    c1 = estimate_c1(reference, config.c1_probes, seed=config.seed)
    return _Context(cloud, oracle, reference, functions, truths, c1)


def _ctx(config: ExperimentConfig) -> _Context:
    return _context(json.dumps(config.to_dict(), sort_keys=True))


def _centers(config: ExperimentConfig, cloud, n: int) -> np.ndarray:
    if n > cloud.n:
        raise ValueError(f"{n} centers requested from a cloud of {cloud.n}")
    return farthest_point_sample(cloud, n, seed=config.seed)


# ------------------------------------------------------------ cell workers


def _cell_extension(config: ExperimentConfig, spec: KernelSpec, n: int) -> list[dict]:
    ctx = _ctx(config)
    centers = _centers(config, ctx.cloud, n)
    cache = None if ctx.oracle.kind == "spectral-sphere" else ResponseCache()
    rows = []
    for delta in config.deltas:
        oracle = ctx.oracle
        if delta > 0:
            oracle = PerturbedOracle(ctx.oracle, delta, seed=config.perturb_seed)
        reps = bound_reports(
            oracle, spec, ctx.cloud, centers, ctx.functions, config.lam,
            reference=ctx.reference, c1=ctx.c1, truths=ctx.truths, cache=cache,
        )
        for r in reps:
            d = r.to_dict()
            d["delta_injected"] = delta
            rows.append(d)
    return rows


def _cell_l1(config: ExperimentConfig, spec: KernelSpec, n: int) -> list[dict]:
    ctx = _ctx(config)
    centers = _centers(config, ctx.cloud, n)
    F, G = _inputs_on_cloud(ctx.cloud, ctx.functions)
    fit = fit_inputs(spec, ctx.cloud, centers, F, G, config.lam)
    rows = []
    for k in range(F.shape[1]):
        e = error_norms(F[:, k], fit.values[:, k], G[:, :, k], fit.grad[:, :, k], ctx.cloud.weights)
        rows.append({"kernel": spec.label, "sigma": spec.sigma, "N": n, "test_function": k, "l1_alpha": float(fit.l1[k]), **e})
    return rows


def _cell_cond(config: ExperimentConfig, spec: KernelSpec, n: int) -> list[dict]:
    ctx = _ctx(config)
    sys = assemble_gram(spec, ctx.cloud.points[_centers(config, ctx.cloud, n)])
    r0 = condition_number(sys, 0.0)
    rl = condition_number(sys, config.lam)
    return [{
        "kernel": spec.label, "sigma": spec.sigma, "N": n,
        "kappa_0": r0.kappa, "kappa_lam": rl.kappa, "bound": rl.bound,
        "lam_min": r0.lam_min, "lam_max": r0.lam_max, "bound_ok": bool(rl.kappa <= rl.bound),
    }]


_WORKERS = {"extension": _cell_extension, "l1": _cell_l1, "cond": _cell_cond}


def _run_cell(args):
    kind, config_dict, spec_dict, n = args
    config = ExperimentConfig.from_dict(config_dict)
    spec = KernelSpec.from_dict(spec_dict)
    try:
        return {"ok": True, "rows": _WORKERS[kind](config, spec, n)}
    except Exception as exc:  # a failed cell is a reported result
        logger.error("cell %s sigma=%s N=%d failed: %s", spec.label, spec.sigma, n, exc)
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc(),
                "kernel": spec.label, "sigma": spec.sigma, "N": n}


def _grid(config: ExperimentConfig, kind: str) -> tuple[list[dict], list[dict]]:
    tasks = [(kind, config.to_dict(), s.to_dict(), int(n)) for s in config.specs() for n in config.centers]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows, failed = [], []
    for r in results:
        if r["ok"]:
            rows.extend(r["rows"])
        else:
            failed.append(r)
    return rows, failed


# ------------------------------------------------------------ output


@dataclass
class TableResult:
    name: str
    rows: list
    failed: list
    directory: Path
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


def _fmt(v, bold_above=None) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            s = "nan"
        elif math.isinf(v):
            s = "inf"
        else:
            s = f"{v:.2e}"
        if bold_above is not None and (math.isinf(v) or v > bold_above):
            s = f"**{s}**"
        return s
    return str(v)


def _write_csv(path: Path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})


def _aggregate(rows, value: str, how=np.mean) -> dict:
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["kernel"], r["sigma"], r["N"]), []).append(r[value])
    return {k: float(how(v)) for k, v in cells.items()}


def _markdown(title: str, note: str, agg: dict, centers, bold_above=None) -> str:
    keys = sorted({(k, s) for k, s, _ in agg}, key=lambda t: (t[0], t[1]))
    lines = [f"### {title}", "", f"_{note}_", "", "| kernel | sigma | " + " | ".join(f"N={n}" for n in centers) + " |",
             "|---|---|" + "---|" * len(centers)]
    for k, s in keys:
        cells = [_fmt(agg[(k, s, n)], bold_above) if (k, s, n) in agg else "n/a" for n in centers]
        lines.append(f"| {k} | {s:.4g} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _finish(name: str, config: ExperimentConfig, directory: Path, rows, failed, outputs: list[Path], started: float, extra=None) -> TableResult:
    manifest = {
        "table": name,
        "config": config.to_dict(),
        "config_hash": config.content_hash(),
        "version": __version__,
        "seeds": {"cloud_and_fps": config.seed, "test_functions": config.test_functions.seed, "perturbation": config.perturb_seed},
        "failed_cells": [{k: v for k, v in f.items() if k != "trace"} for f in failed],
        "outputs": {p.name: _sha(p) for p in outputs},
        "mean_removal": "oracle inputs and outputs have their quadrature-weighted means removed",
        "timing": {"seconds": time.perf_counter() - started},
    }
    if extra:
        manifest["results"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return TableResult(name, rows, failed, directory, extra or {})


def _outdir(config: ExperimentConfig, name: str) -> Path:
    d = Path(config.out) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


CAVEAT = "desk scale: cloud and center counts are 1/4 of the reference study; values are not comparable cell by cell"


def run_table_h1(config: ExperimentConfig) -> TableResult:
    """Relative H1 error of the extended operator; also the bound-check rows."""
    t0 = time.perf_counter()
    d = _outdir(config, "h1")
    rows, failed = _grid(config, "extension")
    reps = d / "reports.csv"
    with open(reps, "w", newline="") as fh:
        cols = ["kernel", "sigma", "N", "test_function", "delta_injected", "eps", "eps_abs", "delta", "C1_est", "C2",
                "lhs", "lhs_abs", "rhs", "satisfied", "rel_L2", "rel_gradL2"]
        wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            r = dict(r, N=r["n_centers"])
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in cols})
    for r in rows:
        r["N"] = r["n_centers"]
    base = [r for r in rows if r["delta_injected"] == 0.0] or rows
    agg = _aggregate(base, "lhs")
    table = [{"kernel": k, "sigma": s, "N": n, "rel_H1": v} for (k, s, n), v in agg.items()]
    _write_csv(d / "table.csv", table, ["kernel", "sigma", "N", "rel_H1"])
    md = _markdown("Relative H1 error of the extended operator", CAVEAT + "; bold marks values above 1", agg, config.centers, 1.0)
    n_sat = sum(r["satisfied"] for r in rows)
    md += f"\nbound satisfied in {n_sat}/{len(rows)} cases\n"
    (d / "table.md").write_text(md)
    extra = {"bound_satisfied": n_sat, "bound_cases": len(rows)}
    return _finish("h1", config, d, rows, failed, [reps, d / "table.csv", d / "table.md"], t0, extra)


def run_table_l2(config: ExperimentConfig) -> TableResult:
    """Split function / gradient relative L2 errors of the extended operator."""
    t0 = time.perf_counter()
    d = _outdir(config, "l2")
    rows, failed = _grid(config, "extension")
    for r in rows:
        r["N"] = r["n_centers"]
    base = [r for r in rows if r["delta_injected"] == 0.0] or rows
    a2 = _aggregate(base, "rel_L2")
    ag = _aggregate(base, "rel_gradL2")
    table = [{"kernel": k, "sigma": s, "N": n, "rel_L2": a2[(k, s, n)], "rel_gradL2": ag[(k, s, n)]} for (k, s, n) in a2]
    _write_csv(d / "table.csv", table, ["kernel", "sigma", "N", "rel_L2", "rel_gradL2"])
    md = _markdown("Relative L2 error (function)", CAVEAT + "; bold marks values above 1", a2, config.centers, 1.0)
    md += "\n" + _markdown("Relative L2 error (surface gradient)", CAVEAT + "; bold marks values above 1", ag, config.centers, 1.0)
    (d / "table.md").write_text(md)
    return _finish("l2", config, d, table, failed, [d / "table.csv", d / "table.md"], t0)


def run_table_l1(config: ExperimentConfig) -> TableResult:
    """Coefficient l1 norms (the C2 constant), mean over test functions."""
    t0 = time.perf_counter()
    d = _outdir(config, "l1")
    rows, failed = _grid(config, "l1")
    agg = _aggregate(rows, "l1_alpha")
    table = [{"kernel": k, "sigma": s, "N": n, "l1_alpha": v} for (k, s, n), v in agg.items()]
    _write_csv(d / "table.csv", table, ["kernel", "sigma", "N", "l1_alpha"])
    _write_csv(d / "fits.csv", rows, ["kernel", "sigma", "N", "test_function", "rel_L2", "rel_gradL2", "rel_H1", "l1_alpha"])
    md = _markdown("Coefficient l1 norms", CAVEAT + "; bold marks values above 1e4", agg, config.centers, 1e4)
    (d / "table.md").write_text(md)
    return _finish("l1", config, d, table, failed, [d / "table.csv", d / "fits.csv", d / "table.md"], t0)


def run_table_cond(config: ExperimentConfig) -> TableResult:
    """Gram condition numbers at lambda = 0 and at the configured lambda."""
    t0 = time.perf_counter()
    d = _outdir(config, "cond")
    rows, failed = _grid(config, "cond")
    cols = ["kernel", "sigma", "N", "kappa_0", "kappa_lam", "bound", "lam_min", "lam_max", "bound_ok"]
    _write_csv(d / "table.csv", rows, cols)
    agg0 = {(r["kernel"], r["sigma"], r["N"]): r["kappa_0"] for r in rows}
    aggl = {(r["kernel"], r["sigma"], r["N"]): r["kappa_lam"] for r in rows}
    md = _markdown("Gram condition number, lambda = 0", CAVEAT + "; inf when the smallest eigenvalue is not positive", agg0, config.centers)
    md += "\n" + _markdown(f"Gram condition number, lambda = {config.lam:g}", CAVEAT, aggl, config.centers)
    (d / "table.md").write_text(md)
    extra = {"bound_ok": all(r["bound_ok"] for r in rows)}
    return _finish("cond", config, d, rows, failed, [d / "table.csv", d / "table.md"], t0, extra)


def run_convergence(config: ExperimentConfig) -> TableResult:
    """Interpolation errors against fill distance and fitted log-log slopes."""
    t0 = time.perf_counter()
    d = _outdir(config, "convergence")
    sec = config.convergence
    spec = KernelSpec.from_dict(sec.kernel)
    cloud = sample_radial_manifold(shape_preset(config.manifold), config.n_cloud, seed=config.seed)
    f = make_test_functions([sec.max_degree], 1, sec.function_seed)[0]
    fv, fg = f.on_cloud(cloud)
    rows = []
    for n in sec.centers:
        centers = farthest_point_sample(cloud, n, seed=config.seed)
        fit = fit_inputs(spec, cloud, centers, fv, fg, config.lam)
        e = error_norms(fv, fit.values, fg, fit.grad, cloud.weights)
        rows.append({"N": n, "fill_distance": fill_distance(centers, cloud),
                     "separation_radius": separation_radius(centers, cloud), "l1_alpha": fit.l1, **e})
    h = np.log([r["fill_distance"] for r in rows])
    slopes = {k: float(np.polyfit(h, np.log([r[k] for r in rows]), 1)[0]) for k in ("rel_L2", "rel_gradL2", "rel_H1")}
    _write_csv(d / "table.csv", rows, ["N", "fill_distance", "separation_radius", "rel_L2", "rel_gradL2", "rel_H1", "l1_alpha"])
    lines = [f"### Interpolation convergence, {spec.label} sigma={spec.sigma:g}", "", "| N | h | rel_L2 | rel_H1 |", "|---|---|---|---|"]
    lines += [f"| {r['N']} | {r['fill_distance']:.4f} | {_fmt(r['rel_L2'])} | {_fmt(r['rel_H1'])} |" for r in rows]
    lines += ["", "slopes: " + ", ".join(f"{k} {v:.2f}" for k, v in slopes.items())]
    (d / "table.md").write_text("\n".join(lines) + "\n")
    (d / "slopes.json").write_text(json.dumps(slopes, indent=2))
    return _finish("convergence", config, d, rows, [], [d / "table.csv", d / "table.md", d / "slopes.json"], t0, slopes)


def run_train(config: ExperimentConfig) -> TableResult:
    """Train the desk GNP on kernel-response pairs and evaluate on held-out centers."""
    from .gnp import GnpConfig, GnpModel, TrainConfig, evaluate, save_checkpoint, train

    t0 = time.perf_counter()
    d = _outdir(config, "train")
    sec = config.train
    spec = KernelSpec.from_dict(sec.kernel)
    cloud = sample_radial_manifold(shape_preset(config.manifold), sec.n_cloud, seed=config.seed)
    oracle = SpectralSphereOracle(cloud) if cloud.shape.is_unit_sphere else MeshfreeOracle(cloud)
    perm = np.random.default_rng(config.seed).permutation(cloud.n)
    train_pairs = make_training_pairs(oracle, spec, perm[: sec.n_pairs])
    held = make_training_pairs(oracle, spec, perm[sec.n_pairs : sec.n_pairs + sec.n_heldout])
    write_pairs(d / "pairs", train_pairs, cloud, {"kernel": spec.to_dict(), "oracle": oracle.kind, "seed": config.seed,
                                                   "centers": [int(c) for c in perm[: sec.n_pairs]]})
    gcfg = GnpConfig(**{"seed": config.seed, **sec.gnp})
    tcfg = TrainConfig(**{"seed": config.seed, **sec.train})
    model = GnpModel(gcfg)
    result = train(model, train_pairs, cloud, tcfg)
    metrics = {"train": evaluate(model, train_pairs, cloud), "heldout": evaluate(model, held, cloud),
               "train_seconds": result.seconds}
    ckpt = save_checkpoint(d / "checkpoint.json", model, tcfg, result.history,
                           {"kernel": spec.to_dict(), "n_cloud": sec.n_cloud, "manifold": config.manifold,
                            "cloud_seed": config.seed, "heldout_centers": [int(c) for c in perm[sec.n_pairs : sec.n_pairs + sec.n_heldout]]})
    rows = [dict(h, smoothed=s) for h, s in zip(result.history, result.smoothed)]
    _write_csv(d / "loss.csv", rows, ["epoch", "loss", "smoothed", "lr"])
    (d / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return _finish("train", config, d, rows, [], [Path(ckpt), d / "loss.csv", d / "metrics.json"], t0, metrics)


def run_extend(config: ExperimentConfig) -> TableResult:
    """Bound reports for every kernel and center count with the configured oracle."""
    t0 = time.perf_counter()
    d = _outdir(config, "extend")
    rows, failed = _grid(config, "extension")
    reports = d / "reports.csv"
    from .extension import ExtensionReport

    write_reports(reports, [ExtensionReport(**{k: v for k, v in r.items() if k in ExtensionReport.__dataclass_fields__}) for r in rows])
    n_sat = sum(r["satisfied"] for r in rows)
    return _finish("extend", config, d, rows, failed, [reports], t0, {"bound_satisfied": n_sat, "bound_cases": len(rows)})


def run_fit(config: ExperimentConfig) -> TableResult:
    """Interpolation fits of every test function for each kernel and center count."""
    t0 = time.perf_counter()
    d = _outdir(config, "fit")
    rows, failed = _grid(config, "l1")
    cols = ["kernel", "sigma", "N", "test_function", "rel_L2", "rel_gradL2", "rel_H1", "l1_alpha"]
    _write_csv(d / "fits.csv", rows, cols)
    return _finish("fit", config, d, rows, failed, [d / "fits.csv"], t0)


def run_solve(config: ExperimentConfig) -> TableResult:
    """Meshfree Laplace-Beltrami solves of the test functions, checked against the spectral solver on the sphere."""
    from .lb import MeshfreeLaplaceBeltrami

    t0 = time.perf_counter()
    d = _outdir(config, "solve")
    cloud = sample_radial_manifold(shape_preset(config.manifold), config.n_cloud, seed=config.seed)
    solver = MeshfreeLaplaceBeltrami(cloud)
    exact = SpectralSphereOracle(cloud) if cloud.shape.is_unit_sphere else None
    rows = []
    for k, f in enumerate(config.test_functions.build()):
        fv, _ = f.on_cloud(cloud)
        sol = solver.solve(fv)
        row = {"test_function": k, "L": f.L, "residual": solver.residual(sol.u, fv), "multiplier": sol.multiplier}
        if exact is not None:
            u, g = exact.solve_field(f)
            row.update(error_norms(u, sol.u, g, sol.grad, cloud.weights))
        rows.append(row)
    cols = ["test_function", "L", "residual", "multiplier", "rel_L2", "rel_gradL2", "rel_H1"]
    _write_csv(d / "solve.csv", rows, cols)
    return _finish("solve", config, d, rows, [], [d / "solve.csv"], t0)


TABLES = {
    "h1": run_table_h1,
    "l2": run_table_l2,
    "l1": run_table_l1,
    "cond": run_table_cond,
    "convergence": run_convergence,
    "train": run_train,
}


def geometry_summary(config: ExperimentConfig) -> dict:
    cloud = sample_radial_manifold(shape_preset(config.manifold), config.n_cloud, seed=config.seed)
    d = _outdir(config, "geom")
    csv_path, json_path = save_cloud(cloud, d / f"{config.manifold}_{config.n_cloud}")
    rows = []
    for n in config.centers:
        if n > cloud.n:
            continue
        c = farthest_point_sample(cloud, n, seed=config.seed)
        rows.append({"N": n, "fill_distance": fill_distance(c, cloud), "separation_radius": separation_radius(c, cloud)})
    _write_csv(d / "centers.csv", rows, ["N", "fill_distance", "separation_radius"])
    return {"cloud": str(csv_path), "sidecar": str(json_path), "area": float(cloud.weights.sum()), "centers": rows}
