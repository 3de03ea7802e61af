"""Experiment harness: curvature decay, convergence-rate studies,
variance growth, and identity verification, with reproducible configs
and machine-readable reports (JSON + CSV)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import rngs
from .errors import (ConfigError, GroundSetTooLarge, InsufficientPoints,
                     NonpositiveValue, SingularInformation)
from .estimation import (MleConfig, asymptotic_covariance, estimate_risk,
                         fit_mle, blockwise_loss, sign_orbit_loss)
from .geometry import (hessian_matrix, identity_residuals, min_curvature,
                       null_space_basis)
from .kernels import (Kernel, block_diagonal_kernel, determinantal_graph,
                      kernel_from_json, kernel_to_json, symmetrize,
                      tridiagonal_kernel)
from .model import (EmpiricalTable, SampleBatch, build_table,
                    empirical_table, sample)

#: Hessian assembly budget for scans (coordinate matrix is m x m, m = N(N+1)/2).
DEFAULT_SCAN_BUDGET = 10


# --- random inputs for verification runs ----------------------------------

def random_kernel(n: int, gen: np.random.Generator) -> Kernel:
    """Well-conditioned random positive definite kernel."""
    a = gen.normal(size=(n, n))
    return Kernel(symmetrize(a @ a.T / n + np.eye(n) * (0.5 + gen.random())))


def random_symmetric(n: int, gen: np.random.Generator) -> np.ndarray:
    return symmetrize(gen.normal(size=(n, n)))


# --- regression fits --------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def _ols(x: np.ndarray, y: np.ndarray) -> SlopeFit:
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / sst if sst > 0 else 1.0
    return SlopeFit(slope=float(coef[0]), intercept=float(coef[1]), r2=r2)


def fit_loglog_slope(points) -> SlopeFit:
    """Ordinary least squares on (log x, log y); needs >= 3 positive points."""
    pts = list(points)
    if len(pts) < 3:
        raise InsufficientPoints(f"log-log fit needs >= 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonpositiveValue("log-log fit requires strictly positive coordinates")
    return _ols(np.log(x), np.log(y))


def fit_semilog_slope(points) -> SlopeFit:
    """Ordinary least squares on (x, log y); needs >= 3 positive-y points."""
    pts = list(points)
    if len(pts) < 3:
        raise InsufficientPoints(f"semilog fit needs >= 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(y <= 0):
        raise NonpositiveValue("semilog fit requires strictly positive values")
    return _ols(x, np.log(y))


# --- kernel specs -----------------------------------------------------------

def parse_kernel_spec(spec, field: str = "kernel") -> Kernel:
    """Kernel from a config fragment: a literal matrix {"n", "entries"},
    a {"tridiagonal": {"a", "b", "n"}} family member, or
    {"blocks": [spec, ...]} assembled block-diagonally."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{field}: expected an object, got {type(spec).__name__}")
    if "entries" in spec:
        try:
            return kernel_from_json(spec)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{field}: {exc}") from exc
    if "tridiagonal" in spec:
        tri = spec["tridiagonal"]
        try:
            a, b, n = float(tri["a"]), float(tri["b"]), int(tri["n"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{field}.tridiagonal: needs fields a, b, n ({exc})") from exc
        try:
            return tridiagonal_kernel(n, a, b)
        except ValueError as exc:
            raise ConfigError(f"{field}.tridiagonal: {exc}") from exc
    if "blocks" in spec:
        blocks = [parse_kernel_spec(s, field=f"{field}.blocks[{i}]").matrix
                  for i, s in enumerate(spec["blocks"])]
        if not blocks:
            raise ConfigError(f"{field}.blocks: must be nonempty")
        return block_diagonal_kernel(blocks)
    raise ConfigError(
        f"{field}: expected one of 'entries', 'tridiagonal', 'blocks'")


def _tridiagonal_family(config: dict, field: str):
    tri = config.get("tridiagonal")
    if not isinstance(tri, dict):
        raise ConfigError(f"{field}.tridiagonal: required object with fields a, b")
    try:
        a, b = float(tri["a"]), float(tri["b"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{field}.tridiagonal: needs fields a, b ({exc})") from exc
    n_values = config.get("n_values")
    if not n_values or list(n_values) != sorted(set(int(v) for v in n_values)):
        raise ConfigError(f"{field}.n_values: required strictly increasing integers")
    return a, b, [int(v) for v in n_values]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write(path: Path, text: str) -> None:
    path.write_text(text)


# --- commands ----------------------------------------------------------------

def run_simulate(config: dict, out: Path, seed_override: int | None = None) -> dict:
    kernel = parse_kernel_spec(config.get("kernel", {}))
    try:
        count = int(config["count"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"count: required positive integer ({exc})") from exc
    if count < 1:
        raise ConfigError("count: must be >= 1")
    seed = int(seed_override if seed_override is not None else config.get("seed", 0))
    table = build_table(kernel)
    batch = sample(table, count, seed)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "samples.json", batch.to_json())
    _write(out / "table.csv", table.to_csv())
    report = {
        "command": "simulate",
        "config": {"kernel": kernel_to_json(kernel), "count": count, "seed": seed},
        "normalizer": table.normalizer,
        "normalization_residual": table.normalization_residual,
        "files": ["samples.json", "table.csv"],
        "created_at": _utc_now(),
    }
    _write_json(out / "simulate.json", report)
    return report


def load_frequencies(path: Path) -> EmpiricalTable:
    """Observed frequencies from a samples JSON file or a table CSV
    (exact probabilities used as population frequencies)."""
    try:
        text = path.read_text()
        if path.suffix == ".csv":
            rows = list(csv.reader(io.StringIO(text)))
            body = rows[1:] if rows and rows[0] and rows[0][0] == "mask" else rows
            probs = np.zeros(len(body))
            for mask_s, p_s in body:
                probs[int(mask_s)] = float(p_s)
            n = int(np.log2(len(body)))
            if 2 ** n != len(body):
                raise ValueError(f"table length {len(body)} is not a power of two")
            return EmpiricalTable.from_probabilities(n, probs)
        return empirical_table(SampleBatch.from_json(text))
    except ConfigError:
        raise
    except FileNotFoundError as exc:
        raise ConfigError(f"samples file not found: {path}") from exc
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed samples file ({exc})") from exc


def run_estimate(config: dict, samples_path: Path, out: Path,
                 seed_override: int | None = None) -> dict:
    freqs = load_frequencies(samples_path)
    mle_dict = dict(config.get("mle", {}))
    if seed_override is not None:
        mle_dict["seed"] = int(seed_override)
    try:
        mle_cfg = MleConfig.from_json(mle_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mle: {exc}") from exc
    result = fit_mle(freqs, mle_cfg)
    report = {
        "command": "estimate",
        "config": {"mle": mle_cfg.to_dict(), "samples": str(samples_path)},
        "result": json.loads(result.to_json()),
        "created_at": _utc_now(),
    }
    if "truth" in config:
        truth = parse_kernel_spec(config["truth"], field="truth")
        if truth.n != freqs.n:
            raise ConfigError(f"truth: ground-set size {truth.n} != samples size {freqs.n}")
        loss = sign_orbit_loss(result.estimate, truth)
        bw = blockwise_loss(result.estimate, truth, determinantal_graph(truth))
        report["loss"] = loss.value
        report["loss_within"] = bw.within
        report["loss_cross"] = bw.cross
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "estimate.json", report)
    return report


def run_hessian(config: dict, out: Path) -> dict:
    kernel = parse_kernel_spec(config.get("kernel", {}))
    form = hessian_matrix(build_table(kernel))
    graph = determinantal_graph(kernel)
    nsb = null_space_basis(graph, kernel)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "hessian_eigenvalues.csv", form.eigenvalues_csv())
    _write(out / "hessian_matrix.csv", form.matrix_csv())
    report = {
        "command": "hessian",
        "config": {"kernel": kernel_to_json(kernel)},
        "eigenvalues": [float(v) for v in form.eigenvalues],
        "null_space_dimension": nsb.dimension,
        "null_space_pairs": [[int(i), int(j)] for i, j in nsb.pairs],
        "irreducible": graph.irreducible,
        "created_at": _utc_now(),
    }
    _write_json(out / "hessian.json", report)
    return report


@dataclass
class CurvatureReport:
    """Minimal Hessian curvature per ground-set size with an
    exponential-decay fit over the strictly positive rows."""

    rows: list            # (n, min_curvature, reducible)
    fit: SlopeFit | None
    config: dict

    def to_dict(self) -> dict:
        return {
            "command": "curvature-scan",
            "config": self.config,
            "rows": [{"n": n, "min_curvature": c, "reducible": r}
                     for n, c, r in self.rows],
            "fit": self.fit.to_dict() if self.fit else None,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "min_curvature", "reducible"])
        for n, c, r in self.rows:
            w.writerow([n, repr(float(c)), int(r)])
        return buf.getvalue()


def run_curvature_scan(config: dict, out: Path | None = None) -> CurvatureReport:
    a, b, n_values = _tridiagonal_family(config, "curvature-scan")
    budget = int(config.get("max_n", DEFAULT_SCAN_BUDGET))
    if max(n_values) > budget:
        raise GroundSetTooLarge(
            f"curvature scan budget is n <= {budget}, requested {max(n_values)}")
    rows = []
    for n in n_values:
        kernel = tridiagonal_kernel(n, a, b)
        reducible = not determinantal_graph(kernel).irreducible
        rows.append((n, min_curvature(kernel), reducible))
    positive = [(n, c) for n, c, red in rows if not red and c > 1e-12]
    fit = fit_semilog_slope(positive) if len(positive) >= 3 else None
    resolved = {"tridiagonal": {"a": a, "b": b}, "n_values": n_values, "max_n": budget}
    report = CurvatureReport(rows=rows, fit=fit, config=resolved)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict()
        payload["created_at"] = _utc_now()
        _write_json(out / "curvature.json", payload)
        _write(out / "curvature.csv", report.to_csv())
    return report


@dataclass
class RateReport:
    """Monte Carlo risk against sample size with log-log slope fits.

    The cross-block slope is fitted on median replicate losses (heavy
    tails from optimizer restarts); mean-based fits are also recorded.
    """

    rows: list            # per-size dicts
    slopes: dict          # name -> SlopeFit or None
    config: dict

    def to_dict(self) -> dict:
        return {
            "command": "rate-study",
            "config": self.config,
            "rows": self.rows,
            "slopes": {k: (v.to_dict() if v else None) for k, v in self.slopes.items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["sample_size", "mean_loss", "std_error", "median_loss",
                    "mean_within", "mean_cross", "median_cross"])
        for r in self.rows:
            w.writerow([r["sample_size"], repr(r["mean_loss"]), repr(r["std_error"]),
                        repr(r["median_loss"]), repr(r["mean_within"]),
                        repr(r["mean_cross"]), repr(r["median_cross"])])
        return buf.getvalue()


def _safe_loglog(points) -> SlopeFit | None:
    try:
        return fit_loglog_slope(points)
    except (InsufficientPoints, NonpositiveValue):
        return None


def run_rate_study(config: dict, out: Path | None = None,
                   seed_override: int | None = None, threads: int = 1) -> RateReport:
    kernel = parse_kernel_spec(config.get("kernel", {}))
    sizes = [int(s) for s in config.get("sample_sizes", [])]
    if len(sizes) < 1 or sizes != sorted(set(sizes)):
        raise ConfigError("sample_sizes: required strictly increasing integers")
    replicates = int(config.get("replicates", 50))
    if replicates < 2:
        raise ConfigError("replicates: must be >= 2")
    seed = int(seed_override if seed_override is not None else config.get("seed", 0))
    try:
        mle_cfg = MleConfig.from_json(dict(config.get("mle", {})))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mle: {exc}") from exc
    oracle = bool(config.get("oracle", False))
    estimator = (lambda freqs: kernel) if oracle else None

    resolved_partial = {
        "kernel": kernel_to_json(kernel),
        "sample_sizes": sizes,
        "replicates": replicates,
        "seed": seed,
        "mle": mle_cfg.to_dict(),
        "oracle": oracle,
    }
    table = build_table(kernel)
    rows = []
    risks = []
    for size in sizes:
        try:
            risk = estimate_risk(kernel, size, replicates, mle_cfg, seed,
                                 threads=threads, estimator=estimator, table=table)
        except Exception as exc:
            # flush whatever completed, marked, before propagating
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                _write_json(out / "rate_study.json", {
                    "command": "rate-study",
                    "config": resolved_partial,
                    "rows": rows,
                    "failed_at_sample_size": size,
                    "failure": str(exc),
                    "created_at": _utc_now(),
                })
            raise
        risks.append(risk)
        rows.append(risk.to_dict())
    slopes = {
        "total": _safe_loglog([(r["sample_size"], r["mean_loss"]) for r in rows]),
        "within": _safe_loglog([(r["sample_size"], r["mean_within"]) for r in rows]),
        "cross": _safe_loglog([(r["sample_size"], r["median_cross"]) for r in rows]),
        "cross_mean": _safe_loglog([(r["sample_size"], r["mean_cross"]) for r in rows]),
    }
    report = RateReport(rows=rows, slopes=slopes, config=resolved_partial)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict()
        payload["created_at"] = _utc_now()
        _write_json(out / "rate_study.json", payload)
        _write(out / "rate_study.csv", report.to_csv())
        for size, risk in zip(sizes, risks):
            _write(out / f"replicates_{size}.csv", risk.to_csv())
    return report


@dataclass
class VarianceGrowthReport:
    rows: list            # (n, max_eigenvalue or None, singular flag)
    fit: SlopeFit | None
    config: dict

    def to_dict(self) -> dict:
        return {
            "command": "variance-growth",
            "config": self.config,
            "rows": [{"n": n, "max_eigenvalue": v, "singular": s}
                     for n, v, s in self.rows],
            "fit": self.fit.to_dict() if self.fit else None,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "max_eigenvalue", "singular"])
        for n, v, s in self.rows:
            w.writerow([n, "" if v is None else repr(float(v)), int(s)])
        return buf.getvalue()


def run_variance_growth(config: dict, out: Path | None = None) -> VarianceGrowthReport:
    a, b, n_values = _tridiagonal_family(config, "variance-growth")
    budget = int(config.get("max_n", DEFAULT_SCAN_BUDGET))
    if max(n_values) > budget:
        raise GroundSetTooLarge(
            f"variance growth budget is n <= {budget}, requested {max(n_values)}")
    rows = []
    for n in n_values:
        kernel = tridiagonal_kernel(n, a, b)
        try:
            cov = asymptotic_covariance(kernel)
            rows.append((n, float(np.linalg.eigvalsh(cov)[-1]), False))
        except SingularInformation:
            rows.append((n, None, True))
    good = [(n, v) for n, v, s in rows if not s]
    fit = fit_semilog_slope(good) if len(good) >= 3 else None
    resolved = {"tridiagonal": {"a": a, "b": b}, "n_values": n_values, "max_n": budget}
    report = VarianceGrowthReport(rows=rows, fit=fit, config=resolved)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict()
        payload["created_at"] = _utc_now()
        _write_json(out / "variance_growth.json", payload)
        _write(out / "variance_growth.csv", report.to_csv())
    return report


def run_verify_identities(config: dict, out: Path | None = None,
                          seed_override: int | None = None) -> dict:
    trials = int(config.get("trials", 100))
    n_values = [int(v) for v in config.get("n_values", range(2, 9))]
    seed = int(seed_override if seed_override is not None else config.get("seed", 0))
    tol = float(config.get("tolerance", 1e-9))
    records = []
    worst = 0.0
    for t in range(trials):
        gen = rngs.stream(seed, t)
        n = n_values[t % len(n_values)]
        kernel = random_kernel(n, gen)
        h = random_symmetric(n, gen)
        res = identity_residuals(kernel, h)
        rel = max(res.max_relative(), res.matrix_form_residual)
        worst = max(worst, rel)
        records.append({"trial": t, "n": n, **json.loads(res.to_json()),
                        "max_relative": res.max_relative()})
    report = {
        "command": "verify-identities",
        "config": {"trials": trials, "n_values": n_values, "seed": seed, "tolerance": tol},
        "worst_relative_residual": worst,
        "passed": bool(worst <= tol),
        "records": records,
        "created_at": _utc_now(),
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "identities.json", report)
    return report
