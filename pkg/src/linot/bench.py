"""Time-versus-deviation benchmarks comparing dense and random-feature Sinkhorn.

Each cell ``(method, epsilon, r, seed)`` is timed end to end, including
feature sampling and embedding for the random-feature methods, and compared
with a dense ground truth solved at a tighter tolerance. The deviation is
``D = 100 (ROT - ROT_hat) / |ROT| + 100``, so ``D = 100`` means exact.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DenseKernel, DiscreteMeasure
from .errors import NotConverged
from .features import FeatureMapSpec, factorized_kernel, sample_features
from .io import load_measure
from .solver import SolveConfig, accelerated_sinkhorn, sinkhorn

METHODS = ("dense_sinkhorn", "rf_sinkhorn", "rf_accelerated")
CSV_HEADER = ["method", "epsilon", "r", "seed", "wall_time_s", "w_hat", "deviation_pct", "converged"]
DATASETS = ("gaussians2d", "sphere", "file")
_ROW_CHUNK = 1024


# -- datasets -----------------------------------------------------------------


def gen_gaussians(n, seed, means=((0.0, 0.0), (1.0, 1.0)), covariances=(0.1, 1.0)):
    """Two clouds of ``n`` points: ``N(means[0], cov0 I)`` and ``N(means[1], cov1 I)``.

    The second cloud is divided by its largest norm so it lies in the unit ball.
    ``covariances`` entries may be scalars (times identity) or full matrices.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    clouds = []
    for mean, cov in zip(means, covariances):
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.size)
        clouds.append(rng.multivariate_normal(mean, cov, size=n))
    clouds[1] = clouds[1] / np.linalg.norm(clouds[1], axis=1).max()
    return DiscreteMeasure(clouds[0]), DiscreteMeasure(clouds[1])


DEFAULT_CAPS = (((0.0, 0.0, 1.0), 0.6), ((1.0, 0.0, 0.0), 0.6))


def gen_sphere(n, seed, caps=DEFAULT_CAPS):
    """Two clouds of ``n`` points uniform on spherical caps of the unit sphere.

    ``caps`` holds one ``(center, half_angle)`` pair per cloud.
    """
    rng = np.random.default_rng(seed)
    out = []
    for center, half_angle in caps:
        c = np.asarray(center, dtype=np.float64)
        c = c / np.linalg.norm(c)
        d = c.size
        pts = np.empty((0, d))
        cos_max = math.cos(half_angle)
        # rejection sampling from the uniform law on the sphere
        while pts.shape[0] < n:
            z = rng.normal(size=(max(4 * n, 64), d))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            pts = np.vstack([pts, z[z @ c >= cos_max]])
        out.append(DiscreteMeasure(pts[:n]))
    return out[0], out[1]


def dense_gaussian_kernel(X, Y, epsilon):
    """Dense ``exp(-||x - y||^2 / eps)`` built in row chunks, without a cost copy."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    K = np.empty((X.shape[0], Y.shape[0]))
    sy = np.einsum("jd,jd->j", Y, Y)
    has_zeros = False
    for start in range(0, X.shape[0], _ROW_CHUNK):
        Xc = X[start : start + _ROW_CHUNK]
        block = K[start : start + Xc.shape[0]]
        np.matmul(Xc, Y.T, out=block)
        block *= -2.0
        block += np.einsum("id,id->i", Xc, Xc)[:, None]
        block += sy[None, :]
        np.maximum(block, 0.0, out=block)
        block *= -1.0 / epsilon
        np.exp(block, out=block)
        has_zeros = has_zeros or bool(np.any(block == 0))
    return DenseKernel.trusted(K, has_zeros)


# -- experiment spec ------------------------------------------------------------


@dataclass
class ExperimentSpec:
    """Sweep grid for :func:`run_benchmark`.

    ``dataset`` is a dict with ``kind`` in ``gaussians2d`` (keys ``n``, optional
    ``means``, ``covariances``), ``sphere`` (``n``, optional ``caps``) or
    ``file`` (``paths``: two point-cloud files). ``tol`` is the marginal
    tolerance of benchmarked cells; ``ground_truth_tol`` must be at least 10x
    tighter.
    """

    dataset: dict = field(default_factory=lambda: {"kind": "gaussians2d", "n": 4000})
    epsilons: list = field(default_factory=lambda: [0.5])
    r_values: list = field(default_factory=lambda: [100, 500, 1000, 2000])
    seeds: list = field(default_factory=lambda: list(range(5)))
    methods: list = field(default_factory=lambda: ["dense_sinkhorn", "rf_sinkhorn"])
    ground_truth_tol: float = 1e-10
    tol: float = 1e-6
    max_iters: int = 100_000
    data_seed: int = 0

    def __post_init__(self):
        if self.dataset.get("kind") not in DATASETS:
            raise ValueError(f"dataset kind must be one of {DATASETS}")
        for name in ("epsilons", "r_values", "seeds", "methods"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must be non-empty")
        if any(not e > 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if any(int(r) != r or r < 1 for r in self.r_values):
            raise ValueError("r_values must be positive integers")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if not 0 < self.ground_truth_tol * 10 <= self.tol:
            raise ValueError("ground_truth_tol must be at least 10x tighter than tol")

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def load_data(self):
        ds = self.dataset
        if ds["kind"] == "gaussians2d":
            kw = {k: ds[k] for k in ("means", "covariances") if k in ds}
            return gen_gaussians(int(ds["n"]), self.data_seed, **kw)
        if ds["kind"] == "sphere":
            caps = ds.get("caps", DEFAULT_CAPS)
            return gen_sphere(int(ds["n"]), self.data_seed, caps)
        p1, p2 = ds["paths"]
        return load_measure(p1), load_measure(p2)


@dataclass(frozen=True)
class BenchRecord:
    method: str
    epsilon: float
    r: int
    seed: int
    wall_time_s: float
    w_hat: float
    deviation_pct: float
    converged: bool

    def row(self):
        return [self.method, repr(float(self.epsilon)), int(self.r), int(self.seed),
                repr(float(self.wall_time_s)), repr(float(self.w_hat)),
                repr(float(self.deviation_pct)), str(bool(self.converged)).lower()]


def deviation_pct(rot, rot_hat):
    """``100 (ROT - ROT_hat) / |ROT| + 100``."""
    return 100.0 * (rot - rot_hat) / abs(rot) + 100.0


def domain_radius(mu, nu):
    """Radius of the smallest origin-centred ball holding both supports."""
    return float(max(np.linalg.norm(mu.points, axis=1).max(), np.linalg.norm(nu.points, axis=1).max()))


# -- cells ----------------------------------------------------------------------


def run_cell(method, mu, nu, epsilon, r, seed, config):
    """Run one cell; returns ``(SolveReport, wall_time_s)``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        t0 = time.perf_counter()
        if method == "dense_sinkhorn":
            K = dense_gaussian_kernel(mu.points, nu.points, epsilon)
            rep = sinkhorn(K, mu.weights, nu.weights, config, epsilon)
        else:
            spec = FeatureMapSpec.gaussian(epsilon, domain_radius(mu, nu), mu.dim)
            K = factorized_kernel(sample_features(spec, r, seed), mu, nu)
            solve = sinkhorn if method == "rf_sinkhorn" else accelerated_sinkhorn
            rep = solve(K, mu.weights, nu.weights, config, epsilon=epsilon)
        return rep, time.perf_counter() - t0


def ground_truth(mu, nu, epsilon, tol, max_iters=1_000_000):
    """Dense-kernel Sinkhorn value at tolerance ``tol``."""
    cfg = SolveConfig(marginal_tol=tol, max_iters=max_iters)
    K = dense_gaussian_kernel(mu.points, nu.points, epsilon)
    return sinkhorn(K, mu.weights, nu.weights, cfg, epsilon)


def _cells(spec):
    for eps in spec.epsilons:
        for method in spec.methods:
            if method == "dense_sinkhorn":
                for seed in spec.seeds:
                    yield method, eps, 0, seed
            else:
                for r in spec.r_values:
                    for seed in spec.seeds:
                        yield method, eps, int(r), seed


def run_benchmark(spec, csv_path=None, svg_path=None, parallel_cells=False, log=None):
    """Run every cell of ``spec`` and return the records.

    Rows are appended to ``csv_path`` as cells finish, so an interrupted or
    partly failing sweep keeps its complete rows. A failing cell is recorded
    with ``converged = false`` and NaN values.
    """
    mu, nu = spec.load_data()
    cfg = SolveConfig(marginal_tol=spec.tol, max_iters=spec.max_iters)
    truths = {}
    for eps in spec.epsilons:
        gt = ground_truth(mu, nu, eps, spec.ground_truth_tol)
        truths[eps] = gt.w_hat
        if log:
            log(f"ground truth eps={eps}: {gt.w_hat!r} ({gt.iters} iters, converged={gt.converged})")

    cells = list(_cells(spec))
    # warm-up: first cell run once and discarded
    method, eps, r, seed = cells[0]
    try:
        run_cell(method, mu, nu, eps, r, seed, cfg)
    except Exception:  # noqa: BLE001 - failures are recorded by the real run
        pass

    fh = writer = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        fh.flush()

    def one(cell):
        method, eps, r, seed = cell
        try:
            rep, wall = run_cell(method, mu, nu, eps, r, seed, cfg)
            return BenchRecord(method, eps, r, seed, wall, rep.w_hat,
                               deviation_pct(truths[eps], rep.w_hat), rep.converged)
        except Exception as exc:  # noqa: BLE001 - a failed cell becomes a row
            if log:
                log(f"cell {cell} failed: {exc}")
            return BenchRecord(method, eps, r, seed, math.nan, math.nan, math.nan, False)

    records = []

    def emit(rec):
        records.append(rec)
        if writer is not None:
            writer.writerow(rec.row())
            fh.flush()
        if log:
            log(f"{rec.method} eps={rec.epsilon} r={rec.r} seed={rec.seed} "
                f"t={rec.wall_time_s:.3f}s D={rec.deviation_pct:.4f} converged={rec.converged}")

    try:
        if parallel_cells:
            print("WARNING: --parallel-cells is on; wall times are NOT reliable", file=sys.stderr)
            with ThreadPoolExecutor() as pool:
                for rec in pool.map(one, cells):
                    emit(rec)
        else:
            for cell in cells:
                emit(one(cell))
    finally:
        if fh is not None:
            fh.close()
    if svg_path is not None:
        write_svg(records, svg_path)
    return records


def read_records(path):
    """Parse a benchmark CSV back into records."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(
                row["method"], float(row["epsilon"]), int(row["r"]), int(row["seed"]),
                float(row["wall_time_s"]), float(row["w_hat"]), float(row["deviation_pct"]),
                row["converged"] == "true",
            ))
    return out


# -- plotting -------------------------------------------------------------------

_COLORS = {"dense_sinkhorn": "#d62728", "rf_sinkhorn": "#1f77b4", "rf_accelerated": "#2ca02c"}


def write_svg(records, path, width=640, height=420):
    """Scatter of wall time (log x) against deviation, one color per method."""
    pts = [r for r in records if math.isfinite(r.wall_time_s) and math.isfinite(r.deviation_pct)
           and r.wall_time_s > 0]
    pad = 50
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if pts:
        lx = [math.log10(r.wall_time_s) for r in pts]
        dy = [r.deviation_pct for r in pts]
        x0, x1 = min(lx), max(lx)
        y0, y1 = min(dy + [100.0]), max(dy + [100.0])
        x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(v):
            return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

        lines.append(f'<line x1="{pad}" y1="{sy(100.0):.1f}" x2="{width - pad}" '
                     f'y2="{sy(100.0):.1f}" stroke="#999" stroke-dasharray="4"/>')
        for rec, x, y in zip(pts, lx, dy):
            lines.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
                         f'fill="{_COLORS.get(rec.method, "black")}"><title>{rec.method} '
                         f'eps={rec.epsilon} r={rec.r}</title></circle>')
        lines.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">'
                     f'log10 wall time [s] ({x0:.2f} to {x1:.2f})</text>')
        lines.append(f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
                     f'text-anchor="middle">deviation D [%] ({y0:.2f} to {y1:.2f})</text>')
    for i, (name, color) in enumerate(_COLORS.items()):
        lines.append(f'<text x="{width - pad - 120}" y="{20 + 16 * i}" fill="{color}">{name}</text>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
