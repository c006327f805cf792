"""Command-line entry point: ``linot {solve,bench,budget,gradcheck,gen}``.

Exit codes: 0 success, 1 a check failed, 2 invalid input. The environment
variable ``LINOT_NUM_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

import numpy as np

from . import bench
from .core import CostSpec, DiscreteMeasure, cost_matrix, gibbs_kernel
from .errors import LinotError
from .features import (
    FeatureMapSpec,
    concentration_constants,
    factorized_kernel,
    feature_budget,
    sample_features,
)
from .grad import check_feature_grad, check_kernel_grad, check_location_grad
from .io import load_measure, save_measure
from .solver import SolveConfig, accelerated_sinkhorn, sinkhorn

THREADS_ENV = "LINOT_NUM_THREADS"
KERNEL_GRAD_TOL = 1e-4
LOCATION_GRAD_TOL = 1e-3


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def _float_list(text):
    return [float(x) for x in text.split(",") if x]


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


# -- solve ----------------------------------------------------------------------


def cmd_solve(args):
    mu, nu = load_measure(args.source), load_measure(args.target)
    cfg = SolveConfig(marginal_tol=args.tol, max_iters=args.max_iters)
    if args.method == "dense":
        C = cost_matrix(mu, nu, CostSpec(args.cost, args.epsilon))
        K = gibbs_kernel(C, args.epsilon)
        rep = sinkhorn(K, mu.weights, nu.weights, cfg, args.epsilon)
    else:
        if args.cost != "squared_euclidean":
            raise ValueError("random features approximate the squared-Euclidean cost only")
        spec = FeatureMapSpec.gaussian(args.epsilon, bench.domain_radius(mu, nu), mu.dim)
        K = factorized_kernel(sample_features(spec, args.r, args.seed), mu, nu)
        solve = sinkhorn if args.method == "rf" else accelerated_sinkhorn
        rep = solve(K, mu.weights, nu.weights, cfg, epsilon=args.epsilon)
    if args.potentials:
        rep.dump_potentials(args.potentials)
    print(rep.to_json(indent=2))
    return 0


# -- bench ----------------------------------------------------------------------


def _spec_from_args(args):
    if args.spec:
        return bench.ExperimentSpec.from_json(args.spec)
    if args.dataset == "file":
        if not args.paths or len(args.paths) != 2:
            raise ValueError("--dataset file needs --paths SOURCE TARGET")
        dataset = {"kind": "file", "paths": args.paths}
    else:
        dataset = {"kind": args.dataset, "n": args.n}
    return bench.ExperimentSpec(
        dataset=dataset,
        epsilons=args.epsilons,
        r_values=args.r_values,
        seeds=list(range(args.n_seeds)) if args.seeds is None else args.seeds,
        methods=args.methods.split(","),
        ground_truth_tol=args.ground_truth_tol,
        tol=args.tol,
        max_iters=args.max_iters,
        data_seed=args.data_seed,
    )


def cmd_bench(args):
    spec = _spec_from_args(args)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    records = bench.run_benchmark(spec, csv_path=args.csv, svg_path=args.svg,
                                  parallel_cells=args.parallel_cells, log=log)
    if args.csv is None:
        print(",".join(bench.CSV_HEADER))
        for rec in records:
            print(",".join(str(x) for x in rec.row()))
    return 0


# -- budget ---------------------------------------------------------------------


def cmd_budget(args):
    if args.kind == "gaussian":
        spec = FeatureMapSpec.gaussian(args.epsilon, args.R, args.d)
    else:
        spec = FeatureMapSpec.arccos(args.s, args.kappa, args.sigma, args.d,
                                     radius=args.R, epsilon=args.epsilon)
    consts = concentration_constants(spec)
    c_inf = args.C_inf if args.C_inf is not None else (2.0 * args.R) ** 2
    r = feature_budget(args.delta, args.tau, consts, args.d, args.epsilon, c_inf, args.n,
                       const=args.const)
    print(r)
    print(json.dumps({
        "r": r, "delta": args.delta, "tau": args.tau, "epsilon": args.epsilon, "d": args.d,
        "n": args.n, "C_inf": c_inf, "const": args.const, "psi": consts.psi,
        "kappa_lb": consts.kappa_lb, "V": consts.V, "D": consts.D,
    }))
    return 0


# -- gradcheck ------------------------------------------------------------------


def run_gradcheck(n=4, r=3, d=2, epsilon=0.5, seed=0, corrupt=0.0):
    """FD checks of the three gradients on a small random instance.

    ``corrupt`` scales the analytic gradients by ``1 + corrupt`` (a negative
    control for the harness). Returns ``(passed, report_dict)``.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.5, 0.5, size=(n, d))
    Y = rng.uniform(-0.5, 0.5, size=(n, d))
    a = rng.uniform(0.5, 1.0, n)
    mu = DiscreteMeasure.normalized(X, a)
    nu = DiscreteMeasure(Y)
    Kx = gibbs_kernel(cost_matrix(DiscreteMeasure(X[:3]), DiscreteMeasure(Y[:3]),
                                  CostSpec("squared_euclidean", epsilon)), epsilon)
    w3 = np.full(3, 1.0 / 3.0)
    feats = sample_features(FeatureMapSpec.gaussian(epsilon, 1.0, d), r, seed)
    checks = [
        (check_kernel_grad(Kx, w3, w3, epsilon, corrupt=corrupt), KERNEL_GRAD_TOL),
        (check_location_grad(feats, mu, nu, epsilon, corrupt=corrupt), LOCATION_GRAD_TOL),
        (check_feature_grad(feats, mu, nu, epsilon, corrupt=corrupt), LOCATION_GRAD_TOL),
    ]
    report = {
        rep.name: {"fd_max_rel_err": rep.fd_max_rel_err, "tol": tol,
                   "passed": rep.fd_max_rel_err <= tol}
        for rep, tol in checks
    }
    return all(v["passed"] for v in report.values()), report


def cmd_gradcheck(args):
    passed, report = run_gradcheck(args.n, args.r, args.d, args.epsilon, args.seed, args.corrupt)
    for name, entry in report.items():
        status = "ok" if entry["passed"] else "FAIL"
        print(f"{name}: max rel err {entry['fd_max_rel_err']:.3e} (tol {entry['tol']:g}) {status}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0 if passed else 1


# -- gen ------------------------------------------------------------------------


def cmd_gen(args):
    if args.dataset == "gaussians2d":
        mu, nu = bench.gen_gaussians(args.n, args.seed)
    else:
        mu, nu = bench.gen_sphere(args.n, args.seed)
    save_measure(args.source, mu, weights=not args.no_weights)
    save_measure(args.target, nu, weights=not args.no_weights)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="linot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one OT problem between two point-cloud files")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--epsilon", type=float, default=0.5)
    s.add_argument("--method", choices=["dense", "rf", "rf_accelerated"], default="rf")
    s.add_argument("--cost", choices=["squared_euclidean", "neg_log_dot"], default="squared_euclidean")
    s.add_argument("--r", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.add_argument("--potentials", help="write alpha/beta to this .npz file")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="time-versus-deviation sweep")
    b.add_argument("--spec", help="ExperimentSpec JSON file (overrides the grid flags)")
    b.add_argument("--dataset", choices=list(bench.DATASETS), default="gaussians2d")
    b.add_argument("--paths", nargs=2, metavar=("SOURCE", "TARGET"))
    b.add_argument("--n", type=int, default=4000)
    b.add_argument("--epsilons", type=_float_list, default=[0.5])
    b.add_argument("--r-values", type=_int_list, default=[100, 500, 1000, 2000])
    b.add_argument("--seeds", type=_int_list, default=None, help="comma list of seeds")
    b.add_argument("--n-seeds", type=int, default=5, help="use seeds 0..N-1")
    b.add_argument("--methods", default="dense_sinkhorn,rf_sinkhorn")
    b.add_argument("--ground-truth-tol", type=float, default=1e-10)
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--max-iters", type=int, default=100_000)
    b.add_argument("--data-seed", type=int, default=0)
    b.add_argument("--csv", help="write records here (default: stdout)")
    b.add_argument("--svg", help="write a time-vs-deviation scatter")
    b.add_argument("--parallel-cells", action="store_true",
                   help="run cells concurrently (wall times become unreliable)")
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("budget", help="number of features for a target accuracy")
    g.add_argument("--delta", type=float, required=True)
    g.add_argument("--tau", type=float, required=True)
    g.add_argument("--epsilon", type=float, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--R", type=float, default=1.0)
    g.add_argument("--C-inf", dest="C_inf", type=float, default=None,
                   help="sup of the cost (default (2R)^2)")
    g.add_argument("--kind", choices=["gaussian", "arccos"], default="gaussian")
    g.add_argument("--s", type=int, default=1)
    g.add_argument("--kappa", type=float, default=0.1)
    g.add_argument("--sigma", type=float, default=2.0)
    g.add_argument("--const", type=float, default=2.0)
    g.set_defaults(func=cmd_budget)

    c = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    c.add_argument("--n", type=int, default=4)
    c.add_argument("--r", type=int, default=3)
    c.add_argument("--d", type=int, default=2)
    c.add_argument("--epsilon", type=float, default=0.5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--json", help="write the per-object report here")
    c.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    n = sub.add_parser("gen", help="write a synthetic pair of point clouds")
    n.add_argument("--dataset", choices=["gaussians2d", "sphere"], default="gaussians2d")
    n.add_argument("--n", type=int, default=4000)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--no-weights", action="store_true")
    n.add_argument("source")
    n.add_argument("target")
    n.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (LinotError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
