"""Command-line interface.

Problem files are JSON::

    {"alpha": {"mean": [...], "cov": [[...]], "mass": 1.0},
     "beta":  {"mean": [...], "cov": [[...]]},
     "sigma": 0.5}            # or "epsilon": 0.5, with epsilon = 2 sigma^2
                              # optional "gamma" for unbalanced problems

Results go to standard output as JSON with 17 significant digits.
Exit codes: 0 success, 2 bad input, 3 numerical precondition failure,
4 non-convergence.
"""

import argparse
import json
import math
import sys

import numpy as np

from . import barycenter as bary
from . import empirical as emp
from . import entropic as ent
from . import unbalanced as unb
from ._errors import GaussEOTError, InvalidInput
from .gaussian_ot import Gaussian, bures, w2_gaussian

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 2, 3, 4
# symmetry tolerance for covariances read from files
FILE_SYM_RTOL = 1e-9
DEFAULT_EPSILON = 0.5


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj):
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(json.dumps(str(k)) + ": " + dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return json.dumps(str(obj))


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise InvalidInput(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path} is not valid JSON: {e}") from None


def _matrix(x, name):
    try:
        M = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise InvalidInput(f"{name} must be a numeric array") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInput(f"{name} must be a square nested array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} has non-finite entries")
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > FILE_SYM_RTOL * scale:
        raise InvalidInput(f"{name} is not symmetric within {FILE_SYM_RTOL:g}")
    return 0.5 * (M + M.T)


def parse_gaussian(spec, name):
    if not isinstance(spec, dict) or "mean" not in spec or "cov" not in spec:
        raise InvalidInput(f"{name} needs 'mean' and 'cov'")
    try:
        mean = np.atleast_1d(np.asarray(spec["mean"], dtype=float))
        mass = float(spec.get("mass", 1.0))
    except (TypeError, ValueError):
        raise InvalidInput(f"{name} has a non-numeric mean or mass") from None
    return Gaussian(mean, _matrix(spec["cov"], f"{name}.cov"), mass)


def resolve_sigma(file_spec, args, default_epsilon=None):
    """Pick sigma from the command line, else the problem file, else the default epsilon."""
    cli = [k for k in ("sigma", "epsilon") if getattr(args, k, None) is not None]
    if len(cli) == 2:
        raise InvalidInput("give either --sigma or --epsilon, not both")
    if cli:
        key, val = cli[0], getattr(args, cli[0])
    else:
        found = [k for k in ("sigma", "epsilon") if file_spec is not None and k in file_spec]
        if len(found) == 2:
            raise InvalidInput("problem file gives both sigma and epsilon")
        if found:
            key, val = found[0], file_spec[found[0]]
        elif default_epsilon is not None:
            key, val = "epsilon", default_epsilon
        else:
            raise InvalidInput("no regularization given: set sigma or epsilon")
    try:
        val = float(val)
    except (TypeError, ValueError):
        raise InvalidInput(f"{key} must be a number") from None
    if not (val > 0 and math.isfinite(val)):
        raise InvalidInput(f"{key} must be positive and finite")
    return val if key == "sigma" else math.sqrt(val / 2.0)


def load_problem(path, args, default_epsilon=None):
    spec = _load_json(path)
    if not isinstance(spec, dict) or "alpha" not in spec or "beta" not in spec:
        raise InvalidInput("problem file needs 'alpha' and 'beta'")
    alpha = parse_gaussian(spec["alpha"], "alpha")
    beta = parse_gaussian(spec["beta"], "beta")
    if alpha.dim != beta.dim:
        raise InvalidInput("alpha and beta have different dimensions")
    sigma = resolve_sigma(spec, args, default_epsilon)
    gamma = getattr(args, "gamma", None)
    if gamma is None:
        gamma = spec.get("gamma")
    if gamma is not None:
        try:
            gamma = float(gamma)
        except (TypeError, ValueError):
            raise InvalidInput("gamma must be a number") from None
    return alpha, beta, sigma, gamma


def cmd_bures(args):
    alpha, beta, _, _ = load_problem(args.problem, args, default_epsilon=DEFAULT_EPSILON)
    # both reported squared, as in ||a - b||^2 + bures(A, B)
    return {"w2": w2_gaussian(alpha, beta), "bures": bures(alpha.cov, beta.cov)}


def cmd_entropic(args):
    alpha, beta, sigma, _ = load_problem(args.problem, args)
    out = {"sigma": sigma, "epsilon": 2 * sigma ** 2,
           "ot_sigma": ent.ot_sigma(alpha, beta, sigma),
           "bures_sigma_sq": ent.bures_sigma_sq(alpha.cov, beta.cov, sigma),
           "divergence": ent.sinkhorn_divergence(alpha, beta, sigma)}
    if args.plan:
        plan = ent.plan_closed_form(alpha, beta, sigma, ridge=args.ridge)
        out["plan"] = {"mean": plan.mean, "cov": plan.cov}
    if args.duals:
        U, V = ent.dual_potentials(alpha.cov, beta.cov, sigma)
        out["duals"] = {"U": U, "V": V}
    if args.gradient:
        gA, gB = ent.grad_bures_sigma(alpha.cov, beta.cov, sigma)
        out["grad"] = {"A": gA, "B": gB}
    return out


def cmd_uot(args):
    alpha, beta, sigma, gamma = load_problem(args.problem, args)
    if gamma is None:
        raise InvalidInput("unbalanced problems need gamma (file key or --gamma)")
    params = unb.UnbalancedParams(sigma, gamma)
    plan = unb.unbalanced_plan(alpha, beta, params)
    return {"sigma": sigma, "gamma": gamma, "uot": unb.uot(alpha, beta, params, plan=plan),
            "mass": plan.mass, "mean": plan.mean, "cov": plan.cov}


def cmd_barycenter(args):
    spec = _load_json(args.components)
    if not isinstance(spec, dict) or "components" not in spec:
        raise InvalidInput("components file needs 'components' (and optionally 'weights')")
    comps = [parse_gaussian(c, f"components[{k}]") for k, c in enumerate(spec["components"])]
    if not comps:
        raise InvalidInput("no components given")
    weights = spec.get("weights", [1.0 / len(comps)] * len(comps))
    sigma = resolve_sigma(spec, args)
    problem = bary.BarycenterProblem(np.asarray(weights, dtype=float), tuple(comps), sigma)
    g, residual, it = bary.debiased_barycenter(problem, tol=args.tol, max_iter=args.max_iter)
    return {"sigma": sigma, "mean": g.mean, "cov": g.cov, "residual": residual, "iterations": it}


def _broadcast(values, n, name):
    if len(values) == 1:
        return list(values) * n
    if len(values) != n:
        raise InvalidInput(f"--{name} needs 1 or {n} values")
    return list(values)


def cmd_validate(args):
    sigma = resolve_sigma(None, args, DEFAULT_EPSILON)
    masses = args.mass_beta
    gammas = _broadcast(args.gamma if args.gamma else [math.inf], len(masses), "gamma")
    for v in list(args.dims) + list(args.ns):
        if v < 1:
            raise InvalidInput("dims and ns must be positive")
    if args.trials < 1:
        raise InvalidInput("trials must be positive")
    config = emp.ExperimentConfig(dims=tuple(args.dims), ns=tuple(args.ns), sigma=sigma,
                                  cells=tuple(zip(map(float, masses), map(float, gammas))),
                                  mass_alpha=args.mass_alpha, trials=args.trials,
                                  base_seed=args.seed, tol=args.tol, max_iter=args.max_iter)
    if args.moments:
        rows = emp.moment_experiment(config, workers=args.workers)
        emp.write_csv(rows, args.out, emp.MOMENT_COLUMNS)
    else:
        rows = emp.convergence_experiment(config, workers=args.workers)
        emp.write_csv(rows, args.out)
    meta = config.metadata()
    meta["kind"] = "plan_moments" if args.moments else "values"
    with open(args.out + ".meta.json", "w") as fh:
        fh.write(dumps(meta) + "\n")
    return {"rows": len(rows), "out": args.out, "metadata": meta}


def cmd_plan_hist(args):
    alpha, beta, sigma, gamma = load_problem(args.problem, args, default_epsilon=DEFAULT_EPSILON)
    if alpha.dim != 1:
        raise InvalidInput("plan histograms need one-dimensional measures")
    X = emp.sample_gaussian(alpha, args.n, emp.SeededRng(args.seed))
    Y = emp.sample_gaussian(beta, args.n, emp.SeededRng(args.seed + 1))
    if gamma is None:
        res = emp.sinkhorn_discrete(X, Y, sigma)
        plan = ent.plan_closed_form(alpha, beta, sigma)
        theory = {"mass": 1.0, "mean": plan.mean, "cov": plan.cov}
    else:
        res = emp.sinkhorn_discrete_unbalanced(X, Y, sigma, gamma)
        plan = unb.unbalanced_plan(alpha, beta, unb.UnbalancedParams(sigma, gamma))
        theory = {"mass": plan.mass, "mean": plan.mean, "cov": plan.cov}
    H, xe, ye = emp.plan_histogram(res.f, res.g, X, Y, sigma, bins=args.bins)
    with open(args.out, "w") as fh:
        fh.write("x_left,x_right,y_left,y_right,weight\n")
        for i in range(H.shape[0]):
            for j in range(H.shape[1]):
                fh.write(",".join(_num(v) for v in (xe[i], xe[i + 1], ye[j], ye[j + 1], H[i, j])) + "\n")
    return {"sigma": sigma, "gamma": gamma if gamma is not None else math.inf, "n": args.n,
            "seed": args.seed, "histogram_mass": float(H.sum()), "out": args.out,
            "theoretical_plan": theory}


def _add_reg(p):
    p.add_argument("--sigma", type=float, help="regularization sigma (overrides the file)")
    p.add_argument("--epsilon", type=float, help="entropic weight epsilon = 2 sigma^2")


def _gamma_arg(s):
    return math.inf if s.lower() in ("inf", "infinity") else float(s)


def build_parser():
    parser = argparse.ArgumentParser(prog="gauss-eot", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bures", help="2-Wasserstein and Bures distances")
    p.add_argument("problem")
    p.set_defaults(func=cmd_bures)

    p = sub.add_parser("entropic", help="balanced entropic OT in closed form")
    p.add_argument("problem")
    _add_reg(p)
    p.add_argument("--plan", action="store_true", help="include the optimal plan")
    p.add_argument("--duals", action="store_true", help="include the dual quadratic coefficients")
    p.add_argument("--gradient", action="store_true", help="include the gradient in (A, B)")
    p.add_argument("--ridge", type=float, default=0.0, help="jitter for singular covariances (plan only)")
    p.set_defaults(func=cmd_entropic)

    p = sub.add_parser("uot", help="unbalanced entropic OT in closed form")
    p.add_argument("problem")
    _add_reg(p)
    p.add_argument("--gamma", type=float, help="marginal penalty (overrides the file)")
    p.set_defaults(func=cmd_uot)

    p = sub.add_parser("barycenter", help="debiased entropic barycenter")
    p.add_argument("components")
    _add_reg(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=1000)
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("validate", help="sample-based convergence experiment, written as CSV")
    p.add_argument("--dims", type=int, nargs="+", default=[5, 10])
    p.add_argument("--ns", type=int, nargs="+", default=[100, 500, 2000, 5000])
    p.add_argument("--trials", type=int, default=20)
    _add_reg(p)
    p.add_argument("--gamma", type=_gamma_arg, nargs="+",
                   help="marginal penalty per --mass-beta entry ('inf' = balanced); default balanced")
    p.add_argument("--mass-beta", type=float, nargs="+", default=[1.0])
    p.add_argument("--mass-alpha", type=float, default=1.0)
    p.add_argument("--moments", action="store_true",
                   help="report plan mean/covariance errors instead of values")
    p.add_argument("--tol", type=float, default=emp.DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=emp.DEFAULT_MAX_ITER)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: GAUSS_EOT_THREADS or CPU count)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan-hist", help="2d histogram of a 1d Sinkhorn plan")
    p.add_argument("problem")
    _add_reg(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_hist)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except GaussEOTError as e:
        print(f"gauss-eot: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"gauss-eot: {e}", file=sys.stderr)
        return EXIT_INPUT
    print(dumps(out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
