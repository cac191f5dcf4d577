"""Command-line interface: ``volterra-mor <command> [options]``.

Every command accepts ``--config FILE`` with flat ``key = value`` lines
(keys are the long option names, with ``-`` or ``_``); explicit flags
override the file. Exit status is 0 on success (including flagged
non-convergence, reported in the summary's ``status`` line), 2 for invalid
input and 3 for numerical failure.
"""

import argparse
import csv
import io as _io
import sys as _sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import _accel, io, mor, norms, stability
from .sylvester import BACKENDS, SolveBackend
from .systems import TruncatedSeries, demo_system, make_perturbation

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
DEMO_N, DEMO_SEED = 8, 7
REDUCED_FILES = {"A": "Ar.mtx", "N": "Nr.mtx", "b": "br.txt", "c": "cr.txt"}


class ConfigError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


def _floats(text):
    try:
        return [float(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for num, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{num}: empty key")
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _system_args(p):
    g = p.add_argument_group("system")
    g.add_argument("--system-dir", help="directory with A.mtx, N.mtx, b.txt, c.txt")
    g.add_argument("--A", dest="path_A", help="Matrix Market file for A")
    g.add_argument("--N", dest="path_N", help="Matrix Market file for N")
    g.add_argument("--b", dest="path_b", help="text file for b")
    g.add_argument("--c", dest="path_c", help="text file for c")
    g.add_argument("--demo", action="store_true", help="use the bundled 8-state demo system")


def _mor_args(p):
    g = p.add_argument_group("reduction")
    g.add_argument("--method", choices=("birka", "tbirka"), default="tbirka")
    g.add_argument("--r", type=int, default=2)
    g.add_argument("--M", type=int, default=3)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--max-iter", type=int, default=500)
    g.add_argument("--init", choices=mor.INIT_RULES, default="random")
    g.add_argument("--backend", choices=BACKENDS, default="direct")
    g.add_argument("--solver-tol", type=float, default=1e-10)
    g.add_argument("--solver-maxit", type=int, default=1000)
    g.add_argument("--recycle-dim", type=int, default=2)


def build_parser():
    parser = argparse.ArgumentParser(prog="volterra-mor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--output", "-o", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("reduce", "reduce a system with BIRKA or TBIRKA")
    _system_args(p)
    _mor_args(p)

    p = add("h2norm", "H2 norms of the truncated series and its kernels")
    _system_args(p)
    p.add_argument("--M", type=int, default=3)
    p.add_argument("--points", type=int, default=64, help="quadrature points per axis")

    p = add("verify-interp", "check the truncated interpolation conditions")
    _system_args(p)
    p.add_argument("--reduced-dir", required=False,
                   help="directory with Ar.mtx, Nr.mtx, br.txt, cr.txt (as written by reduce)")
    p.add_argument("--M", type=int, default=3)

    p = add("sweep", "second-condition scaling sweep along a random direction")
    _system_args(p)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--scales", type=_floats, default=[1e-6, 1e-5, 1e-4, 1e-3, 1e-2])
    p.add_argument("--direction-seed", type=int, default=1)
    p.add_argument("--normalize", action="store_true",
                   help="shift A so that the resolvent H-inf norm is below 0.9 first")
    p.add_argument("--quad-points", type=int, default=48)
    p.add_argument("--hinf-points", type=int, default=32)
    p.add_argument("--hinf-refine", type=int, default=3)

    p = add("first-condition", "inexact-solve TBIRKA runs against the direct reference")
    _system_args(p)
    _mor_args(p)
    p.set_defaults(backend="bicg")
    p.add_argument("--tolerances", type=_floats, default=[1e-4, 1e-8, 1e-12])

    p = add("hypo-check", "BIRKA and perturbation-bound hypothesis checks for a random F")
    _system_args(p)
    p.add_argument("--f-norm", type=float, default=1e-3)
    p.add_argument("--f-seed", type=int, default=1)

    p = add("generate-demo", "write a seeded stable demo system")
    p.add_argument("--n", type=int, default=DEMO_N)
    p.add_argument("--r-hint", type=int, default=2, help="recorded in the summary only")
    return parser


_PATH_KEYS = {"A": "path_A", "N": "path_N", "b": "path_b", "c": "path_c"}


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            dest = _PATH_KEYS.get(key, key)
            if dest not in known or dest in ("config", "help"):
                raise ConfigError(f"{args.config}: unknown key {key!r} for {args.command}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                value = action.type(raw) if action.type else raw
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{args.config}: bad value for {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{args.config}: {key} must be one of {list(action.choices)}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def demo_dir():
    return Path(str(resources.files("volterra_mor") / "data" / "demo"))


def _load(args):
    if args.demo:
        return io.load_system_dir(demo_dir())
    if args.system_dir:
        return io.load_system_dir(args.system_dir)
    paths = [args.path_A, args.path_N, args.path_b, args.path_c]
    if any(p is None for p in paths):
        raise ConfigError("give --demo, --system-dir, or all of --A --N --b --c")
    return io.load_system(*paths)


def _mor_config(args):
    backend = SolveBackend(args.backend, args.solver_tol, args.solver_maxit, args.recycle_dim)
    M = args.M if args.method == "tbirka" else 1
    return mor.MorConfig(r=args.r, M=M, tol=args.tol, max_outer_iterations=args.max_iter,
                         init=args.init, backend=backend, seed=args.seed)


def _csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trace_csv(trace):
    """One row per outer iteration with eigenvalues, change and solver data."""
    r = len(trace.initial_eigenvalues)
    header = ["iteration", "change", "stable", "solver_iterations", "max_solver_residual",
              "metric_b", "metric_c", "summed_b", "summed_c"]
    header += [f"eig{i}_{part}" for i in range(1, r + 1) for part in ("re", "im")]
    rows = []
    for it, rec in enumerate(trace.records, start=1):
        eig = sorted(rec.eigenvalues, key=lambda z: (round(z.real, 12), round(z.imag, 12)))
        o = rec.orthogonality
        row = [it, _fmt(rec.change), int(rec.stable),
               sum(rep.iterations for rep in rec.reports),
               _fmt(max(rep.final_relative_residual for rep in rec.reports)),
               _fmt(o.metric_b), _fmt(o.metric_c), _fmt(o.summed_b), _fmt(o.summed_c)]
        row += [_fmt(v) for z in eig for v in (z.real, z.imag)]
        rows.append(row)
    return _csv_text(header, rows)


def _summary(out, lines):
    text = "".join(f"{k}: {v}\n" for k, v in lines)
    io.atomic_write_text(Path(out) / "summary.txt", text)
    _sys.stdout.write(text)


def cmd_reduce(args):
    sys = _load(args)
    cfg = _mor_config(args)
    run = mor.tbirka if args.method == "tbirka" else mor.birka
    red, trace = run(sys, cfg)
    out = Path(args.output)
    io.save_system(out, red, REDUCED_FILES)
    io.atomic_write_text(out / "trace.csv", trace_csv(trace))
    _summary(out, [
        ("command", "reduce"), ("method", args.method), ("n", sys.n), ("r", cfg.r),
        ("M", cfg.M), ("backend", cfg.backend.kind),
        ("status", "converged" if trace.converged else "not-converged"),
        ("outer_iterations", trace.iterations),
        ("final_change", _fmt(trace.changes[-1]) if trace.changes else "nan"),
        ("reduced_stable", red.stable),
    ])
    return EXIT_OK


def cmd_h2norm(args):
    sys = _load(args)
    sys.require_stable("the H2 norm")
    gram = norms.h2_truncated_gramian(TruncatedSeries(sys, args.M))
    rows = []
    for k in range(1, args.M + 1):
        quad = ""
        err = ""
        if k <= 3:
            q = norms.h2_subsystem_quadrature(sys, k, norms.FrequencyGrid.for_system(sys, args.points, k))
            quad, err = _fmt(q.value), _fmt(q.estimated_error)
        rows.append([k, _fmt(np.sqrt(max(gram.terms[k - 1], 0.0))), quad, err])
    out = Path(args.output)
    io.atomic_write_text(out / "h2norm.csv",
                         _csv_text(["k", "gramian", "quadrature", "quadrature_error"], rows))
    _summary(out, [("command", "h2norm"), ("M", args.M), ("h2_norm", _fmt(gram.value))])
    return EXIT_OK


def cmd_verify(args):
    sys = _load(args)
    if not args.reduced_dir:
        raise ConfigError("verify-interp needs --reduced-dir")
    r = io.load_system_dir(args.reduced_dir, REDUCED_FILES)
    red = mor.ReducedSystem(r.A, r.N, r.b, r.c)
    fv, rv, fd, rd = mor.interpolation_sides(sys, red, args.M)
    res = mor.verify_truncated_interpolation(sys, red, args.M)
    rows = [[k, _fmt(fv[k - 1].real), _fmt(fv[k - 1].imag), _fmt(rv[k - 1].real),
             _fmt(rv[k - 1].imag)] for k in range(1, args.M + 1)]
    out = Path(args.output)
    io.atomic_write_text(out / "interpolation.csv", _csv_text(
        ["k", "full_re", "full_im", "reduced_re", "reduced_im"], rows))
    _summary(out, [("command", "verify-interp"), ("M", args.M),
                   ("value_residual", _fmt(res.value_residual)),
                   ("derivative_residual", _fmt(res.derivative_residual))])
    return EXIT_OK


def cmd_sweep(args):
    sys = _load(args)
    shift = 0.0
    if args.normalize:
        sys, shift = stability.normalize_resolvent(sys, 0.9)
    D = make_perturbation(sys.n, 1.0, args.direction_seed)
    grids = stability.SweepGrids(args.quad_points, args.hinf_points, args.hinf_refine)
    result = stability.scaling_sweep(sys, args.M, D, args.scales, grids)
    hyp = stability.birka_hypothesis_check(sys, max(args.scales) * D)
    out = Path(args.output)
    io.atomic_write_text(out / "sweep.csv", stability.sweep_csv(result, args.M))
    lines = [("command", "sweep"), ("M", args.M), ("shift", _fmt(shift)),
             ("rows", len(result.records)), ("slope", _fmt(result.slope))]
    lines += [(f"slope_k{k + 1}", _fmt(s)) for k, s in enumerate(result.subsystem_slopes)]
    lines += [(f"u_slope_k{k + 2}", _fmt(s)) for k, s in enumerate(result.u_slopes)]
    lines += [("dropped_scales", " ".join(_fmt(s) for s in result.dropped) or "none")]
    lines += [(k, _fmt(v) if isinstance(v, float) else v) for k, v in hyp.as_dict().items()]
    _summary(out, lines)
    return EXIT_OK


def cmd_first_condition(args):
    sys = _load(args)
    cfg = _mor_config(argparse.Namespace(**{**vars(args), "method": "tbirka"}))
    kind = args.backend if args.backend != "direct" else "bicg"
    table = stability.first_condition_experiment(sys, cfg, args.tolerances, kind)
    out = Path(args.output)
    io.atomic_write_text(out / "first_condition.csv", stability.first_condition_csv(table))
    _summary(out, [("command", "first-condition"), ("solver", kind),
                   ("reference_converged", table.reference_converged),
                   ("reference_iterations", table.reference_iterations),
                   ("monotone", table.monotone if table.rows else "n/a"),
                   ("notice", table.notice or "none")])
    return EXIT_OK


def cmd_hypo(args):
    sys = _load(args)
    F = make_perturbation(sys.n, args.f_norm, args.f_seed)
    hyp = stability.birka_hypothesis_check(sys, F)
    out = Path(args.output)
    items = hyp.as_dict()
    io.atomic_write_text(out / "hypothesis.csv", _csv_text(
        ["quantity", "value"],
        [[k, _fmt(v) if isinstance(v, float) else int(v)] for k, v in items.items()]))
    _summary(out, [("command", "hypo-check")] + [
        (k, _fmt(v) if isinstance(v, float) else v) for k, v in items.items()])
    return EXIT_OK


def generate_demo(n, r_hint, seed, directory):
    """Write a seeded stable demo system; returns the system."""
    sys = demo_system(n, seed)
    io.save_system(directory, sys)
    return sys


def cmd_generate(args):
    out = Path(args.output)
    sys = generate_demo(args.n, args.r_hint, args.seed, out)
    _summary(out, [("command", "generate-demo"), ("n", sys.n), ("seed", args.seed),
                   ("r_hint", args.r_hint), ("stable", sys.stable),
                   ("resolvent_hinf", _fmt(norms.resolvent_hinf(sys.A))),
                   ("n_norm", _fmt(np.linalg.norm(sys.N, 2)))])
    return EXIT_OK


COMMANDS = {
    "reduce": cmd_reduce, "h2norm": cmd_h2norm, "verify-interp": cmd_verify,
    "sweep": cmd_sweep, "first-condition": cmd_first_condition, "hypo-check": cmd_hypo,
    "generate-demo": cmd_generate,
}


def main(argv=None):
    _accel.configure_threads()
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    except (ConfigError, OSError) as exc:
        _sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        _sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
