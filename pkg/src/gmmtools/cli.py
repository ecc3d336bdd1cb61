"""Command-line interface: ``gmmtools <command> ...``.

Mixtures are read and written as ``gmm/1`` documents, tabular results as CSV
(stdout unless ``-o`` is given).  Commands that write files also write a JSON
run manifest next to the first output (``<output>.manifest.json``, or
``--manifest PATH``); ``gmmtools replay`` re-runs a manifest and checks that
every output hash is reproduced.

Exit status: 0 success, 2 validation, 3 format, 4 numeric, 5 I/O.  Failures
print a one-line JSON object with the error category to stderr.
"""

import argparse
import json
import sys
import time

import numpy as np
from scipy.special import ndtr

from . import __version__
from . import algebra, core
from .errors import GmmError, ValidationError
from .fileformat import (
    GmmDocument,
    csv_text,
    read_csv_points,
    read_gmm,
    read_manifest,
    serialize,
    sha256_file,
    write_manifest,
)
from .fitting import EmConfig, em_fit, select_model
from .measurement import (
    Box,
    CurveSpec,
    MeasurementModel,
    conditional_stats,
    fit_device,
    posterior_from_observation,
    propagate_product,
    qc_probability,
    simulate_device,
    validation_norms,
)
from .reduction import reduce
from .sampling import SeededStream, sample_gmm

__all__ = ["main", "build_parser"]

MEASURAND_NOTE = "measurand_dims"


class UsageError(ValidationError):
    category = "usage"


class ReplayMismatch(GmmError):
    category = "replay"
    exit_code = 1


class IoFailure(GmmError):
    category = "io"
    exit_code = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _Run:
    """Tracks files read and written by one command, for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs = {}
        self.outputs = {}

    def _read(self, path):
        self.inputs[path] = sha256_file(path)

    def gmm(self, path):
        self._read(path)
        return read_gmm(path)

    def mixture(self, path):
        return self.gmm(path).mixture

    def points(self, path):
        self._read(path)
        return read_csv_points(path)

    def emit(self, path, text):
        if path in (None, "-"):
            sys.stdout.write(text)
            return
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.outputs[path] = sha256_file(path)

    def emit_gmm(self, path, g, notes=(), name=None, unit=None):
        self.emit(path, serialize(GmmDocument(g, name, unit, tuple(notes))))

    def emit_csv(self, path, header, rows):
        self.emit(path, csv_text(header, rows))


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _matrix(text):
    rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise UsageError("matrix rows must have equal length")
    return np.array(rows)


def _notes_with_blocks(measurand_dims):
    return [f"{MEASURAND_NOTE} {' '.join(str(i) for i in measurand_dims)}"]


def _measurand_dims(doc, override):
    if override is not None:
        return tuple(override)
    note = doc.note_value(MEASURAND_NOTE)
    return tuple(int(v) for v in note.split()) if note else (0,)


# -- command handlers ------------------------------------------------------


def cmd_moments(run, a):
    mom = core.moments(run.mixture(a.input))
    rows = [("mean", i, None, v) for i, v in enumerate(mom.mean)]
    d = mom.mean.shape[0]
    rows += [("covariance", i, j, mom.covariance[i, j]) for i in range(d) for j in range(d)]
    run.emit_csv(a.output, ["quantity", "i", "j", "value"], rows)


def cmd_pdf(run, a):
    g = run.mixture(a.input)
    if a.points is not None:
        x = run.points(a.points)
        dens = np.atleast_1d(core.pdf(g, x))
        header = [f"x{i}" for i in range(x.shape[1])] + ["pdf"]
        run.emit_csv(a.output, header, [(*row, p) for row, p in zip(x, dens)])
        return
    if g.dim != 1:
        raise UsageError("--grid needs a one-dimensional mixture; use --points otherwise")
    lo, hi, n = a.grid
    xs = np.linspace(lo, hi, int(n))
    dens = np.atleast_1d(core.pdf(g, xs))
    sd = np.sqrt(g.covariances[:, 0, 0])
    cdf = ndtr((xs[:, None] - g.means[None, :, 0]) / sd) @ g.weights
    run.emit_csv(a.output, ["x", "pdf", "cdf"], zip(xs, dens, cdf))


def cmd_fallback(run, a):
    run.emit_gmm(a.output, core.gaussian_fallback(run.mixture(a.input)))


def cmd_affine(run, a):
    g = run.mixture(a.input)
    A = _matrix(a.matrix)
    b = np.array(_floats(a.offset)) if a.offset else None
    if A.size == 1:
        A = float(A[0, 0])
    run.emit_gmm(a.output, core.affine(g, A, b))


def cmd_convolve(run, a):
    gs = [run.mixture(p) for p in a.inputs]
    z = gs[0]
    for g in gs[1:]:
        z = algebra.convolve(z, g)
    run.emit_gmm(a.output, z)


def cmd_negate(run, a):
    run.emit_gmm(a.output, algebra.negate(run.mixture(a.input)))


def cmd_fuse(run, a):
    res = algebra.fuse(run.mixture(a.first), run.mixture(a.second))
    run.emit_gmm(a.output, res.posterior)
    if a.evidence or a.output not in (None, "-"):
        run.emit_csv(a.evidence, ["evidence", "log_evidence"], [(res.evidence, res.log_evidence)])


def cmd_mix(run, a):
    gs = [run.mixture(p) for p in a.inputs]
    if len(a.shares) != len(gs):
        raise UsageError(f"{len(gs)} inputs need {len(gs)} shares, got {len(a.shares)}")
    run.emit_gmm(a.output, algebra.mix(gs, a.shares))


def cmd_marginalize(run, a):
    g = run.mixture(a.input)
    blocks = core.BlockIndex.complement(g.dim, [i for i in range(g.dim) if i not in a.keep])
    if list(blocks.x_dims) != list(a.keep):
        raise UsageError("--keep dimensions must be listed in increasing order")
    run.emit_gmm(a.output, algebra.marginalize(g, blocks, keep="x"))


def cmd_condition(run, a):
    g = run.mixture(a.input)
    if len(a.values) != len(a.dims):
        raise UsageError("--values must give one number per observed dimension")
    blocks = core.BlockIndex.complement(g.dim, a.dims)
    run.emit_gmm(a.output, algebra.condition(g, blocks, np.array(a.values)))


def cmd_l2(run, a):
    d = algebra.l2_distance(run.mixture(a.first), run.mixture(a.second))
    run.emit_csv(a.output, ["l2_distance"], [(d,)])


def cmd_reduce(run, a):
    rep = reduce(run.mixture(a.input), a.k, budget=a.budget)
    run.emit_gmm(a.output, rep.reduced)
    if a.report or a.output not in (None, "-"):
        run.emit_csv(a.report, ["l2_before_refine", "l2_final", "refine_iterations", "gradient_ratio"],
                     [(rep.l2_before_refine, rep.l2_final, rep.refine_iterations, rep.gradient_ratio)])


def cmd_sample(run, a):
    g = run.mixture(a.input)
    batch = sample_gmm(SeededStream(a.seed), g, a.n)
    if a.hist is None:
        header = [f"x{i}" for i in range(g.dim)] + ["label"]
        rows = ((*p, lab) for p, lab in zip(batch.points, batch.component_labels))
        run.emit_csv(a.output, header, rows)
        return
    if not 0 <= a.hist_dim < g.dim:
        raise UsageError(f"--hist-dim must lie in [0, {g.dim})")
    col = batch.points[:, a.hist_dim]
    rng = tuple(a.range) if a.range else (float(col.min()), float(col.max()))
    counts, edges = np.histogram(col, bins=a.hist, range=rng)
    dens = counts / (col.shape[0] * np.diff(edges))
    run.emit_csv(a.output, ["bin_lo", "bin_hi", "count", "density"],
                 zip(edges[:-1], edges[1:], counts, dens))


def _em_config(a, k):
    return EmConfig(k=k, max_iters=a.max_iters, loglik_tol=a.tol, covariance_floor=a.floor,
                    restarts=a.restarts, seed=a.seed)


def _fit_rows(rep):
    return [(rep.model.n_components, rep.n_params, rep.final_loglik, rep.aic, rep.bic,
             rep.iterations_used, rep.converged)]


FIT_HEADER = ["k", "n_params", "loglik", "aic", "bic", "iterations", "converged"]


def cmd_fit(run, a):
    x = run.points(a.data)
    rep = em_fit(x, _em_config(a, a.k))
    run.emit_gmm(a.output, rep.model)
    if a.report or a.output not in (None, "-"):
        run.emit_csv(a.report, FIT_HEADER, _fit_rows(rep))


def cmd_select_k(run, a):
    x = run.points(a.data)
    sel = select_model(x, a.k, _em_config(a, a.k[0]))
    rows = [(r["k"], r["n_params"], r["loglik"], r["aic"], r["bic"],
             r["k"] == sel.best_aic, r["k"] == sel.best_bic, r["error"]) for r in sel.rows]
    run.emit_csv(a.table, ["k", "n_params", "loglik", "aic", "bic", "best_aic", "best_bic", "error"], rows)
    if a.output is not None:
        best = sel.best_bic if a.criterion == "bic" else sel.best_aic
        run.emit_gmm(a.output, sel.reports[best].model)


def cmd_device_sim(run, a):
    curve = CurveSpec.from_expression(a.curve, a.range[0], a.range[1], a.noise_var)
    data = simulate_device(curve, a.n, SeededStream(a.seed))
    run.emit_csv(a.output, ["x", "y"], data.points)


def cmd_device_fit(run, a):
    x = run.points(a.data)
    k = a.k[0] if len(a.k) == 1 else a.k
    measurand = tuple(a.measurand_dims)
    model = fit_device(x, k, _em_config(a, a.k[0]), criterion=a.criterion, measurand_dims=measurand)
    run.emit_gmm(a.output, model.joint, notes=_notes_with_blocks(measurand))
    if a.stats is not None:
        if len(model.blocks.x_dims) != 1:
            raise UsageError("--stats needs a single measurand dimension")
        lo, hi, n = a.grid if a.grid else (float(x[:, measurand[0]].min()), float(x[:, measurand[0]].max()), 201)
        st = conditional_stats(model, np.linspace(lo, hi, int(n)))
        dy = st.mean.shape[1]
        header = ["x"] + [f"mean{j}" for j in range(dy)] + [f"var{j}" for j in range(dy)] + ["flagged"]
        run.emit_csv(a.stats, header, ((xv, *m, *v, f) for xv, m, v, f in
                                       zip(st.x, st.mean, st.variance, st.flagged)))
    if a.curve is not None:
        if a.grid is None or a.noise_var is None:
            raise UsageError("--curve needs --grid LO HI N and --noise-var")
        curve = CurveSpec.from_expression(a.curve, a.grid[0], a.grid[1], a.noise_var)
        e, v = validation_norms(model, curve, int(a.grid[2]))
        run.emit_csv(a.norms, ["mean_l2", "variance_l2"], [(e, v)])


def cmd_posterior(run, a):
    doc = run.gmm(a.model)
    dims = _measurand_dims(doc, a.measurand_dims)
    g = doc.mixture
    blocks = core.BlockIndex.complement(g.dim, [i for i in range(g.dim) if i not in dims])
    post = posterior_from_observation(MeasurementModel(g, blocks), a.y)
    run.emit_gmm(a.output, post)


def cmd_product(run, a):
    gx, gy = run.mixture(a.first), run.mixture(a.second)
    cfg = None
    if a.max_iters is not None or a.restarts is not None:
        cfg = EmConfig(k=1, max_iters=a.max_iters or 200, restarts=a.restarts or 0, seed=a.seed)
    rep = propagate_product(gx, gy, a.n_mc, SeededStream(a.seed), k=a.k, cfg=cfg)
    run.emit_gmm(a.output, rep.model)
    if a.report or a.output not in (None, "-"):
        run.emit_csv(a.report, FIT_HEADER, _fit_rows(rep))


def cmd_qc(run, a):
    g = run.mixture(a.input)
    est = qc_probability(g, Box(a.lo, a.hi), a.n_mc, SeededStream(a.seed))
    run.emit_csv(a.output, ["estimate", "standard_error", "closed_form"],
                 [(est.estimate, est.standard_error, est.closed_form)])


def cmd_replay(run, a):
    man = read_manifest(a.manifest)
    for path, digest in man.get("inputs", {}).items():
        if sha256_file(path) != digest:
            raise ReplayMismatch(f"input {path} changed since the recorded run")
    code = main(man["argv"], _write_manifest=False)
    if code != 0:
        raise ReplayMismatch(f"replayed command exited with status {code}")
    bad = [p for p, digest in man.get("outputs", {}).items() if sha256_file(p) != digest]
    if bad:
        raise ReplayMismatch("outputs differ from the recorded run: " + ", ".join(bad))
    run.emit_csv(None, ["output", "sha256", "status"],
                 [(p, d, "identical") for p, d in man.get("outputs", {}).items()])


# -- parser ----------------------------------------------------------------


def _out(p, help="output path (default: stdout)"):
    p.add_argument("-o", "--output", help=help)


def _seed(p):
    p.add_argument("--seed", type=int, required=True, help="64-bit generator seed (required)")


def _em_options(p, restarts=4, max_iters=500):
    p.add_argument("--max-iters", type=int, default=max_iters)
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--tol", type=float, default=None, help="log-likelihood tolerance (default 1e-8 N)")
    p.add_argument("--floor", type=float, default=None, help="covariance floor")


def build_parser():
    parser = _Parser(prog="gmmtools", description="Gaussian mixture toolkit")
    parser.add_argument("--version", action="version", version=f"gmmtools {__version__}")
    parser.add_argument("--manifest", help="manifest path (default: <first output>.manifest.json)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("moments", help="mean and covariance as CSV")
    p.add_argument("input")
    _out(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("pdf", help="density (and CDF for 1-D) on a grid or at points")
    p.add_argument("input")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--grid", nargs=3, type=float, metavar=("LO", "HI", "N"))
    g.add_argument("--points", help="CSV of evaluation points")
    _out(p)
    p.set_defaults(func=cmd_pdf)

    p = sub.add_parser("fallback", help="moment-matched single Gaussian")
    p.add_argument("input")
    _out(p)
    p.set_defaults(func=cmd_fallback)

    p = sub.add_parser("affine", help="A X + b")
    p.add_argument("input")
    p.add_argument("--matrix", required=True, help='rows separated by ";", entries by ","')
    p.add_argument("--offset", help="comma-separated vector")
    _out(p)
    p.set_defaults(func=cmd_affine)

    p = sub.add_parser("convolve", help="distribution of X + Y (+ ...) for independent inputs")
    p.add_argument("inputs", nargs="+")
    _out(p)
    p.set_defaults(func=cmd_convolve)

    p = sub.add_parser("negate", help="distribution of -X")
    p.add_argument("input")
    _out(p)
    p.set_defaults(func=cmd_negate)

    p = sub.add_parser("fuse", help="normalized product of two densities")
    p.add_argument("first")
    p.add_argument("second")
    _out(p)
    p.add_argument("--evidence", help="CSV path for the evidence (default: stdout)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("mix", help="weighted mixture of sources")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--shares", nargs="+", type=float, required=True)
    _out(p)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("marginalize", help="marginal over the kept dimensions")
    p.add_argument("input")
    p.add_argument("--keep", nargs="+", type=int, required=True)
    _out(p)
    p.set_defaults(func=cmd_marginalize)

    p = sub.add_parser("condition", help="conditional given observed dimensions")
    p.add_argument("input")
    p.add_argument("--dims", nargs="+", type=int, required=True, help="observed dimensions")
    p.add_argument("--values", nargs="+", type=float, required=True)
    _out(p)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("l2", help="L2 distance between two mixtures")
    p.add_argument("first")
    p.add_argument("second")
    _out(p)
    p.set_defaults(func=cmd_l2)

    p = sub.add_parser("reduce", help="approximate with fewer components")
    p.add_argument("input")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--budget", type=int, default=500)
    _out(p)
    p.add_argument("--report", help="CSV path for distances (default: stdout)")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("sample", help="draw samples (or a histogram of them)")
    p.add_argument("input")
    p.add_argument("--n", type=int, required=True)
    _seed(p)
    p.add_argument("--hist", type=int, metavar="BINS", help="emit a histogram instead of points")
    p.add_argument("--hist-dim", type=int, default=0)
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    _out(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="EM fit to CSV data")
    p.add_argument("data")
    p.add_argument("--k", type=int, required=True)
    _seed(p)
    _em_options(p)
    _out(p)
    p.add_argument("--report", help="CSV path for fit statistics (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="AIC/BIC over candidate component counts")
    p.add_argument("data")
    p.add_argument("--k", nargs="+", type=int, required=True)
    _seed(p)
    _em_options(p)
    p.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    p.add_argument("--table", help="CSV path for the table (default: stdout)")
    p.add_argument("-o", "--output", help="write the selected model here")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("device-sim", help="simulate (x, y) data from a device curve")
    p.add_argument("--curve", required=True, help='expression in x, e.g. "x-0.2*x^2"')
    p.add_argument("--range", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    p.add_argument("--noise-var", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    _seed(p)
    _out(p)
    p.set_defaults(func=cmd_device_sim)

    p = sub.add_parser("device-fit", help="fit the joint (measurand, observable) mixture")
    p.add_argument("data")
    p.add_argument("--k", nargs="+", type=int, required=True, help="one K, or candidates for selection")
    _seed(p)
    _em_options(p)
    p.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    p.add_argument("--measurand-dims", nargs="+", type=int, default=[0])
    p.add_argument("--stats", help="CSV path for E(Y|X) and V(Y|X) on a grid")
    p.add_argument("--grid", nargs=3, type=float, metavar=("LO", "HI", "N"))
    p.add_argument("--curve", help="true curve, to report L2 norms of the conditional moments")
    p.add_argument("--noise-var", type=float)
    p.add_argument("--norms", help="CSV path for the norms (default: stdout)")
    _out(p)
    p.set_defaults(func=cmd_device_fit)

    p = sub.add_parser("posterior", help="measurand posterior given an observation")
    p.add_argument("model")
    p.add_argument("--y", nargs="+", type=float, required=True)
    p.add_argument("--measurand-dims", nargs="+", type=int)
    _out(p)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("product", help="fit a mixture to X * Y by Monte Carlo and EM")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--n-mc", type=int, required=True)
    p.add_argument("--k", type=int)
    _seed(p)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--restarts", type=int)
    _out(p)
    p.add_argument("--report", help="CSV path for fit statistics (default: stdout)")
    p.set_defaults(func=cmd_product)

    p = sub.add_parser("qc", help="probability of falling in a box, by Monte Carlo")
    p.add_argument("input")
    p.add_argument("--lo", nargs="+", type=float, required=True)
    p.add_argument("--hi", nargs="+", type=float, required=True)
    p.add_argument("--n-mc", type=int, required=True)
    _seed(p)
    _out(p)
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _report_error(exc, category, code):
    payload = {"status": "error", "category": category, "exit_code": code, "message": str(exc)}
    for attr in ("violations", "line", "field"):
        val = getattr(exc, attr, None)
        if val is not None:
            payload[attr] = val
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None, _write_manifest=True):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        run = _Run(args)
        t0 = time.perf_counter()
        args.func(run, args)
        wall = time.perf_counter() - t0
        if _write_manifest and args.command != "replay" and (run.outputs or args.manifest):
            path = args.manifest or next(iter(run.outputs)) + ".manifest.json"
            write_manifest(path, {
                "tool": "gmmtools",
                "version": __version__,
                "command": args.command,
                "argv": argv,
                "seed": getattr(args, "seed", None),
                "inputs": run.inputs,
                "outputs": run.outputs,
                "wall_time_s": wall,
            })
    except GmmError as exc:
        return _report_error(exc, exc.category, exc.exit_code)
    except OSError as exc:
        return _report_error(exc, IoFailure.category, IoFailure.exit_code)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return _report_error(exc, "numeric", 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
