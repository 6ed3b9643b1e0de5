"""Command-line front end (``ppwave``).

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 precondition
violation.  Errors are written to stderr as ``{"error": ..., "detail": ...}``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import catalog
from .classify import ClassifyOpts, Completeness, classify
from .expr import DomainError, ParseError, parse, to_text
from .geodesic import GeodesicState, integrate, reduced_integrate
from .metric import MetricSpec, PreconditionError, SingularMetricError, curvature, sample_points
from .metricfile import MetricFileError, dumps, format_metric_file, parse_metric_file, read_metric_file
from .normalize import NormalizeOpts, decompose, normalize_plane_wave
from .ode import IntegratorOpts, NumericFailure
from .transport import (LoopSpec, holonomy_membership, loop_holonomy, read_loop_csv,
                        screen_diagnostics, standard_screen)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PRECONDITION = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let values such as "-2:0" or "-1,0,0" through as arguments
        self._negative_number_matcher = re.compile(r"^-\.?\d")

    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------- parsing helpers

def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _span(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"span must look like a:b, got {text!r}")
    try:
        a, b = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"span must look like a:b, got {text!r}") from None
    if not a <= b:
        raise UsageError(f"span start must not exceed its end: {text!r}")
    return a, b


def _point(text: str, m: MetricSpec) -> np.ndarray:
    """'u=0,x1=0.5' (missing coordinates are 0) or a plain comma list."""
    p = np.zeros(m.dim)
    if "=" not in text:
        vals = _floats(text, "point")
        if len(vals) != m.dim:
            raise UsageError(f"point needs {m.dim} values (u, v, x1..x{m.n})")
        return np.array(vals)
    for item in text.split(","):
        if not item.strip():
            continue
        name, _, val = item.partition("=")
        try:
            p[m.vs.index(name.strip())] = float(val)
        except (KeyError, ValueError):
            raise UsageError(f"bad coordinate assignment {item!r}") from None
    return p


def _params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    if "n" in out:
        try:
            out["n"] = int(out["n"])
        except ValueError:
            raise UsageError("parameter n must be an integer") from None
    return out


def load_metric(source: str, params=None) -> MetricSpec:
    if source.startswith("catalog:"):
        name = source[len("catalog:"):]
        try:
            return catalog.get(name, **_params(params)).metric
        except catalog.UnknownEntryError as exc:
            raise UsageError(str(exc.args[0])) from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"metric source {source!r} is neither catalog:NAME nor a readable file")
    return read_metric_file(path)


def _seed(args) -> int:
    env = os.environ.get("PPWAVE_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PPWAVE_SEED must be an integer, got {env!r}") from None
    return args.seed


def _integrator_opts(args) -> IntegratorOpts:
    try:
        return IntegratorOpts(rtol=args.rtol, atol=args.atol, max_steps=args.max_steps,
                              blowup_norm=args.blowup_norm, sample_stride=args.stride)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ""


# ----------------------------------------------------------------- commands

def cmd_classify(args) -> int:
    m = load_metric(args.metric, args.param)
    opts = ClassifyOpts(n_samples=args.samples, tol=args.tol, seed=_seed(args))
    _emit(dumps(classify(m, opts).to_json()), args.out)
    return EXIT_OK


def cmd_curvature(args) -> int:
    m = load_metric(args.metric, args.param)
    p = _point(args.at, m)
    cur = curvature(m, p, method=args.method)
    names = m.vs.names
    comps = [{"index": [names[i] for i in idx], "value": float(val)}
             for idx, val in cur.nonzero(args.tol)]
    out = {"point": {names[i]: float(p[i]) for i in range(m.dim)},
           "convention": "R(X,Y,U,W) = g(R(X,Y)U, W), R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]",
           "components": comps,
           "symmetry_residual": cur.symmetry_residual(),
           "bianchi_residual": cur.bianchi_residual()}
    _emit(dumps(out), args.out)
    return EXIT_OK


def _write_csv(path: str, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    Path(path).write_text(buf.getvalue())


def cmd_geodesic(args) -> int:
    m = load_metric(args.metric, args.param)
    pos, vel = _floats(args.pos, "--pos"), _floats(args.vel, "--vel")
    if len(pos) != m.dim or len(vel) != m.dim:
        raise UsageError(f"--pos and --vel need {m.dim} components (u, v, x1..x{m.n})")
    span = _span(args.span)
    if not span[0] <= 0.0 <= span[1]:
        raise UsageError("span must contain 0")
    res = integrate(m, GeodesicState(pos, vel), span, _integrator_opts(args), args.method)
    summary = {"verdict": res.verdict.to_json(),
               "sides": {k: v.to_json() for k, v in res.side_verdicts.items()},
               "energy_drift": res.energy_drift, "null_drift": res.null_drift,
               "samples": int(len(res.s))}
    if args.out:
        names = m.vs.names
        header = ["s", *names, *("d" + c for c in names), "g_dot_dot", "g_dot_V"]
        rows = (np.concatenate([[s], p, v, [e, a]]) for s, p, v, e, a in
                zip(res.s, res.positions, res.velocities, res.energy, res.null_momentum))
        _write_csv(args.out, header, rows)
        summary["csv"] = os.path.basename(args.out)
        Path(args.out + ".json").write_text(dumps(summary))
    sys.stdout.write(dumps(summary))
    return EXIT_OK


def cmd_reduced(args) -> int:
    m = load_metric(args.metric, args.param)
    x0, dx0 = _floats(args.x0, "--x0"), _floats(args.dx0, "--dx0")
    if len(x0) != m.n or len(dx0) != m.n:
        raise UsageError(f"--x0 and --dx0 need {m.n} components")
    span = _span(args.span)
    red = reduced_integrate(m, x0, dx0, span, _integrator_opts(args), u0=args.u0)
    summary = {"verdict": red.verdict.to_json(), "samples": int(len(red.s))}
    if args.out:
        xs = [f"x{i + 1}" for i in range(m.n)]
        header = ["s", *xs, *("d" + x for x in xs)]
        _write_csv(args.out, header, (np.concatenate([[s], x, v]) for s, x, v in
                                      zip(red.s, red.x, red.xdot)))
        summary["csv"] = os.path.basename(args.out)
        Path(args.out + ".json").write_text(dumps(summary))
    sys.stdout.write(dumps(summary))
    return EXIT_OK


def _complete_worker(job):
    text, pos, vel, budget, opts = job
    m = parse_metric_file(text)
    try:
        res = integrate(m, GeodesicState(pos, vel), (-budget, budget), opts)
    except (SingularMetricError, NumericFailure, DomainError) as exc:
        return {"error": str(exc)}
    return {"verdict": res.verdict.to_json(), "energy_drift": res.energy_drift,
            "null_drift": res.null_drift}


def cmd_complete(args) -> int:
    m = load_metric(args.metric, args.param)
    if not args.budget > 0:
        raise UsageError("--budget must be positive")
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    pts = sample_points(m.vs, args.count, rng, half_width=1.0)
    vels = rng.uniform(-1.0, 1.0, size=(args.count, m.dim))
    opts = _integrator_opts(args)
    text = format_metric_file(m)
    jobs = [(text, p, v, args.budget, opts) for p, v in zip(pts, vels)]
    workers = args.jobs or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_complete_worker, jobs))
    else:
        results = [_complete_worker(j) for j in jobs]
    runs = []
    for p, v, r in zip(pts, vels, results):
        runs.append({"position": p.tolist(), "velocity": v.tolist(), **r})
    kinds = [r["verdict"]["kind"] for r in results if "verdict" in r]
    order = ["Completed", "MaxSteps", "StepUnderflow", "BlowUp"]
    worst = max(kinds, key=order.index) if kinds else None
    report = classify(m, ClassifyOpts(seed=seed))
    comp = report.completeness
    blow = [r for r in runs if r.get("verdict", {}).get("kind") == "BlowUp"]
    if blow:
        b = blow[0]
        comp = Completeness("KnownIncomplete", witness=(
            f"geodesic from {b['position']} with velocity {b['velocity']} escapes near "
            f"s={b['verdict']['s_star']!r}"))
    out = {"budget": args.budget, "seed": seed, "count": args.count,
           "worst_verdict": worst,
           "summary": ("no obstruction within budget"
                       if worst == "Completed" and len(kinds) == len(runs)
                       else "obstruction or failure observed within budget"),
           "certificate": comp.to_json(), "runs": runs}
    _emit(dumps(out), args.out)
    return EXIT_OK


def _loop_from_arg(text: str, m: MetricSpec, at: str | None) -> LoopSpec:
    if not text.startswith("rect:"):
        raise UsageError(f"--loop must look like rect:a=x1,b=u,eps=0.1[,at=...], got {text!r}")
    fields = {}
    for item in text[5:].split(","):
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"bad loop field {item!r}")
        fields[key.strip()] = val.strip()
    try:
        a, b = m.vs.index(fields["a"]), m.vs.index(fields["b"])
        eps = float(fields.get("eps", "0.1"))
    except (KeyError, ValueError):
        raise UsageError(f"loop needs a=<coord>, b=<coord>, eps=<number>: {text!r}") from None
    base = np.zeros(m.dim)
    if "at" in fields:
        vals = _floats(fields["at"].replace(":", ","), "at")
        if len(vals) != m.dim:
            raise UsageError(f"at= needs {m.dim} colon-separated values")
        base = np.array(vals)
    if at:
        base = _point(at, m)
    try:
        return LoopSpec.rectangle((a, b), eps, base, names=(fields["a"], fields["b"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_holonomy(args) -> int:
    m = load_metric(args.metric, args.param)
    if bool(args.loop) == bool(args.loop_file):
        raise UsageError("give exactly one of --loop or --loop-file")
    if args.loop:
        loop = _loop_from_arg(args.loop, m, args.at)
    else:
        try:
            loop = read_loop_csv(args.loop_file, m.vs.names)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    h = loop_holonomy(m, loop, method=args.method)
    mem = holonomy_membership(h, tol=args.tol)
    out = {"loop": h.loop, "base_point": h.base_point.tolist(),
           "frame": ["v", *(f"x{i + 1}" for i in range(m.n)), "u"],
           "matrix": h.matrix.tolist(), "det": h.det,
           "residuals": mem["residuals"], "member_Rn": mem["member_Rn"]}
    _emit(dumps(out), args.out)
    return EXIT_OK


def _field(text: str, m: MetricSpec, what: str):
    comps = [c for c in text.split(",")]
    if len(comps) != m.dim:
        raise UsageError(f"{what} needs {m.dim} comma-separated components (u, v, x1..)")
    return [parse(c, m.vs) for c in comps]


def cmd_screen(args) -> int:
    m = load_metric(args.metric, args.param)
    Z, S = standard_screen(m)
    if args.z:
        Z = _field(args.z, m, "--z")
    for i in range(min(m.n, 9)):
        given = getattr(args, f"s{i + 1}", None)
        if given:
            S[i] = _field(given, m, f"--s{i + 1}")
    rng = np.random.default_rng(_seed(args))
    pts = sample_points(m.vs, args.points, rng)
    diag = screen_diagnostics(m, Z, S, pts)
    out = {"Z": [to_text(e) for e in Z], "S": [[to_text(e) for e in s] for s in S],
           "points": args.points, **diag}
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_normalize(args) -> int:
    m = load_metric(args.metric, args.param)
    if not m.is_ppwave:
        raise PreconditionError("normalize needs a pp-wave metric")
    span = _span(args.u_span)
    d = decompose(m.H, m.vs)
    res = normalize_plane_wave(d, span, NormalizeOpts(seed=_seed(args)))
    n = m.n
    csv_name = None
    if args.csv:
        header = ["u", *(f"beta{i + 1}" for i in range(n)), *(f"dbeta{i + 1}" for i in range(n)), "gamma"]
        _write_csv(args.csv, header, (np.concatenate([[u], b, db, [g]]) for u, b, db, g in
                                      zip(res.u, res.beta, res.dbeta, res.gamma)))
        csv_name = os.path.basename(args.csv)
    out = {"a": [[to_text(e) for e in row] for row in d.a],
           "b": [to_text(e) for e in d.b], "c": to_text(d.c),
           "H_normalized": to_text(res.H_normalized),
           "u_span": list(span),
           "beta": csv_name, "gamma": csv_name,
           "beta_end": [res.beta[0].tolist(), res.beta[-1].tolist()],
           "gamma_end": [float(res.gamma[0]), float(res.gamma[-1])],
           "residuals": res.residuals}
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_catalog(args) -> int:
    if args.action == "list":
        entries = [{"name": e.name, "summary": e.summary, "provenance": e.provenance}
                   for e in catalog.list_entries()]
        _emit(dumps({"entries": entries}), args.out)
        return EXIT_OK
    if not args.name:
        raise UsageError("catalog show needs NAME")
    try:
        entry = catalog.get(args.name, **_params(args.param))
    except catalog.UnknownEntryError as exc:
        raise UsageError(str(exc.args[0])) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(dumps(entry.to_json()), args.out)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppwave", description="Brinkmann-metric toolkit: classify, integrate, transport.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, metric=True):
        if metric:
            sp.add_argument("--metric", required=True, help="catalog:NAME or path to a metric file")
            sp.add_argument("--param", action="append", help="catalog parameter key=value (repeatable)")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--seed", type=int, default=0)

    def integ(sp):
        sp.add_argument("--rtol", type=float, default=1e-9)
        sp.add_argument("--atol", type=float, default=1e-12)
        sp.add_argument("--max-steps", type=int, default=200_000)
        sp.add_argument("--blowup-norm", type=float, default=1e8)
        sp.add_argument("--stride", type=int, default=1, help="keep every k-th sample in the CSV")

    sp = sub.add_parser("classify", help="classification report")
    common(sp)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("curvature", help="curvature components at a point")
    common(sp)
    sp.add_argument("--at", required=True, help="e.g. u=0,x1=0.5")
    sp.add_argument("--method", choices=("auto", "fast", "generic"), default="auto")
    sp.add_argument("--tol", type=float, default=0.0)
    sp.set_defaults(func=cmd_curvature)

    sp = sub.add_parser("geodesic", help="integrate the full geodesic equation")
    common(sp)
    integ(sp)
    sp.add_argument("--pos", required=True)
    sp.add_argument("--vel", required=True)
    sp.add_argument("--span", required=True, help="a:b containing 0")
    sp.add_argument("--method", choices=("auto", "fast", "generic"), default="auto")
    sp.set_defaults(func=cmd_geodesic)

    sp = sub.add_parser("reduced", help="integrate the transverse reduced equation")
    common(sp)
    integ(sp)
    sp.add_argument("--x0", required=True)
    sp.add_argument("--dx0", required=True)
    sp.add_argument("--span", required=True)
    sp.add_argument("--u0", type=float, default=0.0)
    sp.set_defaults(func=cmd_reduced)

    sp = sub.add_parser("complete", help="seeded grid of geodesics plus certificate")
    common(sp)
    integ(sp)
    sp.add_argument("--budget", type=float, required=True)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--jobs", type=int, default=0, help="worker processes (0: all cores)")
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("holonomy", help="loop holonomy")
    common(sp)
    sp.add_argument("--loop")
    sp.add_argument("--loop-file")
    sp.add_argument("--at", help="base point, e.g. u=0,x1=0.2")
    sp.add_argument("--method", choices=("auto", "fast", "generic"), default="auto")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.set_defaults(func=cmd_holonomy)

    sp = sub.add_parser("screen", help="screen distribution diagnostics")
    common(sp)
    sp.add_argument("--z", help="components of Z in (u, v, x) order, comma-separated")
    for i in range(1, 10):
        sp.add_argument(f"--s{i}", help=argparse.SUPPRESS if i > 3 else f"components of S_{i}")
    sp.add_argument("--points", type=int, default=50)
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("normalize", help="plane-wave normal form")
    common(sp)
    sp.add_argument("--u-span", required=True)
    sp.add_argument("--csv", help="write sampled beta, beta' and gamma here")
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("catalog", help="list or show built-in metrics")
    sp.add_argument("action", choices=("list", "show"))
    sp.add_argument("name", nargs="?")
    sp.add_argument("--param", action="append")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_catalog)
    return p


def _fail(code: int, error: str, detail: str) -> int:
    sys.stderr.write(dumps({"error": error, "detail": detail}))
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (ParseError, MetricFileError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except PreconditionError as exc:
        return _fail(EXIT_PRECONDITION, "precondition", str(exc))
    except (SingularMetricError, NumericFailure, DomainError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (OSError, ValueError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":
    sys.exit(main())
