"""Command-line pipeline: fixtures -> measure -> transform -> apply / eval / render.

Every subcommand reads and writes files, prints JSON diagnostics on stdout
and progress on stderr. Exit codes: 0 success, 2 bad input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures as fx
from .cartogram import (
    DiffusionParams,
    TransformField,
    cell_density_after,
    floored_density,
    solve_transform,
    transformed_cell_areas,
    weighted_cv,
)
from .errors import InputError, OutOfDomainError, SolverError
from .evaluation import equalization_report, fit_classifier_field
from .formats import _atomic_write, load_embeddings, load_field, save_embeddings, save_field
from .geometry import LatentPath, distance_field, inverse_transform_embeddings, pseudo_geodesic, transform_embeddings
from .grid import GridSpec, MeaningField, MeasureField, build_grid
from .measures import gaussian_blur, heuristic_measure, relax_to_mean, riemannian_measure
from .render import LAYERS, RenderSpec, render_scene


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _load(path, cls, what: str):
    fld = load_field(path)
    if not isinstance(fld, cls):
        raise InputError(f"{path}: expected a {what} field file")
    return fld


def _threads(args):
    return args.threads if args.threads and args.threads > 0 else os.cpu_count() or 1


# fixtures ----------------------------------------------------------------------


def cmd_fixtures(args) -> int:
    if args.fixture == "analytic":
        spec = GridSpec.from_bounds((args.bounds[:2], args.bounds[2:]), args.grid)
        H = fx.make_analytic_meaning(args.name, spec)
        save_field(args.output, H)
        _emit({"kind": "meaning", "name": args.name, "shape": list(H.values.shape)})
    elif args.fixture == "mixture":
        E, m, spec = fx.make_distorted_mixture(
            args.n_per_class, args.classes, args.squash, args.seed, grid_n=args.grid, pad_fraction=args.pad
        )
        save_embeddings(args.embeddings, E)
        save_field(args.measure, m)
        _emit({"points": len(E), "classes": args.classes, "bounds": [list(b) for b in spec.bounds]})
    else:
        spec = GridSpec.from_bounds((args.bounds[:2], args.bounds[2:]), args.grid)
        m = fx.make_peaked_bump(spec, args.peak, args.sigma_frac)
        save_field(args.output, m)
        _emit({"kind": "measure", "shape": list(m.values.shape), "peak_to_mean": float(m.values.max() / m.values.mean())})
    return 0


# measure -----------------------------------------------------------------------


def cmd_measure(args) -> int:
    H = _load(args.meaning, MeaningField, "meaning")
    if args.kind == "riemannian":
        m = riemannian_measure(H)
    else:
        m = heuristic_measure(H, args.kind)
    if args.blur is not None:
        m = gaussian_blur(m, args.blur)
    if args.relax is not None:
        if not args.embeddings:
            raise InputError("--relax needs --embeddings")
        m = relax_to_mean(m, load_embeddings(args.embeddings), args.relax)
    elif args.embeddings:
        raise InputError("--embeddings is only used together with --relax")
    save_field(args.output, m)
    v = m.values
    _emit({"kind": args.kind, "min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())})
    return 0


# transform ---------------------------------------------------------------------


def cmd_transform(args) -> int:
    m = _load(args.measure, MeasureField, "measure")
    params = DiffusionParams(
        pad_factor=args.pad,
        density_floor_rel=args.floor,
        convergence_tol=args.tol,
        max_time_factor=args.max_time,
        rk_safety=args.safety,
        max_step_displacement=args.max_step,
    )
    T = solve_transform(m, params, workers=_threads(args))
    save_field(args.output, T)
    areas = transformed_cell_areas(T)
    cv_before = weighted_cv(floored_density(m, params.density_floor_rel))
    cv_after = weighted_cv(cell_density_after(m, T, params.density_floor_rel).values, areas)
    diag = dict(T.diagnostics)
    diag.update(
        cv_before=cv_before,
        cv_after=cv_after,
        cv_reduction=(cv_before / cv_after) if cv_after > 0 else None,
        area_ratio=float(areas.sum() / (m.spec.cell_area * m.spec.n_1 * m.spec.n_2)),
    )
    _emit(diag)
    return 0


# apply / geodesic ------------------------------------------------------------


def cmd_apply(args) -> int:
    T = _load(args.transform, TransformField, "transform")
    E = load_embeddings(args.embeddings)
    try:
        out = inverse_transform_embeddings(T, E) if args.inverse else transform_embeddings(T, E)
    except OutOfDomainError as exc:
        # data row k sits on CSV line k + 2
        lines = ", ".join(str(int(i) + 2) for i in exc.indices[:10])
        raise OutOfDomainError(f"{args.embeddings}: {exc} (CSV lines {lines})", indices=exc.indices) from None
    save_embeddings(args.output, out)
    _emit({"points": len(out), "direction": "inverse" if args.inverse else "forward"})
    return 0


def _write_path_csv(path: LatentPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["z1", "z2", "t1", "t2"])
    for (a, b), (c, d) in zip(path.points, path.images):
        w.writerow([repr(float(a)), repr(float(b)), repr(float(c)), repr(float(d))])
    return buf.getvalue()


def cmd_geodesic(args) -> int:
    T = _load(args.transform, TransformField, "transform")
    path = pseudo_geodesic(T, args.from_, args.to, args.points)
    _atomic_write(args.output, _write_path_csv(path).encode("utf-8"))
    _emit({"points": len(path.points), "length": path.length})
    return 0


def _read_path_csv(name) -> LatentPath:
    """Points of a path CSV (columns ``z1,z2`` first); images are not needed to draw it."""
    rows = list(csv.reader(io.StringIO(Path(name).read_text(encoding="utf-8"))))
    if not rows or [h.strip() for h in rows[0][:2]] != ["z1", "z2"]:
        raise InputError(f"{name}: path CSV must start with columns z1,z2")
    try:
        pts = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=np.float64)
    except (ValueError, IndexError):
        raise InputError(f"{name}: unparseable path point") from None
    if len(pts) < 2 or not np.all(np.isfinite(pts)):
        raise InputError(f"{name}: a path needs at least two finite points")
    return LatentPath(pts, pts, float(np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1)).sum()))


# eval --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    m = _load(args.measure, MeasureField, "measure")
    T = _load(args.transform, TransformField, "transform")
    report = equalization_report(
        m,
        T,
        load_embeddings(args.before),
        load_embeddings(args.after),
        bins=args.bins,
        seed=args.seed,
        restarts=args.restarts,
        k=args.k,
    )
    _emit(report.to_dict())
    return 0


# render ------------------------------------------------------------------------


def _floats(text: str, name: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"{name} must be a comma-separated list of numbers, got {text!r}") from None


def cmd_render(args) -> int:
    measure = _load(args.measure, MeasureField, "measure") if args.measure else None
    E = load_embeddings(args.embeddings) if args.embeddings else None
    paths = [_read_path_csv(p) for p in args.path or ()]
    dist = None
    if args.dist:
        dist = _load(args.dist, MeasureField, "distance")
    elif args.transform:
        if args.origin is None:
            raise InputError("--transform needs --origin to build a distance field")
        dist = distance_field(_load(args.transform, TransformField, "transform"), args.origin)
    levels = _floats(args.contours, "--contours") if args.contours else ()
    if levels and dist is None:
        raise InputError("--contours needs --dist or --transform with --origin")
    layers = tuple(args.layers.split(",")) if args.layers else LAYERS
    spec = RenderSpec(
        width=args.size[0],
        height=args.size[1],
        contrast=args.contrast,
        colormap=args.colormap,
        layers=layers,
        contour_levels=levels,
    )
    svg = render_scene(measure, E, paths, dist, spec)
    _atomic_write(args.output, svg.encode("utf-8"))
    _emit({"output": str(args.output), "bytes": len(svg.encode("utf-8"))})
    return 0


# classifier field ------------------------------------------------------------


def cmd_classifier_field(args) -> int:
    E = load_embeddings(args.embeddings)
    if not E.has_labels:
        raise InputError(f"{args.embeddings}: the classifier needs a label column")
    spec = build_grid(E, args.grid[0], args.grid[1], args.pad)
    P = fit_classifier_field(E, spec, l2_penalty=args.l2)
    save_field(args.output, P)
    _emit({"classes": list(E.classes()), "shape": list(P.values.shape)})
    return 0


# parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentcarto", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=0, help="worker cap for spectral transforms (default: all cores)")
    p.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fixtures", help="write synthetic inputs")
    fsub = f.add_subparsers(dest="fixture", required=True)
    fa = fsub.add_parser("analytic", help="closed-form meaning field")
    fa.add_argument("name", choices=fx.ANALYTIC_NAMES)
    fa.add_argument("--grid", nargs=2, type=int, default=[64, 64], metavar=("N1", "N2"))
    fa.add_argument("--bounds", nargs=4, type=float, default=[-1.0, 1.0, -1.0, 1.0], metavar=("MIN1", "MAX1", "MIN2", "MAX2"))
    fa.add_argument("-o", "--output", required=True)
    fm = fsub.add_parser("mixture", help="squashed Gaussian mixture and its true measure")
    fm.add_argument("--n-per-class", type=int, default=500)
    fm.add_argument("--classes", type=int, default=4)
    fm.add_argument("--squash", type=float, default=2.0)
    fm.add_argument("--seed", type=int, default=7)
    fm.add_argument("--grid", type=int, default=128)
    fm.add_argument("--pad", type=float, default=0.05)
    fm.add_argument("--embeddings", required=True, help="output CSV")
    fm.add_argument("--measure", required=True, help="output measure field")
    fb = fsub.add_parser("bump", help="Gaussian bump density")
    fb.add_argument("--grid", nargs=2, type=int, default=[128, 128], metavar=("N1", "N2"))
    fb.add_argument("--bounds", nargs=4, type=float, default=[-1.0, 1.0, -1.0, 1.0], metavar=("MIN1", "MAX1", "MIN2", "MAX2"))
    fb.add_argument("--peak", type=float, default=5.0, help="peak-to-mean ratio")
    fb.add_argument("--sigma-frac", type=float, default=0.1)
    fb.add_argument("-o", "--output", required=True)
    f.set_defaults(func=cmd_fixtures)

    m = sub.add_parser("measure", help="distortion measure of a meaning field")
    m.add_argument("meaning")
    m.add_argument("--kind", choices=["riemannian", "jsd", "euclidean", "cosine"], default="riemannian")
    m.add_argument("--blur", type=float, default=None, help="Gaussian blur sigma in cells")
    m.add_argument("--relax", type=float, default=None, help="relaxation sigma in latent units")
    m.add_argument("--embeddings", default=None)
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_measure)

    d = DiffusionParams()
    t = sub.add_parser("transform", help="density-equalizing transform of a measure")
    t.add_argument("measure")
    t.add_argument("--pad", type=float, default=d.pad_factor)
    t.add_argument("--tol", type=float, default=d.convergence_tol)
    t.add_argument("--floor", type=float, default=d.density_floor_rel)
    t.add_argument("--max-time", type=float, default=d.max_time_factor)
    t.add_argument("--safety", type=float, default=d.rk_safety)
    t.add_argument("--max-step", type=float, default=d.max_step_displacement)
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_transform)

    a = sub.add_parser("apply", help="map embeddings through a transform")
    a.add_argument("transform")
    a.add_argument("embeddings")
    a.add_argument("--inverse", action="store_true")
    a.add_argument("-o", "--output", required=True)
    a.set_defaults(func=cmd_apply)

    g = sub.add_parser("geodesic", help="pseudo-geodesic between two latent points")
    g.add_argument("transform")
    g.add_argument("--from", dest="from_", nargs=2, type=float, required=True, metavar=("Z1", "Z2"))
    g.add_argument("--to", nargs=2, type=float, required=True, metavar=("Z1", "Z2"))
    g.add_argument("--points", type=int, default=64)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_geodesic)

    e = sub.add_parser("eval", help="before/after statistics as JSON")
    e.add_argument("measure")
    e.add_argument("transform")
    e.add_argument("before")
    e.add_argument("after")
    e.add_argument("--bins", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--restarts", type=int, default=10)
    e.add_argument("-k", type=int, default=None, help="cluster count (default: number of labels)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="SVG figure")
    r.add_argument("--measure")
    r.add_argument("--embeddings")
    r.add_argument("--path", action="append", help="path CSV (repeatable)")
    r.add_argument("--dist", help="distance field file")
    r.add_argument("--transform", help="transform used with --origin for equidistance lines")
    r.add_argument("--origin", nargs=2, type=float, metavar=("Z1", "Z2"))
    r.add_argument("--contrast", choices=["linear", "sqrt"], default="linear")
    r.add_argument("--contours", default="", help="comma-separated distance levels")
    r.add_argument("--colormap", default="red")
    r.add_argument("--layers", default="", help=f"comma-separated subset of {','.join(LAYERS)}")
    r.add_argument("--size", nargs=2, type=int, default=[800, 800], metavar=("W", "H"))
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("classifier-field", help="class-probability meaning field from labelled embeddings")
    c.add_argument("embeddings")
    c.add_argument("--grid", nargs=2, type=int, default=[64, 64], metavar=("N1", "N2"))
    c.add_argument("--pad", type=float, default=0.05)
    c.add_argument("--l2", type=float, default=1.0)
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_classifier_field)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", force=True
    )
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, indent=2, default=str), file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
