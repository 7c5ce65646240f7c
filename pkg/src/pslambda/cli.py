"""Command-line front end.

``pslambda <command> --config FILE`` runs one experiment and writes its
artifacts to the output directory. Every failure is reported as a JSON
object on stderr (and in ``error.json``) with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, build_controls, build_extension, build_map, build_system, load_config)
from .errors import ConfigError, PSVFError
from .io import jsonable, write_json, write_rows

__all__ = ["main", "build_parser", "run", "COMMANDS", "EXIT_CONFIG", "EXIT_HYPOTHESIS", "EXIT_INTERNAL"]

log = logging.getLogger("pslambda")

COMMANDS = ("simulate", "poincare", "manifold", "intersect", "lambda-verify", "conjugacy", "lambda-set")
EXIT_CONFIG = 2
EXIT_HYPOTHESIS = 3
EXIT_INTERNAL = 4

ENV_OUT = "PSLAMBDA_OUT"
ENV_THREADS = "PSLAMBDA_THREADS"


class Context:
    """Resolved run options plus the list of files written."""

    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int, seed: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.seed = seed
        self.artifacts: list[str] = []

    def path(self, name: str, tag: str = "") -> Path:
        prefix = self.cfg.output.prefix
        return self.out / f"{prefix}{tag}{name}"

    def json(self, name: str, obj, tag: str = "") -> None:
        self.artifacts.append(write_json(self.path(name, tag), obj).name)

    def rows(self, name: str, header, rows, tag: str = "") -> None:
        self.artifacts.append(write_rows(self.path(name, tag), header, rows).name)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _tags(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    eps = cfg.epsilons
    if len(eps) == 1:
        return [("", eps[0])]
    return [(f"eps{j}_", e) for j, e in enumerate(eps)]


def _section_map(cfg, eps, phase, controls):
    from .poincare import PoincareMap
    return PoincareMap(build_extension(cfg, eps), phase, controls)


# -- commands -------------------------------------------------------------

def _simulate(ctx: Context) -> dict:
    from .flow import solve
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    summary = {}
    for tag, eps in _tags(cfg):
        system = build_extension(cfg, eps).system if cfg.extension is not None else build_system(cfg.system)
        if len(xp.x0) != system.dim:
            raise ConfigError(f"x0 has {len(xp.x0)} entries, system dimension is {system.dim}",
                              errors=[{"path": "experiment.x0", "key": "x0", "message": "wrong dimension"}])
        traj = solve(system, xp.x0, xp.t0, xp.duration, controls)
        rows = [[t] + list(x) + [k] for t, x, k in traj.sample(xp.points_per_arc)]
        ctx.rows("trajectory.csv", ["t"] + [f"x{j}" for j in range(system.dim)] + ["arc"], rows, tag)
        ctx.json("events.json", traj.event_log(), tag)
        summary[tag or "run"] = {"epsilon": eps, "status": traj.status.value, "x_end": traj.x_end,
                                 "events": traj.n_events}
        if not traj.completed:
            traj.require_completed()
    return summary


def _poincare(ctx: Context) -> dict:
    from .poincare import find_fixed_point
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    summary = {}
    for tag, eps in _tags(cfg):
        P = _section_map(cfg, eps, xp.phase, controls)
        sd = find_fixed_point(P, xp.guess, tol=xp.newton_tol)
        ctx.json("saddle.json", {"epsilon": eps, "phase": xp.phase, **sd.to_dict()}, tag)
        if xp.orbit_of and xp.iterates:
            rows = []
            for i, x in enumerate(xp.orbit_of):
                for n, y in enumerate(P.orbit(x, xp.iterates)):
                    rows.append([i, n] + list(y))
            ctx.rows("orbits.csv", ["orbit", "n"] + [f"x{j}" for j in range(P.dim)], rows, tag)
        summary[tag or "run"] = {"epsilon": eps, "point": sd.point, "multipliers": sd.to_dict()["eigenvalues"]}
    return summary


def _manifold(ctx: Context) -> dict:
    from .manifolds import continue_manifold, start_atlas
    from .poincare import find_fixed_point
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    summary = {}
    for tag, eps in _tags(cfg):
        P = _section_map(cfg, eps, xp.phase, controls)
        sd = find_fixed_point(P, xp.guess, tol=xp.newton_tol)
        atlas = start_atlas(P, sd, xp.branch, xp.radius, xp.side)
        continue_manifold(atlas, xp.steps, h_max=xp.h_max, angle_max=xp.angle_max)
        ctx.artifacts.append(ctx.path(f"atlas_{xp.branch}.csv", tag).name)
        ctx.out.mkdir(parents=True, exist_ok=True)
        atlas.write_csv(ctx.path(f"atlas_{xp.branch}.csv", tag), P.surfaces)
        info = {"epsilon": eps, "branch": xp.branch, "side": xp.side, "curves": len(atlas.curves()),
                "nodes": [len(c) for c in atlas.curves()], "truncated": atlas.truncated,
                "truncation": atlas.truncation, "saddle": sd.to_dict()}
        ctx.json("manifold.json", info, tag)
        summary[tag or "run"] = {k: info[k] for k in ("epsilon", "curves", "truncated")}
    return summary


def _intersect(ctx: Context) -> dict:
    from .manifolds import continue_manifold, find_transversal_intersection, start_atlas
    from .poincare import find_fixed_point
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    summary = {}
    for tag, eps in _tags(cfg):
        P = _section_map(cfg, eps, xp.phase, controls)
        sd = find_fixed_point(P, xp.guess, tol=xp.newton_tol)
        wu = start_atlas(P, sd, "unstable", xp.radius, xp.side)
        continue_manifold(wu, xp.unstable_steps)
        ws = start_atlas(P, sd, "stable", xp.radius, xp.side)
        continue_manifold(ws, xp.stable_steps)
        acc, rej = find_transversal_intersection(wu, ws, clearance=xp.clearance,
                                                 angle_threshold=xp.angle_threshold, return_rejected=True)
        ctx.json("intersections.json", {"epsilon": eps, "saddle": sd.to_dict(),
                                        "intersections": [h.to_dict() for h in acc],
                                        "rejected": [h.to_dict() for h in rej]}, tag)
        summary[tag or "run"] = {"epsilon": eps, "intersections": len(acc), "rejected": len(rej)}
    return summary


def _targets(xp, setup):
    from .experiments import window
    from .manifolds import segment_disk
    out = []
    for t in xp.targets:
        if hasattr(t, "curve"):
            if setup is None:
                raise ConfigError("window targets need an unstable atlas (Poincare map with homoclinic setup)")
            curves = setup.unstable.curves()
            if t.curve >= len(curves):
                raise ConfigError(f"target curve {t.curve} not computed (atlas has {len(curves)} curves)")
            out.append(window(curves[t.curve], t.axis, t.lo, t.hi))
        else:
            out.append(segment_disk(t.center, t.direction, t.radius, t.nodes))
    return out


def _lambda_verify(ctx: Context) -> dict:
    from .experiments import homoclinic_setup, parallel_map, stable_traces
    from .lemma import Box, lambda_experiment, measure_constants
    from .manifolds import adapted_coordinates, segment_disk, straightened_chart
    from .poincare import find_fixed_point
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    box_V, box_V1 = Box.symmetric(*xp.box_V), Box.symmetric(*xp.box_V1)
    summary = {}
    for tag, eps in _tags(cfg) if cfg.map is None else [("", 0.0)]:
        P = build_map(cfg.map) if cfg.map is not None else _section_map(cfg, eps, xp.phase, controls)
        sd = find_fixed_point(P, xp.guess, tol=xp.newton_tol)
        chart = adapted_coordinates(sd) if cfg.map is not None else straightened_chart(P, sd, xp.chart_radius)
        constants = measure_constants(P, chart, sd, box_V, box_V1, samples=xp.samples, eta=xp.eta)
        constants.require_feasible()
        reports = stable_traces(P, sd, chart, constants, xp.traces, xp.iterates, ctx.rng(),
                                threads=ctx.threads)
        failures = sum(len(r.failures()) for r in reports)
        ctx.json("bounds.json", {"epsilon": eps, "constants": constants.to_dict(), "traces": len(reports),
                                 "checks": sum(len(r.checks) for r in reports), "failures": failures,
                                 "reports": [r.to_dict() for r in reports]}, tag)
        info = {"epsilon": eps, "feasible": constants.feasible, "traces": len(reports), "failures": failures}
        conv = xp.convergence
        if conv is not None:
            setup = None
            if conv.delta is None:
                if cfg.map is not None:
                    raise ConfigError("a synthetic map needs an explicit 'delta' segment",
                                      errors=[{"path": "experiment.convergence.delta", "key": "delta",
                                               "message": "required for synthetic maps"}])
                setup = homoclinic_setup(P, sd, box_V, box_V1, atlas_radius=conv.radius, side=conv.side,
                                         unstable_steps=conv.unstable_steps, stable_steps=conv.stable_steps,
                                         clearance=conv.clearance, angle_threshold=conv.angle_threshold,
                                         q_guess=conv.q_guess, chart=chart, constants=constants)
                delta = setup.delta
            else:
                d = conv.delta
                delta = segment_disk(d.center, d.direction, d.radius, d.nodes)
            targets = _targets(conv, setup)

            def one(D):
                return lambda_experiment(P, sd, chart, delta, D, conv.schedule, box_V, eta=xp.eta,
                                         constants=constants, m=conv.m, clearance=conv.clearance,
                                         angle_threshold=conv.angle_threshold)

            tables = parallel_map(one, targets, ctx.threads)
            rows = []
            for j, tab in enumerate(tables):
                ctx.artifacts.append(ctx.path(f"convergence_{j}.csv", tag).name)
                tab.write_csv(ctx.path(f"convergence_{j}.csv", tag))
                d = tab.to_dict()
                d.update({"target": j, "first_below_c0": tab.first_below("c0"),
                          "first_below_c1": tab.first_below("c1"), "monotone_c1": tab.monotone_past(),
                          "monotone_c0": tab.monotone_past(column="c0")})
                rows.append(d)
            ctx.json("convergence.json", {"epsilon": eps, "tables": rows}, tag)
            info["convergence"] = [{k: r[k] for k in ("target", "first_below_c0", "first_below_c1", "n2",
                                                      "target_meets_sigma")} for r in rows]
        summary[tag or "run"] = info
        if failures:
            raise PSVFError(f"{failures} bound checks failed", hypothesis="bound chain at measured constants",
                            failures=failures)
    return summary


def _conjugacy(ctx: Context) -> dict:
    from .experiments import parallel_map
    from .poincare import conjugacy_residual
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    lo, hi = np.asarray(xp.box[0], dtype=float), np.asarray(xp.box[1], dtype=float)
    samples = ctx.rng().uniform(lo, hi, size=(xp.samples, lo.size))
    jobs = [(eps, t1, t2) for eps in cfg.epsilons for t1, t2 in xp.pairs]

    def one(job):
        eps, t1, t2 = job
        r = conjugacy_residual(build_extension(cfg, eps), t1, t2, samples, controls)
        return {"epsilon": eps, "t1": t1, "t2": t2, **r.to_dict()}

    results = parallel_map(one, jobs, ctx.threads)
    worst = max((r["max_residual"] for r in results), default=float("nan"))
    ctx.json("conjugacy.json", {"samples": samples, "results": results, "max_residual": worst})
    return {"max_residual": worst, "pairs": len(results)}


def _lambda_set(ctx: Context) -> dict:
    from .flow import flow_map
    from .lemma import lambda_set_depth
    from .poincare import PoincareMap
    cfg, xp = ctx.cfg, ctx.cfg.experiment
    controls = build_controls(cfg.controls)
    summary = {}
    for tag, eps in _tags(cfg) if cfg.map is None else [("", 0.0)]:
        if cfg.map is not None:
            F = build_map(cfg.map)
            surfaces = F.surfaces
        elif cfg.extension is not None:
            F = PoincareMap(build_extension(cfg, eps), xp.phase, controls)
            surfaces = F.surfaces
        else:
            system = build_system(cfg.system)
            surfaces = system.surfaces

            def F(x, system=system):
                return flow_map(system, x, 0.0, xp.duration, controls)
        L = lambda_set_depth(F, surfaces, xp.depth, xp.box, xp.resolution, xp.tol)
        ctx.artifacts.append(ctx.path("lambda_set.csv", tag).name)
        ctx.out.mkdir(parents=True, exist_ok=True)
        L.write_csv(ctx.path("lambda_set.csv", tag))
        counts = [int(L.mask(n).sum()) for n in range(xp.depth + 1)]
        ctx.json("lambda_set.json", {"epsilon": eps, "depth": xp.depth, "box": xp.box,
                                     "resolution": xp.resolution, "marked_per_depth": counts,
                                     "flagged": int(L.flagged.sum())}, tag)
        summary[tag or "run"] = {"epsilon": eps, "marked": counts[-1], "flagged": int(L.flagged.sum())}
    return summary


HANDLERS = {
    "simulate": _simulate,
    "poincare": _poincare,
    "manifold": _manifold,
    "intersect": _intersect,
    "lambda-verify": _lambda_verify,
    "conjugacy": _conjugacy,
    "lambda-set": _lambda_set,
}


def run(cfg: ExperimentConfig, out: Path, threads: int = 1, seed: int = 0) -> dict:
    """Execute the configured experiment; raises :class:`PSVFError` on failure."""
    ctx = Context(cfg, Path(out), threads, seed)
    ctx.out.mkdir(parents=True, exist_ok=True)
    summary = HANDLERS[cfg.experiment.kind](ctx)
    manifest = {"experiment": cfg.experiment.kind, "seed": seed, "artifacts": sorted(ctx.artifacts),
                "summary": summary}
    write_json(ctx.path("run.json"), manifest)
    return manifest


# -- entry point ------------------------------------------------------------

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (.json or .toml)")
    common.add_argument("--out", help=f"output directory (env {ENV_OUT}; default from config)")
    common.add_argument("--threads", type=_positive,
                        help=f"worker threads (env {ENV_THREADS}; default: available cores)")
    common.add_argument("--seed", type=_u64, default=0, help="RNG seed for sampled inputs (u64)")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    parser = argparse.ArgumentParser(prog="pslambda",
                                     description="Piecewise smooth flows, Poincare maps and inclination experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run a {name} experiment")
    return parser


def _resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            v = int(env)
        except ValueError:
            raise ConfigError(f"{ENV_THREADS}={env!r} is not an integer",
                              errors=[{"path": f"env.{ENV_THREADS}", "key": ENV_THREADS,
                                       "message": "not an integer"}]) from None
        if v < 1:
            raise ConfigError(f"{ENV_THREADS} must be >= 1",
                              errors=[{"path": f"env.{ENV_THREADS}", "key": ENV_THREADS, "message": "must be >= 1"}])
        return v
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _report(exc: PSVFError, command: str | None) -> dict:
    rep = exc.report()
    rep["command"] = command
    return jsonable(rep)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or os.environ.get(ENV_OUT)
    out = Path(out) if out else None
    try:
        cfg = load_config(args.config)
        if cfg.experiment.kind != args.command:
            raise ConfigError(f"config describes a {cfg.experiment.kind} experiment, not {args.command}",
                              errors=[{"path": "experiment.kind", "key": "kind",
                                       "message": f"expected {args.command!r}"}])
        out = Path(args.out or os.environ.get(ENV_OUT) or cfg.output.dir)
        threads = _resolve_threads(args.threads)
        log.info("running %s -> %s (threads=%d, seed=%d)", args.command, out, threads, args.seed)
        manifest = run(cfg, out, threads, args.seed)
    except PSVFError as exc:
        rep = _report(exc, args.command)
        print(json.dumps(rep, sort_keys=True), file=sys.stderr)
        if out is not None:
            write_json(out / "error.json", rep)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_HYPOTHESIS
    except Exception as exc:  # noqa: BLE001 - last-resort structured report
        rep = {"error": "internal", "message": f"{type(exc).__name__}: {exc}", "hypothesis": "none",
               "command": args.command}
        print(json.dumps(rep, sort_keys=True), file=sys.stderr)
        if out is not None:
            write_json(out / "error.json", rep)
        return EXIT_INTERNAL
    print(json.dumps(jsonable(manifest["summary"]), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
