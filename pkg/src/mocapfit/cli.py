"""Command line interface: ``mocapfit gen|fit|eval|gradcheck|bench-visibility``.

Exit status is 0 on success, 1 when an input fails validation (or a check
fails), and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io
from .autodiff import LossWeights, ParamLayout, Problem, evaluate, gradcheck_point, unpack
from .camera import ImageGeometry
from .errors import MocapFitError
from .mesh import default_model

BLOCKS = ("shape", "pose", "euler", "translation", "focal")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _warn_duplicates(argv):
    seen = {}
    for i, tok in enumerate(argv):
        if not tok.startswith("--") or tok == "--":
            continue
        key, _, inline = tok.partition("=")
        value = inline if inline else (argv[i + 1] if i + 1 < len(argv) else "")
        if key in seen and seen[key] != value:
            warnings.warn(f"{key} given more than once; the last occurrence ({value!r}) wins", stacklevel=2)
        seen[key] = value


def _load_model(path):
    return default_model() if path is None else io.read_model(path)


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    return w, h


# -- gen ------------------------------------------------------------------------------

def cmd_gen(args):
    from .scenegen import sample_scene

    flags = [("seed", str(args.seed)), ("frames", str(args.frames))]
    if args.size is not None:
        flags += [("width", str(args.size[0])), ("height", str(args.size[1]))]
    if args.noise_kpt is not None:
        flags.append(("noise_kpt", str(args.noise_kpt)))
    if args.mask_ops is not None:
        flags.append(("mask_ops", str(args.mask_ops)))
    spec = io.load_config(flags, args.config, kind="scene")
    model = _load_model(args.model)
    scene = sample_scene(model, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cams = tuple(cam for _, cam in scene.frames)
    sf = io.scene_file_for(scene.obs, "scene", cams, scene.layout, scene.params)
    io.write_scene(out / "scene.txt", sf)
    io.write_params(out / "truth.txt", scene.layout, scene.params)
    (out / "scene_config.txt").write_text(io.format_config(spec))
    print(f"wrote {out / 'scene.txt'} ({len(scene.obs.frames)} frame(s), {spec.width}x{spec.height})")
    return 0


# -- fit ------------------------------------------------------------------------------

def _fit_flags(args):
    pairs = [("seed", str(args.seed))]
    for key in ("losses", "lr", "iters", "precondition", "damping", "refresh"):
        value = getattr(args, key)
        if value is not None:
            pairs.append((key, str(value)))
    return pairs


def cmd_fit(args):
    from .fitting import fit_direct, initial_params, random_init

    model = _load_model(args.model)
    scene = io.read_scene(args.scene)
    obs = scene.obs
    cfg = io.load_config(_fit_flags(args), args.config, kind="fit")
    layout = ParamLayout.for_model(model, len(obs.frames))
    truth = scene.truth if scene.truth is not None and scene.truth_layout == layout else None
    rng = np.random.default_rng(cfg.seed)
    if args.init == "random":
        init = random_init(model, layout, obs.geom, rng)
    elif args.init == "truth":
        if truth is None:
            raise MocapFitError("--init truth needs a truth block in the scene file")
        init = truth.copy()
    else:
        file_layout, init = io.read_params(args.init)
        if file_layout != layout:
            raise MocapFitError(f"initial parameters have layout {file_layout}, model and scene need {layout}")

    if args.mode == "direct":
        report = fit_direct(model, obs, init, cfg, truth=truth)
    else:
        report = _fit_regressor(model, obs, cfg, truth, args)
    text = io.format_report(report, layout, io.format_config(cfg))
    if args.out:
        Path(args.out).write_text(text)
    final = report.metrics[-1][1] if report.metrics else None
    msg = f"{report.stopped} after {len(report.losses) - 1} iterations, loss {report.final_loss:.6g}"
    if final:
        msg += f", surface {final['surface']:.3f} mm"
    print(msg)
    return 0


def _fit_regressor(model, obs, cfg, truth, args):
    """Pretrain on synthetic scenes, then finetune on this scene alone."""
    from .fitting import (FinetuneConfig, FitReport, pretrain_regressor, scene_metrics,
                          selfsup_finetune)
    from .scenegen import SceneSpec
    from .experiments import synthetic_dataset

    t0 = time.perf_counter()
    spec = SceneSpec(width=obs.geom.width, height=obs.geom.height, frames=len(obs.frames))
    feats, targets, _ = synthetic_dataset(model, spec, args.train_scenes, seed0=10_000 + cfg.seed)
    reg, _ = pretrain_regressor(feats, targets)
    fcfg = FinetuneConfig(lr=cfg.lr, steps=cfg.iters, weights=cfg.weights, precondition=cfg.precondition)
    reg, history = selfsup_finetune(reg, model, [obs], fcfg)
    from .fitting import observation_features
    p = reg.predict(observation_features(obs)[None])[0]
    layout = ParamLayout.for_model(model, len(obs.frames))
    metrics = [(len(history) - 1, scene_metrics(model, layout, p, truth))] if truth is not None else []
    return FitReport(p, history, metrics, time.perf_counter() - t0, "budget", cfg.as_dict())


# -- eval -----------------------------------------------------------------------------

def cmd_eval(args):
    from .fitting import scene_metrics

    model = _load_model(args.model)
    la, pa = io.read_params(args.pred)
    lb, pb = io.read_params(args.truth)
    if la != lb:
        raise MocapFitError(f"layouts differ: {la} vs {lb}")
    if la.n_shape != model.n_shape or la.n_joints != model.joint_count:
        raise MocapFitError("parameter layout does not match the model")
    m = scene_metrics(model, la, pa, pb)
    text = "".join(f"{k}_mm {io.fmt(m[k])}\n" for k in ("surface", "per_joint", "reconstruction"))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# -- gradcheck ------------------------------------------------------------------------

def cmd_gradcheck(args):
    from .experiments import gradcheck_scene

    model = _load_model(args.model)
    weights = LossWeights.from_names(args.losses)
    tol = args.tolerance if args.tolerance is not None else (1e-5 if args.losses == "kpt" else 1e-4)
    worst = {b: 0.0 for b in BLOCKS}
    resampled = 0
    for trial in range(args.trials):
        errs, n_resampled = gradcheck_scene(model, weights, args.seed, trial)
        resampled += n_resampled
        for name, err in errs.items():
            b = name.split("[")[0]
            worst[b] = max(worst[b], err)
    ok = all(v < tol for v in worst.values())
    lines = [f"{b:11s} worst relative error {worst[b]:.3e}" for b in BLOCKS]
    lines.append(f"resampled draws {resampled}")
    lines.append(f"{'PASS' if ok else 'FAIL'} (tolerance {tol:g}, {args.trials} trials, losses {args.losses})")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0 if ok else 1


# -- bench-visibility -----------------------------------------------------------------

def cmd_bench_visibility(args):
    from .experiments import random_closed_mesh
    from .visibility import facet_visibility, facet_visibility_accelerated

    rng = np.random.default_rng(args.seed)
    rows = []
    ok = True
    for trial in range(args.trials):
        V, F = random_closed_mesh(rng, args.facets)
        t0 = time.perf_counter()
        a = facet_visibility(V, F)
        t1 = time.perf_counter()
        b = facet_visibility_accelerated(V, F)
        t2 = time.perf_counter()
        same = bool(np.array_equal(a, b))
        ok &= same
        rows.append(f"{trial} {len(F)} {int(a.sum())} {t1 - t0:.6f} {t2 - t1:.6f} {'identical' if same else 'MISMATCH'}")
    text = "trial facets visible brute_s grid_s result\n" + "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0 if ok else 1


# -- entry point ----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mocapfit", description="Fit a blendshape body model to 2D keypoints, masks and flow.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic scene")
    g.add_argument("--model", help="model file (default: built-in desk-scale model)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, choices=(1, 2), default=2)
    g.add_argument("--size", type=_size, help="WxH, e.g. 128x128")
    g.add_argument("--noise-kpt", type=float, help="keypoint noise sigma in pixels")
    g.add_argument("--mask-ops", type=int, help="dilation rounds (>0) or erosion rounds (<0)")
    g.add_argument("--config", help="key = value file with scene settings")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit parameters to a scene")
    f.add_argument("--scene", required=True)
    f.add_argument("--model")
    f.add_argument("--mode", choices=("direct", "regressor"), default="direct")
    f.add_argument("--init", default="random", help="random, truth, or a parameter file")
    f.add_argument("--losses", help="comma list from kpt,motion,seg")
    f.add_argument("--lr", type=float)
    f.add_argument("--iters", type=int)
    f.add_argument("--precondition", choices=("none", "diagonal", "gauss_newton"))
    f.add_argument("--damping", type=float, help="relative diagonal damping of the Gauss-Newton matrix")
    f.add_argument("--refresh", type=int)
    f.add_argument("--train-scenes", type=int, default=200, help="pretraining scenes in regressor mode")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--config", help="key = value file with fit settings")
    f.add_argument("--out", help="report file")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="metrics between two parameter files")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--model")
    e.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=10)
    c.add_argument("--losses", default="kpt,motion,seg")
    c.add_argument("--tolerance", type=float)
    c.add_argument("--model")
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench-visibility", help="brute-force vs grid visibility timing and equality")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--facets", type=int, default=2000)
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_visibility)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _warn_duplicates(argv)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (MocapFitError, ValueError, OSError) as exc:
        print(f"mocapfit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
