"""Command-line entry point: ``signmimic <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__, bundled
from .config import (RunConfig, SweepSpec, apply_trial, config_hash, dump_run_config, load_run_config,
                     run_config_from_dict)
from .dynamics import PDSystem
from .env import EpisodeConfig, ImitationEnv
from .errors import (ConfigError, ContractError, IngestionError, InstabilityError, NumericalError, ParseError,
                     StructuralError)
from .motion import convert, load_clip, mirror_capture, read_capture, save_clip
from .reward import CSV_COLUMNS, PRESETS, TERMS, estimate_pose_velocity_reward, read_error_trace
from .skeleton import load_skeleton_file

log = logging.getLogger("signmimic")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CEILING_COLUMNS = ("label", "mode", "steps", "cumulative", "mean") + tuple(f"r_{t}" for t in TERMS)
ESTIMATE_COLUMNS = ("name", "k_pb", "k_ph", "k_vb", "k_vh", "estimate")
SWEEP_FIXED_COLUMNS = ("rank", "trial", "score")
EVAL_SUMMARY_COLUMNS = ("label", "steps", "cumulative", "mean") + tuple(f"r_{t}" for t in TERMS)
DEFAULT_TRACE = "bundled:traces/tuning_trace.csv"


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- shared loading ----------------------------------------------------------
def _run_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, seeds=[args.seed])
    if args.out is not None:
        config = replace(config, out=args.out)
    if getattr(args, "scale", None) is not None:
        config = replace(config, scale=args.scale)
    return config


def _load_model(path):
    try:
        return load_skeleton_file(bundled.resolve(path))
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc


def _load_clip(path):
    try:
        return load_clip(bundled.resolve(path))
    except OSError as exc:
        raise ConfigError(f"cannot read clip {path}: {exc}") from exc


def make_env(config: RunConfig, clip_path: str, seed=None, episode: EpisodeConfig | None = None) -> ImitationEnv:
    model = _load_model(config.model)
    clip = _load_clip(clip_path)
    system = PDSystem.from_model(model, config.kd_scale) if config.kd_scale else None
    return ImitationEnv(model, clip, config.reward.build(model), episode or config.episode,
                        residual=config.residual, system=system, seed=seed)


class EnvFactory:
    """Picklable environment constructor bound to one config and clip."""

    def __init__(self, config: RunConfig, clip_path: str):
        self.config = config
        self.clip_path = clip_path

    def __call__(self, seed):
        return make_env(self.config, self.clip_path, seed)


# -- convert -----------------------------------------------------------------
def cmd_convert(args) -> int:
    model = _load_model(args.model or RunConfig().model)
    try:
        capture = read_capture(args.capture, fps=args.fps)
    except OSError as exc:
        raise ConfigError(f"cannot read capture {args.capture}: {exc}") from exc
    if args.mirror:
        capture = mirror_capture(capture)
    label = args.label or Path(args.capture).stem
    clip = convert(capture, model, label=label, smooth=args.smooth)
    out = Path(args.out or ".") / f"{label}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_clip(clip, out)
    print(f"wrote {out} ({clip.n_frames} frames at {clip.rate:g} Hz)")
    return EXIT_OK


# -- train -------------------------------------------------------------------
def _clip_label(path) -> str:
    return Path(str(path)).stem


def manifest(config: RunConfig, clip_path: str, seed: int) -> dict:
    return {
        "version": __version__,
        "config_hash": config.hash(),
        "seed": int(seed),
        "clip": clip_path,
        "model_sha256": file_sha256(bundled.resolve(config.model)),
        "clip_sha256": file_sha256(bundled.resolve(clip_path)),
        "train": config.train_config(seed).to_dict(),
        "config": config.to_dict(),
    }


def run_seed(config: RunConfig, clip_path: str, seed: int, run_dir, resume: bool = True,
             stop_after: int | None = None):
    """Train one seed into ``run_dir``; returns the curve rows."""
    from .plotting import learning_curves
    from .rl.train import curve_to_csv, train

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    man = manifest(config, clip_path, seed)
    man_path = run_dir / "manifest.json"
    if man_path.exists() and resume:
        old = json.loads(man_path.read_text())
        if old.get("config_hash") != man["config_hash"]:
            raise ConfigError(f"{run_dir} holds a run with a different config; use a new --out or --no-resume")
    if not resume:
        for old in (run_dir / "checkpoints").glob("ckpt_*.npz"):
            old.unlink()
    man_path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    result = train(EnvFactory(config, clip_path), config.train_config(seed), out_dir=run_dir, resume=resume,
                   stop_after=stop_after)
    (run_dir / "curve.csv").write_text(curve_to_csv(result.curve))
    learning_curves({f"seed {seed}": result.curve}, run_dir / "curve.png")
    return result.curve


def _run_seed_job(job):
    config_doc, clip_path, seed, run_dir, resume = job
    return run_seed(run_config_from_dict(config_doc), clip_path, seed, run_dir, resume)


def cmd_train(args) -> int:
    from .plotting import learning_curves

    config = _run_config(args)
    config.check_files()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_run_config(config))
    jobs = []
    for clip_path in config.clips:
        for seed in config.seeds:
            run_dir = out / _clip_label(clip_path) / f"seed_{seed}"
            jobs.append((config.to_dict(), clip_path, seed, str(run_dir), not args.no_resume))
    results = _map(_run_seed_job, jobs, args.threads)
    by_clip: dict[str, dict] = {}
    for (_, clip_path, seed, run_dir, _), curve in zip(jobs, results):
        by_clip.setdefault(_clip_label(clip_path), {})[f"seed {seed}"] = curve
        last = curve[-1]
        print(f"{_clip_label(clip_path)} seed {seed}: {len(curve)} updates, final reward_mean "
              f"{last['reward_mean']:.4f} -> {run_dir}")
    for label, curves in by_clip.items():
        learning_curves(curves, out / label / "curves.png")
    return EXIT_OK


def _map(fn, jobs, threads):
    threads = max(1, int(threads or 1))
    if threads == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# -- eval --------------------------------------------------------------------
def evaluate(env: ImitationEnv, params=None, steps: int = 2000, seed: int = 0, stochastic: bool = False):
    """Roll out a checkpoint policy from clip frame 0; returns per-step breakdown rows."""
    from .rl.ppo import policy_forward

    rng = np.random.default_rng(seed)
    env.reset(seed)
    env.set_state(env.ref_q[0], env.ref_qd[0], 0)
    obs = env.current_observation()
    rows = []
    for i in range(steps):
        if params is None:
            action = env.reference_action()
        else:
            out = policy_forward(params, obs, rng, deterministic=not stochastic)
            action = out.action
        obs, _, _, b = env.step(action)
        rows.append(b.row(i))
    return rows


def cmd_eval(args) -> int:
    from .plotting import eval_terms
    from .retarget import run_env_ceiling
    from .rl.train import load_checkpoint

    config = _run_config(args)
    clip_path = args.clip or config.clips[0]
    out = Path(config.out)
    seed = args.seed if args.seed is not None else 0
    env = make_env(config, clip_path, seed, EpisodeConfig(max_steps=args.steps, reference_state_init=False))
    label = _clip_label(clip_path)
    if args.checkpoint == "kinematic":
        rep = run_env_ceiling(env, "kinematic", args.steps, label)
        rows = [b.row(i) for i, b in enumerate(rep.breakdowns)]
    elif args.checkpoint == "reference":
        rows = evaluate(env, None, args.steps, seed)
    else:
        try:
            ck = load_checkpoint(args.checkpoint)
        except OSError as exc:
            raise ConfigError(f"cannot read checkpoint {args.checkpoint}: {exc}") from exc
        fp = ck["meta"].get("fingerprint") or {}
        if fp and fp != env.fingerprint():
            log.warning("checkpoint was trained on a different model or clip")
        params = ck["params"]
        if params.obs_dim != env.observation_dim or params.action_dim != env.action_dim:
            raise ConfigError(f"checkpoint dimensions ({params.obs_dim}, {params.action_dim}) do not match the "
                              f"environment ({env.observation_dim}, {env.action_dim})")
        rows = evaluate(env, params, args.steps, seed, args.stochastic)
    arr = np.array([r[1:] for r in rows], dtype=float)
    total_idx = CSV_COLUMNS.index("total") - 1
    cumulative = float(arr[:, total_idx].sum())
    means = [float(arr[:, CSV_COLUMNS.index(f"r_{t}") - 1].mean()) for t in TERMS]
    summary = [label, args.steps, cumulative, cumulative / args.steps, *means]
    write_csv(out / f"eval_{label}.csv", CSV_COLUMNS, rows)
    write_csv(out / f"eval_{label}_summary.csv", EVAL_SUMMARY_COLUMNS, [summary])
    eval_terms([dict(zip(CSV_COLUMNS, r)) for r in rows], out / f"eval_{label}.png")
    print(f"{label}: cumulative reward {cumulative:.3f} over {args.steps} steps")
    return EXIT_OK


# -- ceiling -----------------------------------------------------------------
def cmd_ceiling(args) -> int:
    from .plotting import ceiling_series
    from .retarget import ceiling

    config = _run_config(args)
    clips = args.clips or (config.clips if args.config else
                           [f"bundled:clips/{l}.json" for l in bundled.SIGN_LABELS])
    modes = ["kinematic", "pd_tracked"] if args.mode == "both" else [args.mode]
    model = _load_model(config.model)
    system = PDSystem.from_model(model, config.kd_scale) if config.kd_scale else None
    reward = config.reward.build(model)
    out = Path(config.out)
    rows, reports = [], {m: [] for m in modes}
    for clip_path in clips:
        clip = _load_clip(clip_path)
        for mode in modes:
            rep = ceiling(model, clip, reward, mode, args.steps, system)
            rep.label = _clip_label(clip_path)
            reports[mode].append(rep)
            s = rep.summary()
            rows.append([s[c] for c in CEILING_COLUMNS])
            out.mkdir(parents=True, exist_ok=True)
            (out / f"ceiling_{rep.label}_{mode}.csv").write_text(rep.to_csv())
            print(f"{rep.label:>10} {mode:>10}: cumulative {rep.cumulative:.3f} / {rep.steps}")
    write_csv(out / "ceiling_summary.csv", CEILING_COLUMNS, rows)
    for mode, reps in reports.items():
        ceiling_series(reps, out / f"ceiling_{mode}.png")
    return EXIT_OK


# -- estimate-rewards ----------------------------------------------------------
def _parse_factor_sets(items) -> dict:
    out = {}
    for item in items or []:
        name, _, spec = item.partition(":")
        if not spec:
            raise ConfigError(f"--factors expects NAME:k_ph=0.2,k_vh=1e-4, got {item!r}")
        factors = {}
        for part in spec.split(","):
            k, _, v = part.partition("=")
            try:
                factors[k.strip()] = float(v)
            except ValueError as exc:
                raise ConfigError(f"--factors: bad value in {part!r}") from exc
        out[name] = factors
    return out


def estimate_table(trace, sets: dict) -> list[list]:
    rows = []
    for name, factors in sets.items():
        f = {**PRESETS["final"], **factors}
        for k in ("k_pb", "k_ph", "k_vb", "k_vh"):
            if k not in f or not np.isfinite(f[k]) or f[k] < 0:
                raise ConfigError(f"factor set {name!r}: {k} must be a finite nonnegative number")
        rows.append([name, f["k_pb"], f["k_ph"], f["k_vb"], f["k_vh"], estimate_pose_velocity_reward(f, trace)])
    return rows


def cmd_estimate(args) -> int:
    from .plotting import term_bars

    config = _run_config(args)
    trace_path = bundled.resolve(args.trace or DEFAULT_TRACE)
    try:
        trace = read_error_trace(trace_path)
    except OSError as exc:
        raise ConfigError(f"cannot read trace {trace_path}: {exc}") from exc
    names = args.presets or list(PRESETS)
    unknown = [n for n in names if n not in PRESETS]
    if unknown:
        raise ConfigError(f"unknown preset(s) {unknown}; choose from {sorted(PRESETS)}")
    sets = {n: PRESETS[n] for n in names}
    sets.update(_parse_factor_sets(args.factors))
    rows = estimate_table(trace, sets)
    out = Path(config.out)
    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, rows)
    term_bars({r[0]: r[-1] for r in rows}, out / "estimates.png")
    for r in rows:
        print(f"{r[0]:>12}: {r[-1]:.4f}")
    return EXIT_OK


# -- sweep -------------------------------------------------------------------
def _sweep_trial_job(job):
    config_doc, clip_path, seed, run_dir = job
    config = run_config_from_dict(config_doc)
    curve = run_seed(config, clip_path, seed, run_dir, resume=True)
    return float(curve[-1]["reward_mean"])


def cmd_sweep(args) -> int:
    from .plotting import term_bars

    config = _run_config(args)
    doc = {}
    if args.config:
        doc = (yaml.safe_load(Path(args.config).read_text()) or {}).get("sweep") or {}
    if args.sweep:
        try:
            doc = yaml.safe_load(Path(args.sweep).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read sweep spec {args.sweep}: {exc}") from exc
    if args.objective:
        doc = {**doc, "objective": args.objective}
    if not doc:
        raise ConfigError("sweep: no axes given (use a 'sweep' section in --config or --sweep FILE)")
    spec = SweepSpec.from_dict(doc)
    trials = spec.trials()
    out = Path(config.out)
    names = list(spec.axes)
    scores = []
    if spec.objective == "estimate":
        trace = read_error_trace(bundled.resolve(spec.trace or DEFAULT_TRACE))
        for t in trials:
            factors = {**PRESETS[config.reward.preset or "final"], **config.reward.factors,
                       **{k: float(v) for k, v in t.items() if k.startswith("k_")}}
            scores.append(estimate_pose_velocity_reward(factors, trace))
    else:
        config.check_files()
        seed = config.seeds[0]
        budget = replace(config, scale=config.scale * spec.budget_fraction)
        jobs = []
        for i, t in enumerate(trials):
            tc = apply_trial(budget, t)
            jobs.append((tc.to_dict(), config.clips[0], seed, str(out / f"trial_{i:03d}")))
        scores = _map(_sweep_trial_job, jobs, args.threads)
    order = sorted(range(len(trials)), key=lambda i: (-scores[i], i))
    rows = [[rank + 1, i, scores[i], *[trials[i][n] for n in names]] for rank, i in enumerate(order)]
    write_csv(out / "sweep.csv", SWEEP_FIXED_COLUMNS + tuple(names), rows)
    term_bars({f"#{i}": scores[i] for i in order}, out / "sweep.png", ylabel="score")
    print(f"{len(trials)} trials, best #{order[0]} score {scores[order[0]]:.4f}: {trials[order[0]]}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run config YAML")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the seed list")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="signmimic", parents=[common],
                                description="Physics-based imitation of sign-language motions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", parents=[common], help="convert a pose-estimator capture into a clip")
    c.add_argument("capture", help="capture JSON file or directory of per-frame JSON files")
    c.add_argument("--model", help="skeleton model (default: bundled signer)")
    c.add_argument("--label")
    c.add_argument("--fps", type=float, help="frame rate for per-frame directories")
    c.add_argument("--smooth", action="store_true")
    c.add_argument("--mirror", action="store_true", help="mirror left/right before converting")
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", parents=[common], help="train one policy per (clip, seed)")
    t.add_argument("--scale", type=float, help="multiply the configured step budget")
    t.add_argument("--no-resume", action="store_true", help="start over even if checkpoints exist")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint over a fixed horizon")
    e.add_argument("checkpoint", help="checkpoint .npz, or 'kinematic' / 'reference' for the ceilings")
    e.add_argument("--clip", help="clip to evaluate on (default: first clip in the config)")
    e.add_argument("--steps", type=int, default=2000)
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of using the mean")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="grid or random sweep over reward/train parameters")
    s.add_argument("--sweep", help="sweep spec YAML (default: 'sweep' section of --config)")
    s.add_argument("--objective", choices=("train", "estimate"))
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("ceiling", parents=[common], help="ideal-retargeting reward ceilings")
    g.add_argument("--clips", nargs="+")
    g.add_argument("--mode", choices=("kinematic", "pd_tracked", "both"), default="both")
    g.add_argument("--steps", type=int, default=2000)
    g.set_defaults(func=cmd_ceiling)

    r = sub.add_parser("estimate-rewards", parents=[common], help="replay an error trace under factor sets")
    r.add_argument("--trace", help=f"per-step error CSV (default {DEFAULT_TRACE})")
    r.add_argument("--presets", nargs="+")
    r.add_argument("--factors", nargs="+", metavar="NAME:k=v,...")
    r.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, default in (("config", None), ("seed", None), ("out", None), ("threads", 1), ("verbose", 0)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if getattr(args, "steps", 1) < 1:
        parser.error("--steps must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, ParseError, StructuralError, IngestionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, NumericalError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
