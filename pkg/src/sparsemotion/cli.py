"""Command line entry point.

Commands::

    sparsemotion synth-data --out DIR [--kinds walk_cycle arm_wave] [--count N]
    sparsemotion train --data DIR --out DIR [--steps N] [--lr X] [--batch B] ...
    sparsemotion sample --checkpoint CK --signal LOG.csv|MOTION.smm --out OUT.smm
    sparsemotion evaluate --pred A.smm --gt B.smm [--report report.json]
    sparsemotion inspect PATH

Every command takes ``--seed``, ``--threads``, ``--config`` and
``--log-level``.  Option values are resolved in increasing priority:
built-in defaults, the JSON config file, ``SPARSEMOTION_<OPTION>``
environment variables (option name upper-cased, dashes as underscores, e.g.
``SPARSEMOTION_LR=3e-4``), then flags on the command line.

The config file is a JSON object.  Top-level keys apply to any command that
has a matching option; a key named after a command (``"train": {...}``)
holds options for that command only and wins over top-level keys.

Exit status: 0 on success, 2 on usage errors (argparse), 1 on data errors
with a one-line JSON record ``{"error": ..., "message": ...}`` on stderr.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import checkpoint as ckpt
from .conditioning import build_signal, load_device_log
from .data_io import (
    MOTION_SUFFIX,
    load_manifest,
    load_motion,
    make_manifest,
    save_manifest,
    save_motion,
)
from .denoiser import COND_MODES, DenoiserConfig
from .errors import EmptyDataset, SparseMotionError
from .inference import SynthesisConfig, load_model, synthesize_sequence, write_trace
from .metrics import evaluate
from .skeleton import default_skeleton, load_skeleton
from .synth import KINDS, synth_motion
from .training import Dataset, TrainConfig, fit

log = logging.getLogger("sparsemotion")

ENV_PREFIX = "SPARSEMOTION_"
MANIFEST_NAME = "manifest.json"


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="base random seed (default: 0)")
    p.add_argument("--threads", type=int, default=0, help="torch intra-op threads; 0 keeps the torch default")
    p.add_argument("--config", type=Path, default=None, help="JSON config file; flags override its values")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsemotion", description="Full-body motion from sparse tracking.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", help="write a synthetic motion dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--kinds", nargs="+", default=["walk_cycle", "arm_wave"], choices=KINDS)
    p.add_argument("--count", type=int, default=10, help="sequences per kind (default: 10)")
    p.add_argument("--duration", type=float, default=10.0, help="seconds per sequence (default: 10)")
    p.add_argument("--fps", type=float, default=60.0)
    p.add_argument("--split", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a denoiser")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help=f"directory of {MOTION_SUFFIX} files or a manifest")
    p.add_argument("--out", type=Path, required=True, help="run directory for checkpoints and the log")
    p.add_argument("--skeleton", type=Path, default=None, help="skeleton JSON (default: built-in SMPL tree)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--lambda-vlb", type=float, default=1.0)
    p.add_argument("--diffusion-steps", type=int, default=1000, help="T")
    p.add_argument("--window", type=int, default=41, help="W, frames per window")
    p.add_argument("--window-stride", type=int, default=1, help="stride between training windows")
    p.add_argument("--hidden", type=int, default=384)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--heads", type=int, default=6)
    p.add_argument("--cond-mode", default="token", choices=COND_MODES)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--checkpoint-every", type=int, default=0, help="0 writes only the final checkpoint")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="synthesize motion from a tracking signal")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--signal", type=Path, required=True, help=f"device log (.csv) or motion file ({MOTION_SUFFIX})")
    p.add_argument("--out", type=Path, required=True, help=f"output motion file ({MOTION_SUFFIX})")
    p.add_argument("--skeleton", type=Path, default=None)
    p.add_argument("--steps", type=int, default=50, help="DDIM steps (default: 50)")
    p.add_argument("--eta", type=float, default=0.0, help="DDIM stochasticity in [0, 1]")
    p.add_argument("--stride", type=int, default=20, help="window stride in frames (default: 20)")
    p.add_argument("--batch-windows", type=int, default=64, help="windows denoised per forward pass")
    p.add_argument("--trace", type=Path, default=None, help="write per-step JSONL trace here")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="compare a predicted motion with ground truth")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--skeleton", type=Path, default=None)
    p.add_argument("--report", type=Path, default=None, help="write the JSON record here")
    p.add_argument("--label", default="pred", help="row label in the table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize a motion, checkpoint, device log or manifest")
    _common(p)
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


# -- config resolution ------------------------------------------------------------


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(command)
    return None


def _convert(action, raw, source):
    conv = action.type or (lambda x: x)
    try:
        if action.nargs in ("+", "*") or isinstance(action.nargs, int):
            items = raw.split() if isinstance(raw, str) else list(raw)
            return [conv(x) for x in items]
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"{source}: bad value {raw!r} for --{action.dest.replace('_', '-')}") from exc


def resolve_defaults(parser, argv, environ=None):
    """Install config-file and environment values as subcommand defaults."""
    environ = os.environ if environ is None else environ
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    sp = _subparser(parser, known.command)
    if sp is None:
        return
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "func", "config")}

    values = {}
    if known.config:
        try:
            doc = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            sp.error(f"cannot read config {known.config}: {exc}")
        if not isinstance(doc, dict):
            sp.error(f"config {known.config} must be a JSON object")
        section = doc.get(known.command, {})
        for key, raw in list(doc.items()) + list(section.items()):
            dest = key.replace("-", "_")
            if dest in actions:
                values[dest] = _convert(actions[dest], raw, str(known.config))
    for dest, action in actions.items():
        env = ENV_PREFIX + dest.upper()
        if env in environ:
            values[dest] = _convert(action, environ[env], env)
    if values:
        for dest in values:
            actions[dest].required = False
        sp.set_defaults(**values)


def parse_args(argv=None, environ=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        resolve_defaults(parser, argv, environ)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    return parser.parse_args(argv)


# -- helpers ------------------------------------------------------------------------


def _skeleton(path):
    return load_skeleton(path) if path else default_skeleton()


def _motion_paths(data):
    """(train, val) file lists from a manifest or a plain directory."""
    data = Path(data)
    if data.is_file():
        man = load_manifest(data)
        return man.paths("train"), man.paths("val")
    if (data / MANIFEST_NAME).exists():
        man = load_manifest(data / MANIFEST_NAME)
        return man.paths("train"), man.paths("val")
    files = sorted(data.glob(f"*{MOTION_SUFFIX}"))
    return files, []


def _dataset(skel, paths):
    motions = [load_motion(p) for p in paths]
    for m, p in zip(motions, paths):
        m.validate()
        m.metadata.setdefault("subject", Path(p).stem)
    return Dataset(skel, [Path(p).stem for p in paths], motions)


def _load_signal(path, skel):
    path = Path(path)
    if path.suffix == MOTION_SUFFIX:
        return build_signal(skel, load_motion(path))
    return load_device_log(path)


# -- commands -----------------------------------------------------------------------


def cmd_synth_data(args):
    args.out.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in args.kinds:
        for i in range(args.count):
            seq = synth_motion(kind, args.duration, args.fps, seed=args.seed + i)
            path = args.out / f"{kind}_{args.seed + i:04d}{MOTION_SUFFIX}"
            save_motion(path, seq)
            written.append(path)
    man = make_manifest(args.out, tuple(args.split), seed=args.seed)
    save_manifest(args.out / MANIFEST_NAME, man)
    log.info("wrote %d sequences to %s", len(written), args.out)
    print(json.dumps({k: len(v) for k, v in man.splits.items()}))
    return 0


def cmd_train(args):
    skel = _skeleton(args.skeleton)
    train_paths, val_paths = _motion_paths(args.data)
    if not train_paths:
        raise EmptyDataset(f"no training sequences under {args.data}")
    ds = _dataset(skel, train_paths)
    val = _dataset(skel, val_paths) if val_paths else None
    tc = TrainConfig(
        lr=args.lr, batch=args.batch, weight_decay=args.weight_decay, lambda_vlb=args.lambda_vlb,
        T=args.diffusion_steps, W=args.window, steps=args.steps, seed=args.seed,
        window_stride_train=args.window_stride, log_every=args.log_every, checkpoint_every=args.checkpoint_every,
    )
    mc = DenoiserConfig(W=args.window, hidden=args.hidden, depth=args.depth, heads=args.heads,
                        t_embed_dim=args.hidden, cond_mode=args.cond_mode)
    tr = fit(ds, tc, mc, args.out, val, args.resume)
    summary = {"step": tr.step, "checkpoint": str(args.out / "checkpoint_final.smck")}
    if tr.history:
        summary.update(tr.history[-1])
    print(json.dumps(summary))
    return 0


def cmd_sample(args):
    model, sched, header = load_model(args.checkpoint)
    skel = _skeleton(args.skeleton)
    signal = _load_signal(args.signal, skel)
    signal.validate()
    cfg = SynthesisConfig(ddim_steps=args.steps, eta=args.eta, stride=args.stride, base_seed=args.seed,
                          batch_windows=args.batch_windows)
    trace = [] if args.trace else None
    out = synthesize_sequence(model, sched, skel, signal, cfg, trace)
    out.motion.metadata["checkpoint_hash"] = header.get("config_hash", "")
    save_motion(args.out, out.motion)
    if args.trace:
        write_trace(args.trace, trace)
    log.info("synthesized %d frames from %d windows", out.motion.num_frames, len(out.window_starts))
    return 0


def cmd_evaluate(args):
    skel = _skeleton(args.skeleton)
    pred, gt = load_motion(args.pred), load_motion(args.gt)
    report = evaluate(skel, pred, gt)
    print(report.table(args.label))
    if args.report:
        record = {"pred": str(args.pred), "gt": str(args.gt), **report.to_dict()}
        args.report.write_text(json.dumps(record, indent=2) + "\n")
    return 0


def cmd_inspect(args):
    path = args.path
    if path.is_dir():
        files = sorted(path.glob(f"*{MOTION_SUFFIX}"))
        print(f"directory {path}: {len(files)} motion files")
        if (path / MANIFEST_NAME).exists():
            man = load_manifest(path / MANIFEST_NAME)
            print("splits: " + ", ".join(f"{k}={len(v)}" for k, v in man.splits.items()))
        return 0
    head = path.read_bytes()[:4]
    if head == b"SMMO":
        m = load_motion(path)
        print(f"motion {path}: {m.num_frames} frames at {m.fps:g} fps ({m.num_frames / m.fps:.2f} s)")
        print(f"root range (m): min {np.round(m.root_translation.min(0), 3)} max {np.round(m.root_translation.max(0), 3)}")
        print("metadata: " + json.dumps(m.metadata, sort_keys=True))
    elif head == b"SMCK":
        header, tensors = ckpt.load(path)
        n = sum(int(np.prod(t.shape)) for k, t in tensors.items() if k.startswith("model/"))
        print(f"checkpoint {path}: step {header.get('step')} hash {header.get('config_hash')}")
        print(f"parameters: {n}")
        print("model: " + json.dumps(header.get("model_config"), sort_keys=True))
        print("train: " + json.dumps(header.get("train_config"), sort_keys=True))
    elif path.suffix == ".csv":
        sig = load_device_log(path)
        print(f"device log {path}: {len(sig)} frames at {sig.fps:g} fps")
        hp = sig.head_position
        print(f"head height (m): mean {hp[:, 1].mean():.3f} min {hp[:, 1].min():.3f} max {hp[:, 1].max():.3f}")
    elif path.suffix == ".json":
        man = load_manifest(path)
        print(f"manifest {path}: " + ", ".join(f"{k}={len(v)}" for k, v in man.splits.items()))
    else:
        raise SparseMotionError(f"{path}: unrecognized file type")
    return 0


def main(argv=None, environ=None):
    args = parse_args(argv, environ)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (SparseMotionError, ValueError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
