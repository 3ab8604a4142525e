"""Full-sequence synthesis from a tracking signal.

Windows of length W are placed at starts 0, stride, 2*stride, ... with the
last start clamped to F - W.  Each window is denoised independently from its
own seeded Gaussian noise with DDIM.  Stitching keeps the first window whole
and then, for every later window, only the frames past the previous window's
end, so each output frame comes from exactly one window.  The root
translation is solved per frame so that the head lands on the tracked head
position.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data_io import MotionSequence
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import ddim_step, ddim_timesteps, linear_schedule
from .errors import RangeError, SignalTooShort
from .rotmath import renormalize_sixd
from .seeding import derive_seed, generator
from .skeleton import NUM_JOINTS, solve_root_translation


@dataclass
class SynthesisConfig:
    ddim_steps: int = 50
    eta: float = 0.0
    stride: int = 20
    base_seed: int = 0
    stitch_mode: str = "take_last"
    batch_windows: int = 64

    def validate(self, W, T):
        if not 1 <= self.stride <= W:
            raise RangeError(f"stride {self.stride} outside [1, {W}]")
        if not 1 <= self.ddim_steps <= T:
            raise RangeError(f"ddim_steps {self.ddim_steps} outside [1, {T}]")
        if self.stitch_mode != "take_last":
            raise ValueError(f"unsupported stitch mode {self.stitch_mode!r}")


@dataclass
class SynthesizedMotion:
    motion: MotionSequence
    window_of_frame: np.ndarray  # (F,) index of the window each frame came from
    window_starts: list
    window_seeds: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def window_starts(F, W, stride):
    if F < W:
        raise SignalTooShort(f"signal has {F} frames, window needs {W}")
    starts = list(range(0, F - W + 1, stride))
    if starts[-1] != F - W:
        starts.append(F - W)
    return starts


def stitch_plan(F, W, stride):
    """Per-window (start, first_frame_taken, stop) spans covering [0, F) once."""
    starts = window_starts(F, W, stride)
    plan, covered = [], 0
    for s in starts:
        plan.append((s, covered, s + W))
        covered = s + W
    return plan


@torch.no_grad()
def synthesize_windows(model, sched, signals, cfg, seeds, trace=None):
    """Denoise a batch of windows with DDIM.

    Args:
        signals: (B, W, d_s) conditioning windows.
        seeds: one integer seed per window; each window's initial noise and
            any stochastic DDIM noise come from its own generator.
        trace: optional list collecting per-step summaries.

    Returns:
        (B, W, d_x) numpy array of local 6D rotations, renormalised.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    s = torch.as_tensor(np.asarray(signals), dtype=dtype)
    B, W, _ = s.shape
    d_x = model.cfg.d_x
    gens = [generator(sd) for sd in seeds]
    x = torch.stack([torch.randn((W, d_x), generator=g, dtype=dtype) for g in gens])
    steps = ddim_timesteps(sched.T, cfg.ddim_steps)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps_hat, _ = model(x, s, torch.full((B,), t, dtype=torch.long))
        noise = None
        if cfg.eta > 0:
            noise = torch.stack([torch.randn((W, d_x), generator=g, dtype=dtype) for g in gens])
        x = ddim_step(sched, x, t, t_prev, eps_hat, cfg.eta, noise)
        if trace is not None:
            trace.append({"t": t, "t_prev": t_prev, "x_rms": float(x.pow(2).mean().sqrt()),
                          "eps_rms": float(eps_hat.pow(2).mean().sqrt())})
    out = x.double().numpy().reshape(B, W, NUM_JOINTS, 6)
    return renormalize_sixd(out).reshape(B, W, d_x)


def synthesize_window(model, sched, s, cfg, seed):
    """Single-window convenience wrapper around :func:`synthesize_windows`."""
    return synthesize_windows(model, sched, np.asarray(s)[None], cfg, [seed])[0]


def synthesize_sequence(model, sched, skel, signal, cfg, trace=None):
    W = model.cfg.W
    cfg.validate(W, sched.T)
    F = len(signal)
    plan = stitch_plan(F, W, cfg.stride)
    seeds = [derive_seed(cfg.base_seed, k) for k in range(len(plan))]
    flat = signal.flat()
    windows = np.stack([flat[s : s + W] for s, _, _ in plan])
    results = []
    for b in range(0, len(plan), cfg.batch_windows):
        results.append(synthesize_windows(model, sched, windows[b : b + cfg.batch_windows], cfg,
                                          seeds[b : b + cfg.batch_windows], trace))
    results = np.concatenate(results)

    local = np.empty((F, NUM_JOINTS, 6))
    owner = np.full(F, -1, dtype=np.int64)
    for k, (s, lo, hi) in enumerate(plan):
        local[lo:hi] = results[k, lo - s : hi - s].reshape(-1, NUM_JOINTS, 6)
        owner[lo:hi] = k
    root = solve_root_translation(skel, local, signal.head_position)
    meta = {"source": "synthesized", "skeleton": skel.digest(), "base_seed": int(cfg.base_seed),
            "ddim_steps": int(cfg.ddim_steps), "eta": float(cfg.eta), "stride": int(cfg.stride)}
    motion = MotionSequence(local, root, signal.fps, meta)
    return SynthesizedMotion(motion, owner, [p[0] for p in plan], seeds, trace if trace is not None else [])


def load_model(path):
    """Model and schedule from a checkpoint file."""
    header, tensors = ckpt.load(path)
    cfg = DenoiserConfig(**header["model_config"])
    model = Denoiser(cfg)
    ckpt.restore_model(model, tensors, header)
    tc = header.get("train_config", {})
    sched = linear_schedule(tc.get("T", 1000), tc.get("beta_start", 1e-4), tc.get("beta_end", 0.02))
    return model, sched, header


def write_trace(path, trace):
    with open(Path(path), "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec) + "\n")
