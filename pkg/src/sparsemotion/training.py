"""Window assembly, the training step and the training loop."""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .conditioning import build_signal
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import linear_schedule, loss_combined, loss_simple, loss_vlb, q_sample, squash_v
from .errors import EmptyDataset, NonFiniteLoss
from .seeding import STREAM_EPOCH, STREAM_INIT, STREAM_STEP, STREAM_VAL, derive_seed, generator

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 256
    weight_decay: float = 0.0
    lambda_vlb: float = 1.0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    W: int = 41
    steps: int = 1000
    seed: int = 0
    window_stride_train: int = 1
    log_every: int = 50
    checkpoint_every: int = 0

    def to_dict(self):
        return asdict(self)

    def schedule(self):
        return linear_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class WindowSample:
    x0: np.ndarray  # (W, 132)
    s: np.ndarray  # (W, 54)
    source: str
    start: int


@dataclass
class Dataset:
    """Named motion sequences with their conditioning signals."""

    skel: object
    names: list
    motions: list
    signals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.signals:
            self.signals = [build_signal(self.skel, m) for m in self.motions]

    def __len__(self):
        return len(self.motions)


def make_windows(dataset, W, stride=1):
    """Contiguous windows of every sequence; sequences shorter than W are skipped."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out, skipped = [], 0
    for name, motion, sig in zip(dataset.names, dataset.motions, dataset.signals):
        F = motion.num_frames
        if F < W:
            skipped += 1
            continue
        x = motion.window_features().astype(np.float32)
        s = sig.flat().astype(np.float32)
        for start in range(0, F - W + 1, stride):
            out.append(WindowSample(x[start : start + W], s[start : start + W], name, start))
    if skipped:
        log.info("skipped %d sequence(s) shorter than W=%d", skipped, W)
    make_windows.last_skipped = skipped
    return out


make_windows.last_skipped = 0


def stack_batch(windows, dtype=torch.float32):
    x0 = torch.as_tensor(np.stack([w.x0 for w in windows]), dtype=dtype)
    s = torch.as_tensor(np.stack([w.s for w in windows]), dtype=dtype)
    return x0, s


def sample_t(sched, n, gen):
    """Uniform steps on {1..T}."""
    return torch.randint(1, sched.T + 1, (n,), generator=gen)


def compute_losses(model, sched, x0, s, t, eps, lambda_vlb):
    x_t = q_sample(sched, x0, t, eps)
    eps_hat, v_raw = model(x_t, s, t)
    ls = loss_simple(eps, eps_hat)
    if lambda_vlb:
        lv = loss_vlb(sched, x0, x_t, t, eps_hat, squash_v(v_raw))
    else:
        lv = torch.zeros((), dtype=ls.dtype)
    return ls, lv, loss_combined(ls, lv, lambda_vlb)


def train_step(model, optimizer, sched, x0, s, gen, lambda_vlb=1.0):
    """One optimisation step on a batch; returns the loss scalars."""
    model.train()
    B = x0.shape[0]
    t = sample_t(sched, B, gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    ls, lv, total = compute_losses(model, sched, x0, s, t, eps, lambda_vlb)
    if not torch.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss: simple={ls.item()}, vlb={lv.item()}, t range [{t.min()}, {t.max()}]")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return {"loss_simple": ls.item(), "loss_vlb": lv.item(), "loss_total": total.item()}


def config_hash(*dicts):
    payload = json.dumps(dicts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


class Trainer:
    """Owns the model, optimizer and data order for a training run.

    The noise and timestep draws of step k use a generator seeded with
    ``derive_seed(seed ^ STREAM_STEP, k)`` and epoch e is shuffled with
    ``derive_seed(seed ^ STREAM_EPOCH, e)``, so a run resumed from a
    checkpoint at step k continues exactly as an uninterrupted one.
    """

    def __init__(self, windows, model_cfg, train_cfg, val_windows=None):
        if not windows:
            raise EmptyDataset("no training windows")
        if model_cfg.W != train_cfg.W:
            raise ValueError(f"window size mismatch: model W={model_cfg.W}, train W={train_cfg.W}")
        self.windows = windows
        self.val_windows = val_windows or []
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.sched = train_cfg.schedule()
        with torch.random.fork_rng():
            torch.manual_seed(derive_seed(train_cfg.seed ^ STREAM_INIT, 0) & ((1 << 63) - 1))
            self.model = Denoiser(model_cfg)
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay
        )
        self.step = 0
        self.history = []

    def _batch_indices(self, step):
        n, B = len(self.windows), self.cfg.batch
        out = []
        pos = step * B
        while len(out) < B:
            epoch, offset = divmod(pos, n)
            perm = torch.randperm(n, generator=generator(derive_seed(self.cfg.seed ^ STREAM_EPOCH, epoch)))
            take = min(B - len(out), n - offset)
            out.extend(perm[offset : offset + take].tolist())
            pos += take
        return out

    def run(self, n_steps, log_path=None):
        fh = open(log_path, "a") if log_path else None
        try:
            t0 = time.time()
            for _ in range(n_steps):
                x0, s = stack_batch([self.windows[i] for i in self._batch_indices(self.step)])
                gen = generator(derive_seed(self.cfg.seed ^ STREAM_STEP, self.step))
                losses = train_step(self.model, self.optimizer, self.sched, x0, s, gen, self.cfg.lambda_vlb)
                self.step += 1
                self.history.append(losses)
                if fh and (self.step % self.cfg.log_every == 0 or self.step == 1):
                    fh.write(json.dumps({"step": self.step, **losses, "wall_s": round(time.time() - t0, 3)}) + "\n")
                    fh.flush()
                if self.cfg.log_every and self.step % self.cfg.log_every == 0:
                    log.info("step %d loss %.4f", self.step, losses["loss_total"])
        finally:
            if fh:
                fh.close()
        return self.history

    @torch.no_grad()
    def validation_loss(self, max_windows=256):
        if not self.val_windows:
            return None
        self.model.eval()
        wins = self.val_windows[:max_windows]
        x0, s = stack_batch(wins)
        gen = generator(derive_seed(self.cfg.seed ^ STREAM_VAL, 0))
        t = sample_t(self.sched, len(wins), gen)
        eps = torch.randn(x0.shape, generator=gen)
        ls, lv, total = compute_losses(self.model, self.sched, x0, s, t, eps, self.cfg.lambda_vlb)
        return {"loss_simple": ls.item(), "loss_vlb": lv.item(), "loss_total": total.item()}

    def save(self, path, extra=None):
        ckpt.save(
            path,
            self.model,
            self.optimizer,
            train_config=self.cfg.to_dict(),
            step=self.step,
            config_hash=config_hash(self.model_cfg.to_dict(), self.cfg.to_dict()),
            extra=extra or {},
        )

    @classmethod
    def resume(cls, path, windows, val_windows=None):
        header, tensors = ckpt.load(path)
        tr = cls(windows, DenoiserConfig(**header["model_config"]), TrainConfig(**header["train_config"]), val_windows)
        ckpt.restore_model(tr.model, tensors, header)
        ckpt.restore_optimizer(tr.optimizer, tr.model, tensors)
        tr.step = int(header["step"])
        return tr


def fit(dataset, train_cfg, model_cfg, out_dir=None, val_dataset=None, resume_from=None):
    """Train and return the Trainer; writes checkpoints and a log if out_dir is given."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset has no sequences")
    windows = make_windows(dataset, train_cfg.W, train_cfg.window_stride_train)
    val = make_windows(val_dataset, train_cfg.W, train_cfg.W) if val_dataset is not None and len(val_dataset) else []
    if resume_from:
        tr = Trainer.resume(resume_from, windows, val)
        tr.cfg = train_cfg
    else:
        tr = Trainer(windows, model_cfg, train_cfg, val)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl" if out else None
    every = train_cfg.checkpoint_every or train_cfg.steps
    while tr.step < train_cfg.steps:
        n = min(every - tr.step % every, train_cfg.steps - tr.step)
        tr.run(n, log_path)
        if out and tr.step < train_cfg.steps:
            tr.save(out / "checkpoint_last.smck")
    if out:
        snapshot = {"validation": tr.validation_loss(), "final_train": tr.history[-1] if tr.history else None}
        tr.save(out / "checkpoint_final.smck", extra={"metrics": snapshot, "num_windows": len(windows)})
    return tr
