"""Deterministic seed derivation.

``derive_seed(base, index)`` adds ``(index + 1)`` golden-ratio increments to
the base seed and applies the splitmix64 finaliser.  Both stages are
bijections on 64-bit integers, so the result is injective in ``index`` for
any fixed base.
"""

import torch

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed, index):
    return splitmix64((int(base_seed) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64)


def generator(seed):
    g = torch.Generator()
    g.manual_seed(int(seed) & MASK64)
    return g


# stream tags keep independent uses of one run seed apart
STREAM_STEP = 0x5354
STREAM_EPOCH = 0x4550
STREAM_INIT = 0x494E
STREAM_VAL = 0x5641
