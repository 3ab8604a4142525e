import numpy as np
import pytest
import torch

from sparsemotion.denoiser import (
    COND_MODES,
    Denoiser,
    DenoiserConfig,
    parameter_groups,
    sinusoidal_embedding,
    timestep_embedding,
)
from sparsemotion.diffusion import linear_schedule, loss_combined, loss_simple, loss_vlb, q_sample, squash_v
from sparsemotion.errors import ShapeMismatch

SCHED = linear_schedule()


def toy(seed=0, **kw):
    torch.manual_seed(seed)
    return Denoiser(DenoiserConfig.toy(**kw))


def inputs(cfg, B=3, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(B, cfg.W, cfg.d_x, generator=g, dtype=dtype)
    s = torch.randn(B, cfg.W, cfg.d_s, generator=g, dtype=dtype)
    t = torch.randint(1, 1001, (B,), generator=g)
    return x, s, t


def randomize(model, seed, scale=0.2):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


class TestShapesAndInit:
    def test_default_config(self):
        cfg = DenoiserConfig()
        assert (cfg.W, cfg.d_x, cfg.d_s, cfg.d_emb, cfg.hidden, cfg.depth, cfg.heads) == (41, 132, 54, 396, 384, 12, 6)

    @pytest.mark.parametrize("skip", [False, True])
    @pytest.mark.parametrize("mode", COND_MODES)
    def test_zero_init_output(self, mode, skip):
        m = toy(cond_mode=mode, input_skip=skip)
        x, s, t = inputs(m.cfg)
        eps, v = m(x, s, t)
        assert eps.shape == v.shape == (3, 4, 132)
        assert torch.count_nonzero(eps) == 0 and torch.count_nonzero(v) == 0

    def test_unbatched(self):
        m = toy()
        randomize(m, 1)
        x, s, t = inputs(m.cfg, B=1)
        eps_b, _ = m(x, s, t)
        eps_u, v_u = m(x[0], s[0], int(t[0]))
        assert eps_u.shape == (4, 132)
        torch.testing.assert_close(eps_u, eps_b[0])

    def test_shape_errors(self):
        m = toy()
        x, s, t = inputs(m.cfg)
        with pytest.raises(ShapeMismatch):
            m(x[:, :3], s, t)
        with pytest.raises(ShapeMismatch):
            m(x, s[..., :50], t)
        with pytest.raises(ShapeMismatch):
            m(x, s[:2], t)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            DenoiserConfig(hidden=10, heads=3)
        with pytest.raises(ValueError):
            DenoiserConfig(cond_mode="cross")

    def test_batch_permutation_equivariance(self):
        m = toy()
        randomize(m, 2)
        x, s, t = inputs(m.cfg, B=5, seed=3)
        perm = torch.tensor([3, 0, 4, 1, 2])
        a, av = m(x, s, t)
        b, bv = m(x[perm], s[perm], t[perm])
        torch.testing.assert_close(b, a[perm])
        torch.testing.assert_close(bv, av[perm])

    def test_conditioning_changes_output(self):
        for mode in COND_MODES:
            m = toy(cond_mode=mode)
            randomize(m, 4)
            x, s, t = inputs(m.cfg, B=1)
            a, _ = m(x, s, t)
            b, _ = m(x, s + 1.0, t)
            assert not torch.allclose(a, b), mode

    def test_input_skip_passes_input(self):
        m = toy(input_skip=True)
        with torch.no_grad():
            m.skip.gate[-1].bias.fill_(1.0)
        x, s, t = inputs(m.cfg)
        eps, _ = m(x, s, t)
        torch.testing.assert_close(eps, x)


class TestTimestepEmbedding:
    def test_layout(self):
        e = timestep_embedding(0, 8)
        np.testing.assert_array_equal(e, [1, 1, 1, 1, 0, 0, 0, 0])

    def test_closed_form(self):
        e = timestep_embedding(37, 16)
        k = np.arange(8)
        f = np.exp(-np.log(10000.0) * k / 8)
        np.testing.assert_allclose(e, np.concatenate([np.cos(37 * f), np.sin(37 * f)]), atol=1e-12)

    def test_distinct_steps(self):
        E = sinusoidal_embedding(torch.arange(1, 1001), 256).numpy()
        d = np.linalg.norm(E[:, None] - E[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 1e-3


def _check_group_gradients(model, loss_fn, seed, n_per_group=4, h=1e-6, rtol=1e-3):
    """Central differences on a few random entries of every parameter group."""
    model.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    for gname, params in parameter_groups(model).items():
        fd, an = [], []
        for _, p in params:
            flat = p.data.view(-1)
            for i in rng.choice(flat.numel(), size=min(n_per_group, flat.numel()), replace=False):
                old = flat[i].item()
                with torch.no_grad():
                    flat[i] = old + h
                    up = loss_fn().item()
                    flat[i] = old - h
                    down = loss_fn().item()
                    flat[i] = old
                fd.append((up - down) / (2 * h))
                an.append(p.grad.view(-1)[i].item())
        fd, an = np.array(fd), np.array(an)
        err = np.linalg.norm(fd - an)
        assert err <= rtol * max(np.linalg.norm(fd), 1e-6), f"{gname}: analytic {an} vs numeric {fd}"


class TestGradients:
    @pytest.fixture(autouse=True, params=[False, True], ids=["plain", "input_skip"])
    def setup(self, request):
        self.model = toy(seed=5, input_skip=request.param).double()
        randomize(self.model, 6)
        cfg = self.model.cfg
        g = torch.Generator().manual_seed(7)
        self.x0 = torch.randn(2, cfg.W, cfg.d_x, generator=g, dtype=torch.float64) * 0.5
        self.s = torch.randn(2, cfg.W, cfg.d_s, generator=g, dtype=torch.float64)
        self.eps = torch.randn(2, cfg.W, cfg.d_x, generator=g, dtype=torch.float64)
        self.t = torch.tensor([17, 640])
        self.x_t = q_sample(SCHED, self.x0, self.t, self.eps)

    def test_loss_simple(self):
        def loss():
            eps_hat, _ = self.model(self.x_t, self.s, self.t)
            return loss_simple(self.eps, eps_hat)

        _check_group_gradients(self.model, loss, seed=8)

    def test_loss_combined(self):
        # the variance term sees the mean through a stop-gradient; hold it at
        # the base parameters so finite differences see the same function
        with torch.no_grad():
            eps_frozen, _ = self.model(self.x_t, self.s, self.t)

        def loss_fd():
            eps_hat, v_raw = self.model(self.x_t, self.s, self.t)
            lv = loss_vlb(SCHED, self.x0, self.x_t, self.t, eps_frozen, squash_v(v_raw))
            return loss_combined(loss_simple(self.eps, eps_hat), lv, 1.0)

        self.model.zero_grad()
        eps_hat, v_raw = self.model(self.x_t, self.s, self.t)
        real = loss_combined(loss_simple(self.eps, eps_hat),
                             loss_vlb(SCHED, self.x0, self.x_t, self.t, eps_hat, squash_v(v_raw)), 1.0)
        real_grads = torch.autograd.grad(real, list(self.model.parameters()))
        surrogate = torch.autograd.grad(loss_fd(), list(self.model.parameters()))
        for a, b in zip(real_grads, surrogate):
            torch.testing.assert_close(a, b, rtol=1e-10, atol=1e-12)
        _check_group_gradients(self.model, loss_fd, seed=9)

    def test_every_group_checked(self):
        groups = parameter_groups(self.model)
        for name in ("cond_embed", "input_proj", "t_embedder", "blocks.0", "blocks.1", "final"):
            assert name in groups
        assert ("skip" in groups) == self.model.cfg.input_skip
