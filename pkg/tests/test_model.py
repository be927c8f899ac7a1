import numpy as np
import pytest
import torch

from s2sf.errors import ShapeError
from s2sf.model import DenoiserConfig, FiLM, SeqDenoiser, count_parameters

MICRO = DenoiserConfig(H=8, W=8, C=3, max_frames=4, patch=8, width=8, depth_conv=1,
                       depth_attn=1, heads=1, cond_dim=8, embed_mode="global")


def micro_model(seed=0):
    torch.manual_seed(seed)
    return SeqDenoiser(MICRO)


class TestForward:
    def test_shape_contract(self):
        model = micro_model()
        for n in (1, 2, 4):
            frames = torch.randn(2, n, 3, 8, 8)
            out = model(frames, torch.randint(0, 9, (2, n)), torch.zeros(2, n, 16))
            assert out.shape == frames.shape

    def test_too_many_frames(self):
        model = micro_model()
        with pytest.raises(ShapeError):
            model(torch.randn(1, 5, 3, 8, 8), torch.zeros(1, 5, dtype=torch.long), torch.zeros(1, 5, 16))

    def test_bad_frame_shape(self):
        model = micro_model()
        with pytest.raises(ShapeError):
            model(torch.randn(1, 2, 3, 4, 8), torch.zeros(1, 2, dtype=torch.long), torch.zeros(1, 2, 16))

    def test_determinism(self):
        model = micro_model()
        frames = torch.randn(1, 3, 3, 8, 8, generator=torch.Generator().manual_seed(1))
        levels = torch.tensor([[1, 4, 8]])
        pose = torch.randn(1, 3, 16, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            a = model(frames, levels, pose)
            b = model(frames, levels, pose)
        assert torch.equal(a, b)

    def test_film_identity_at_init(self):
        film = FiLM(8, 16)
        h = torch.randn(4, 16)
        assert torch.equal(film(h, torch.randn(4, 8)), h)

    def test_permutation_equivariance(self):
        # permute two frames along with their position ids -> outputs permute
        model = micro_model()
        g = torch.Generator().manual_seed(3)
        frames = torch.randn(1, 3, 3, 8, 8, generator=g)
        levels = torch.tensor([[2, 5, 7]])
        pose = torch.randn(1, 3, 16, generator=g)
        perm = torch.tensor([2, 0, 1])
        with torch.no_grad():
            base = model(frames, levels, pose)
            permuted = model(frames[:, perm], levels[:, perm], pose[:, perm],
                             frame_positions=torch.arange(3)[perm])
        assert torch.allclose(base[:, perm], permuted, atol=1e-6)

    def test_noise_level_sensitivity(self):
        # FiLM is wired per frame: changing one frame's level changes that frame
        model = micro_model()
        with torch.no_grad():
            # move off the zero-initialized FiLM/head point so conditioning flows
            for p in model.parameters():
                p.add_(0.05 * torch.randn_like(p))
        g = torch.Generator().manual_seed(4)
        frames = torch.randn(1, 3, 3, 8, 8, generator=g)
        pose = torch.randn(1, 3, 16, generator=g)
        with torch.no_grad():
            a = model(frames, torch.tensor([[1, 4, 8]]), pose)
            b = model(frames, torch.tensor([[1, 7, 8]]), pose)
        assert (a[0, 1] - b[0, 1]).abs().max() > 0

    def test_attention_reach(self):
        # content of frame 0 influences the prediction at the last frame
        torch.manual_seed(5)
        model = SeqDenoiser(MICRO)
        # the zero-initialized head blocks visibility; nudge it
        with torch.no_grad():
            model.head.weight.normal_(0, 0.05)
        g = torch.Generator().manual_seed(6)
        frames = torch.randn(1, 4, 3, 8, 8, generator=g)
        pose = torch.randn(1, 4, 16, generator=g)
        levels = torch.full((1, 4), 3)
        altered = frames.clone()
        altered[0, 0] += 1.0
        with torch.no_grad():
            a = model(frames, levels, pose)
            b = model(altered, levels, pose)
        assert (a[0, -1] - b[0, -1]).abs().max() > 0

    def test_per_pixel_pose_modes(self):
        for mode, ch in (("plucker", 6), ("ray", 180)):
            cfg = DenoiserConfig(H=8, W=8, max_frames=2, patch=4, width=8, depth_conv=1,
                                 depth_attn=1, heads=1, cond_dim=8, embed_mode=mode)
            torch.manual_seed(0)
            model = SeqDenoiser(cfg)
            frames = torch.randn(1, 2, 3, 8, 8)
            pose = torch.randn(1, 2, ch, 8, 8)
            out = model(frames, torch.zeros(1, 2, dtype=torch.long), pose)
            assert out.shape == frames.shape


def _linear(i, o):
    return i * o + o


class TestCountParameters:
    def test_micro_hand_count(self):
        # per-layer shape arithmetic, summed independently of the implementation
        w, d, p, C = 8, 8, 8, 3  # width, cond_dim, patch, channels
        expected = (
            _linear(3 * 9, w)                       # stem conv 3x3
            + 2 * (2 * w)                           # two group norms
            + 2 * _linear(d, 2 * w)                 # two FiLM projections (conv block)
            + 2 * _linear(w * 9, w)                 # two 3x3 convs
            + _linear(w * p * p, w)                 # patchify conv
            + 4 * w + 1 * w + 1 * w                 # frame/row/col position tables
            + 2 * (2 * w)                           # attn layer norms
            + 2 * _linear(d, 2 * w)                 # attn FiLM projections
            + _linear(w, 3 * w) + _linear(w, w)     # qkv + proj
            + _linear(w, 4 * w) + _linear(4 * w, w) # mlp
            + 2 * _linear(d, d)                     # cond mlp
            + _linear(16, d)                        # pose projection
            + 2 * w                                 # output norm
            + _linear(w, p * p * C)                 # head
        )
        assert count_parameters(MICRO) == expected

    def test_stable_across_runs(self):
        assert count_parameters(MICRO) == count_parameters(MICRO)

    def test_width_scaling_superlinear(self):
        wide = DenoiserConfig(H=8, W=8, max_frames=4, patch=8, width=16, depth_conv=1,
                              depth_attn=1, heads=1, cond_dim=8, embed_mode="global")
        assert count_parameters(wide) > 2 * count_parameters(MICRO)


class TestGradients:
    def test_finite_difference_micro(self):
        # quick 64-bit spot check; the full 200-parameter sweep lives in the
        # acceptance suite
        from s2sf.diffusion import make_schedule, corrupt

        torch.manual_seed(7)
        model = SeqDenoiser(MICRO).double()
        schedule = make_schedule(8)
        g = torch.Generator().manual_seed(8)
        frames = torch.randn(1, 2, 3, 8, 8, generator=g, dtype=torch.float64)
        eps = torch.randn(1, 2, 3, 8, 8, generator=g, dtype=torch.float64)
        levels = torch.tensor([[2, 6]])
        pose = torch.randn(1, 2, 16, generator=g, dtype=torch.float64)
        noisy = corrupt(frames, levels, schedule, eps)

        def loss_fn():
            return (model(noisy, levels, pose) - eps).pow(2).mean()

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(0)
        params = [p for p in model.parameters() if p.grad is not None and p.grad.abs().max() > 0]
        for _ in range(20):
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            h = 1e-3
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                lp = loss_fn().item()
                p[idx] = orig - h
                lm = loss_fn().item()
                p[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = p.grad[idx].item()
            assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd), abs(an))
