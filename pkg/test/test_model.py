import unittest
import numpy as np
import torch
import torch.nn as nn
from numpy.testing import assert_array_equal, assert_allclose
from pyvpip.inference import GenLVPredictor, forward_full, tiled_forward
from pyvpip.nets.blocks import (ChannelAttention, WindowAttention, PromptCrossAttention,
                                TransposedSelfAttentionBlock, SpatialSelfAttentionBlock,
                                PromptCrossAttentionBlock)
from pyvpip.nets.genlv import (MODEL_VARIANTS, GenLV, ModelConfig, build_model, count_params, model_variant)
from pyvpip.tasks import PromptPair


def tiny_config(**kwargs):
    doc = dict(num_blocks=[1, 1, 1, 1], channels=[8, 16, 24, 32], heads=[1, 2, 2, 4], prompt_channels=4,
               window_size=2, image_size=16, prompt_blocks=1)
    doc.update(kwargs)
    return ModelConfig(**doc)


def random_prompt(rng, size):
    return PromptPair(rng.uniform(0, 1, (size, size, 3)), rng.uniform(0, 1, (size, size, 3)), None)


class TestModelConfig(unittest.TestCase):
    def test_invalid(self):
        with self.assertRaises(ValueError):
            tiny_config(channels=[8, 8, 24, 32]).validate()
        with self.assertRaises(ValueError):
            tiny_config(heads=[1, 3, 2, 4]).validate()
        with self.assertRaises(ValueError):
            tiny_config(image_size=20).validate()
        with self.assertRaises(ValueError):
            tiny_config(window_size=3).validate()
        with self.assertRaises(ValueError):
            tiny_config(num_blocks=[1, 1, 1]).validate()
        with self.assertRaises(ValueError):
            model_variant('desk-giant')
        with self.assertRaises(ValueError):
            ModelConfig.from_dict({'depth': 3})

    def test_variants(self):
        for name in MODEL_VARIANTS:
            config = model_variant(name)
            self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        self.assertEqual(model_variant('desk-base', window_size=2).window_size, 2)

    def test_count_params(self):
        self.assertEqual(count_params({}), 0)
        self.assertEqual(count_params(nn.Conv2d(3, 8, 3)), 224)
        self.assertEqual(count_params({'a': np.zeros((2, 3)), 'b': torch.zeros(4)}), 10)
        self.assertGreater(count_params(GenLV(model_variant('desk-huge'))),
                           count_params(GenLV(model_variant('desk-base'))))


class TestChannelAttention(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)

    def test_rows_sum_to_one(self):
        attn = ChannelAttention(8, 2)
        probs = attn.attention_probs(torch.randn(2, 8, 5, 6))
        self.assertEqual(tuple(probs.shape), (2, 2, 4, 4))
        torch.testing.assert_close(probs.sum(-1), torch.ones(2, 2, 4), atol=1e-6, rtol=0)

    def identity_attention(self, dim, num_heads=1):
        attn = ChannelAttention(dim, num_heads, bias=False, dwconv=False).double()
        with torch.no_grad():
            attn.qkv.weight.copy_(torch.eye(dim, dtype=torch.float64).repeat(3, 1)[:, :, None, None])
            attn.project_out.weight.copy_(torch.eye(dim, dtype=torch.float64)[:, :, None, None])
        return attn

    def test_token_permutation(self):
        dim = 6
        for num_heads in (1, 2):
            attn = self.identity_attention(dim, num_heads)
            x = torch.randn(1, dim, 4, 4, dtype=torch.float64)
            perm = torch.randperm(16)
            x_perm = x.flatten(2)[:, :, perm].reshape(1, dim, 4, 4)
            torch.testing.assert_close(attn.core(x_perm).flatten(2), attn.core(x).flatten(2)[:, :, perm])

    def test_channel_permutation(self):
        dim = 6
        attn = self.identity_attention(dim)
        x = torch.randn(1, dim, 4, 4, dtype=torch.float64)
        perm = torch.randperm(dim)
        torch.testing.assert_close(attn(x[:, perm]), attn(x)[:, perm])

    def test_forward_uses_probs(self):
        attn = ChannelAttention(8, 2).double()
        x = torch.randn(2, 8, 3, 5, dtype=torch.float64)
        _, _, v = attn._qkv(x)
        expected = (attn.attention_probs(x) @ v).reshape(2, 8, 3, 5)
        torch.testing.assert_close(attn.core(x), expected)
        torch.testing.assert_close(attn(x), attn.project_out(expected))

    def test_zero_in_zero_out(self):
        block = TransposedSelfAttentionBlock(8, 2, bias=False)
        out = block(torch.zeros(1, 8, 4, 4))
        assert_array_equal(out.detach().numpy(), 0.)


class TestWindowAttention(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(1)

    def test_rows_sum_to_one(self):
        attn = WindowAttention(8, 2, 2)
        probs = attn.attention_probs(torch.randn(1, 8, 4, 6))
        # 6 windows of 4 tokens
        self.assertEqual(tuple(probs.shape), (6, 2, 4, 4))
        torch.testing.assert_close(probs.sum(-1), torch.ones(6, 2, 4), atol=1e-6, rtol=0)

    def test_full_window_is_global(self):
        dim, heads = 8, 2
        attn = WindowAttention(dim, heads, 4).double()
        x = torch.randn(1, dim, 4, 4, dtype=torch.float64)
        tokens = x.flatten(2).transpose(1, 2)[0]
        q, k, v = attn.qkv(tokens).chunk(3, dim=-1)
        d = dim // heads
        outs = []
        for i in range(heads):
            qi, ki, vi = q[:, i * d:(i + 1) * d], k[:, i * d:(i + 1) * d], v[:, i * d:(i + 1) * d]
            outs.append(torch.softmax(qi @ ki.T / np.sqrt(d), dim=-1) @ vi)
        expected = attn.proj(torch.cat(outs, dim=-1)).T.reshape(1, dim, 4, 4)
        torch.testing.assert_close(attn(x), expected)

    def test_tile_independence(self):
        attn = WindowAttention(8, 2, 2).double()
        x = torch.randn(1, 8, 4, 6, dtype=torch.float64)
        y = x.clone()
        y[:, :, :2, :2] += 1.
        out_x, out_y = attn(x), attn(y)
        mask = torch.ones(4, 6, dtype=torch.bool)
        mask[:2, :2] = False
        torch.testing.assert_close(out_x[..., mask], out_y[..., mask], atol=1e-12, rtol=0)
        self.assertFalse(torch.allclose(out_x[..., :2, :2], out_y[..., :2, :2]))

    def test_indivisible(self):
        with self.assertRaises(ValueError):
            WindowAttention(8, 2, 3)(torch.randn(1, 8, 4, 4))


class TestPromptCrossAttention(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(2)
        self.attn = PromptCrossAttention(8, 2).double()

    def randn(self, *shape):
        return torch.randn(*shape, dtype=torch.float64)

    def test_rows_sum_to_one(self):
        probs = self.attn.attention_probs(self.randn(2, 8, 3, 3), self.randn(2, 8, 3, 3))
        self.assertEqual(tuple(probs.shape), (2, 2, 9, 9))
        torch.testing.assert_close(probs.sum(-1), torch.ones(2, 2, 9, dtype=torch.float64), atol=1e-6, rtol=0)

    def test_single_token(self):
        z, z_s, z_t = self.randn(1, 8, 1, 1), self.randn(1, 8, 1, 1), self.randn(1, 8, 1, 1)
        expected = self.attn.proj(self.attn.to_v(z_t[:, :, 0, 0]))
        torch.testing.assert_close(self.attn(z, z_s, z_t)[:, :, 0, 0], expected)

    def test_constant_source(self):
        z, z_t = self.randn(1, 8, 3, 3), self.randn(1, 8, 3, 3)
        z_s = self.randn(1, 8, 1, 1).expand(1, 8, 3, 3)
        probs = self.attn.attention_probs(z, z_s)
        torch.testing.assert_close(probs, torch.full_like(probs, 1. / 9))
        out = self.attn(z, z_s, z_t).flatten(2)
        mean_value = self.attn.proj(self.attn.to_v(z_t.flatten(2).transpose(1, 2)).mean(dim=1))
        torch.testing.assert_close(out, mean_value[:, :, None].expand_as(out))

    def test_query_gradient(self):
        z, z_s, z_t = self.randn(1, 8, 2, 2), self.randn(1, 8, 2, 2), self.randn(1, 8, 2, 2)

        def loss():
            return (self.attn(z, z_s, z_t) ** 2).sum()

        weight = self.attn.to_q.weight
        grad, = torch.autograd.grad(loss(), weight)
        eps = 1e-6
        numeric = torch.zeros_like(grad)
        for i in range(weight.shape[0]):
            for j in range(weight.shape[1]):
                with torch.no_grad():
                    weight[i, j] += eps
                    up = loss().item()
                    weight[i, j] -= 2 * eps
                    down = loss().item()
                    weight[i, j] += eps
                numeric[i, j] = (up - down) / (2 * eps)
        self.assertLess(((numeric - grad).norm() / grad.norm()).item(), 1e-4)

    def test_prompt_sensitivity(self):
        z, z_s, z_t = self.randn(1, 8, 3, 3), self.randn(1, 8, 3, 3), self.randn(1, 8, 3, 3)
        out = self.attn(z, z_s, z_t)
        self.assertFalse(torch.allclose(out, self.attn(z, self.randn(1, 8, 3, 3), z_t)))
        self.assertFalse(torch.allclose(out, self.attn(z, z_s, self.randn(1, 8, 3, 3))))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            self.attn(self.randn(1, 8, 3, 3), self.randn(1, 8, 2, 2), self.randn(1, 8, 3, 3))
        with self.assertRaises(ValueError):
            self.attn(self.randn(1, 8, 3, 3), self.randn(1, 8, 3, 3), self.randn(1, 8, 3, 2))


class TestGradients(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(3)

    def randn(self, *shape):
        return torch.randn(*shape, dtype=torch.float64, requires_grad=True)

    def test_blocks(self):
        for _ in range(5):
            tsab = TransposedSelfAttentionBlock(4, 2).double()
            self.assertTrue(torch.autograd.gradcheck(tsab, (self.randn(1, 4, 4, 4),), rtol=1e-3))
            ssab = SpatialSelfAttentionBlock(4, 2, 2).double()
            self.assertTrue(torch.autograd.gradcheck(ssab, (self.randn(1, 4, 4, 4),), rtol=1e-3))
            pcab = PromptCrossAttentionBlock(4, 2).double()
            self.assertTrue(torch.autograd.gradcheck(
                pcab, (self.randn(1, 4, 2, 2), self.randn(1, 4, 2, 2), self.randn(1, 4, 2, 2)), rtol=1e-3))

    def small_backbone(self, seed):
        config = tiny_config(channels=[4, 8, 12, 16], prompt_channels=2, zero_head=False)
        return build_model(config, seed).double()

    def rand_image(self, requires_grad=False):
        return torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=requires_grad)

    def test_restore(self):
        for seed in range(5):
            torch.manual_seed(seed)
            model = self.small_backbone(seed)
            with torch.no_grad():
                z_s, z_t = model.prompt_encode(self.rand_image(), self.rand_image())
            x = self.rand_image(requires_grad=True)
            self.assertTrue(torch.autograd.gradcheck(lambda t: model.restore(t, z_s, z_t), (x,)), seed)

    def test_restore_weights(self):
        eps = 1e-6
        for seed in range(5):
            torch.manual_seed(seed)
            model = self.small_backbone(seed)
            x, source, target = self.rand_image(), self.rand_image(), self.rand_image()
            direction = torch.randn(1, 3, 16, 16, dtype=torch.float64)

            def loss():
                return (model.restore(x, *model.prompt_encode(source, target)) * direction).sum()

            weights = (model.stem.weight, model.latent[0].pcab.attn.to_q.weight, model.prompt_encoder.proj.weight)
            for weight in weights:
                grad, = torch.autograd.grad(loss(), weight)
                flat = weight.data.view(-1)
                numeric = torch.zeros(flat.numel(), dtype=torch.float64)
                for i in range(flat.numel()):
                    flat[i] += eps
                    up = loss().item()
                    flat[i] -= 2 * eps
                    down = loss().item()
                    flat[i] += eps
                    numeric[i] = (up - down) / (2 * eps)
                error = (numeric - grad.view(-1)).norm() / grad.norm()
                self.assertLess(error.item(), 1e-4, seed)


class TestGenLV(unittest.TestCase):
    def setUp(self):
        self.config = tiny_config()
        self.rng = np.random.default_rng(4)

    def test_build_deterministic(self):
        a = build_model(self.config, 7).state_dict()
        b = build_model(self.config, 7).state_dict()
        c = build_model(self.config, 8).state_dict()
        for name in a:
            torch.testing.assert_close(a[name], b[name], atol=0, rtol=0)
        self.assertFalse(all(torch.equal(a[n], c[n]) for n in a))
        self.assertIsInstance(build_model(self.config.to_dict(), 7), GenLV)

    def test_init_ranges(self):
        model = build_model(tiny_config(zero_head=False), 0)
        for name, param in model.named_parameters():
            if name.endswith('temperature'):
                assert_array_equal(param.detach().numpy(), 1.)
            elif name.endswith('bias'):
                assert_array_equal(param.detach().numpy(), 0.)
            elif 'norm' not in name:
                self.assertLessEqual(param.abs().max().item(), 0.04 + 1e-7, name)
        self.assertGreater(model.head.weight.abs().max().item(), 0.)
        assert_array_equal(build_model(self.config, 0).head.weight.detach().numpy(), 0.)

    def test_prompt_encode(self):
        model = build_model(self.config, 0)
        a, b = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
        with torch.no_grad():
            z_s, z_t = model.prompt_encode(a, b)
            z_t2, z_s2 = model.prompt_encode(b, a)
            zeros = model.prompt_encode(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 16, 16))
        self.assertEqual(tuple(z_s.shape), (1, 32, 2, 2))
        torch.testing.assert_close(z_s, z_s2, atol=0, rtol=0)
        torch.testing.assert_close(z_t, z_t2, atol=0, rtol=0)
        self.assertTrue(all(torch.isfinite(z).all() for z in zeros))
        with self.assertRaises(ValueError):
            model.prompt_encode(torch.rand(1, 3, 24, 24), b)
        with self.assertRaises(ValueError):
            model.prompt_encode(torch.rand(1, 1, 16, 16), b)

    def test_identity_at_init(self):
        model = build_model(self.config, 0).double()
        for _ in range(10):
            img = self.rng.uniform(0, 1, (16, 16, 3))
            assert_array_equal(forward_full(img, random_prompt(self.rng, 16), model), img)

    def test_shapes(self):
        for name in ('desk-base', 'desk-large', 'desk-huge'):
            config = model_variant(name)
            model = build_model(config, 0)
            x = torch.rand(1, 3, 64, 64)
            with torch.no_grad():
                skips, h = model.encode(x)
                out = model(x, torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64))
            c = config.channels
            self.assertEqual([tuple(s.shape) for s in skips],
                             [(1, c[0], 64, 64), (1, c[1], 32, 32), (1, c[2], 16, 16)], name)
            self.assertEqual(tuple(h.shape), (1, c[3], 8, 8), name)
            self.assertEqual(tuple(out.shape), (1, 3, 64, 64), name)

    def test_deterministic_forward(self):
        model = build_model(tiny_config(zero_head=False), 0)
        img = self.rng.uniform(0, 1, (16, 16, 3))
        prompt = random_prompt(self.rng, 16)
        out = forward_full(img, prompt, model)
        assert_array_equal(out, forward_full(img, prompt, model))
        self.assertTrue(out.min() >= 0 and out.max() <= 1)

    def test_batch_broadcast(self):
        model = build_model(tiny_config(zero_head=False), 0).double()
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        with torch.no_grad():
            z_s, z_t = model.prompt_encode(torch.rand(1, 3, 16, 16, dtype=torch.float64),
                                           torch.rand(1, 3, 16, 16, dtype=torch.float64))
            out = model.backbone(x, z_s, z_t)
            first = model.backbone(x[:1], z_s, z_t)
        torch.testing.assert_close(out[:1], first)

    def test_wrong_size(self):
        model = build_model(self.config, 0)
        with self.assertRaises(ValueError):
            forward_full(self.rng.uniform(0, 1, (24, 24, 3)), random_prompt(self.rng, 16), model)
        with self.assertRaises(ValueError):
            model(torch.rand(1, 3, 12, 12), torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16))


class TestTiledInference(unittest.TestCase):
    def setUp(self):
        self.model = build_model(tiny_config(), 0).double()
        self.rng = np.random.default_rng(5)

    def test_identity(self):
        prompt = random_prompt(self.rng, 16)
        for shape in [(20, 37, 3), (10, 12, 3), (16, 16, 3)]:
            img = self.rng.uniform(0, 1, shape)
            out = tiled_forward(img, prompt, self.model, overlap=4)
            self.assertEqual(out.shape, shape)
            assert_allclose(out, img, atol=1e-12)

    def test_overlap_range(self):
        prompt = random_prompt(self.rng, 16)
        img = self.rng.uniform(0, 1, (20, 20, 3))
        with self.assertRaises(ValueError):
            tiled_forward(img, prompt, self.model, overlap=16)
        with self.assertRaises(ValueError):
            tiled_forward(img, prompt, self.model, overlap=-1)

    def test_predictor(self):
        model = build_model(tiny_config(zero_head=False), 0)
        predictor = GenLVPredictor(model, overlap=4)
        prompt = random_prompt(self.rng, 16)
        img = self.rng.uniform(0, 1, (16, 16, 3))
        assert_array_equal(predictor(img, prompt), forward_full(img, prompt, model))
        self.assertEqual(predictor(self.rng.uniform(0, 1, (20, 28, 3)), prompt).shape, (20, 28, 3))


if __name__ == '__main__':
    unittest.main()
