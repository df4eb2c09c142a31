import os

import numpy as np

from claip_emo import enums
from claip_emo.adaptation import lora
from claip_emo.backbones.encoders import make_backbone
from claip_emo.backbones.model_registry import resolve_encoder_config
from claip_emo.errors import (
    AlreadyMergedError, CheckpointShapeError, DoubleInjectionError, InvalidConfigValueError, LoraConfigError)
from claip_emo.model.claip_model import build_model, random_batch
from claip_emo.numerics.module import Linear
from claip_emo.numerics.tensor import Tensor
from tests.claip_test import ClaipTestCase


def randomize_b(module, seed: int = 0, std: float = 0.1) -> None:
    rng = np.random.default_rng(seed)
    for name, param in module.named_parameters():
        if name.endswith(".lora_B"):
            param.data = rng.normal(0.0, std, size=param.shape).astype(param.dtype)


class TestLora(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.cfg = self.tiny_config()
        self.visual_config = resolve_encoder_config(self.cfg, kind=enums.EncoderKind.visual.value)
        self.frames = np.random.default_rng(1).uniform(size=(3, 16, 16, 1)).astype(np.float32)

    def _encoder(self):
        return make_backbone(seed=0, config=self.visual_config).eval()

    def test_fresh_adapters_reproduce_the_frozen_model(self):
        adapted = build_model(self.tiny_config()).eval()
        reference = build_model(self.tiny_config(lora__full_finetune=True)).eval()
        batch = random_batch(self.cfg, batch_size=100, rng=np.random.default_rng(0))
        assert np.array_equal(adapted(batch).data, reference(batch).data)

    def test_adapter_shapes_and_counts(self):
        enc = self._encoder()
        adapters = lora.inject(enc, rank=4, alpha=8.0, dropout_p=0.0)
        assert len(adapters) == 6 * self.visual_config.depth
        for _, layer in adapters.layers():
            assert layer.lora_A.shape == (4, layer.in_features)
            assert layer.lora_B.shape == (layer.out_features, 4)
            assert not np.any(layer.lora_B.data)
            assert sum(p.size for _, p in layer.trainable_parameters()) == 4 * (
                layer.in_features + layer.out_features)
        assert all(not p.requires_grad for name, p in enc.named_parameters() if not lora.is_adapter_name(name))

    def test_parameter_names_survive_wrapping(self):
        enc = self._encoder()
        before = {name for name, _ in enc.named_parameters()}
        lora.inject(enc, rank=2, alpha=4.0, dropout_p=0.0)
        after = {name for name, _ in enc.named_parameters()}
        assert before <= after
        assert {n for n in after - before} == {n for n in after if lora.is_adapter_name(n)}

    def test_rank_bounds(self):
        with self.assertRaises(LoraConfigError):
            lora.inject(self._encoder(), rank=33, alpha=1.0, dropout_p=0.0)
        with self.assertRaises(LoraConfigError):
            lora.LoraLinear(Linear(4, 4, rng=np.random.default_rng(0)), rank=-1, alpha=1.0)
        with self.assertRaises(InvalidConfigValueError):
            self.tiny_config(lora__rank=-1)

    def test_rank_zero_still_wraps(self):
        enc = self._encoder()
        adapters = lora.inject(enc, rank=0, alpha=1.0, dropout_p=0.0)
        assert len(adapters) == 6 * self.visual_config.depth
        assert adapters.num_trainable() == 0

    def test_double_injection(self):
        enc = self._encoder()
        lora.inject(enc, rank=2, alpha=4.0, dropout_p=0.0)
        with self.assertRaises(DoubleInjectionError):
            lora.inject(enc, rank=2, alpha=4.0, dropout_p=0.0)

    def test_inject_needs_a_frozen_encoder(self):
        enc = self._encoder().unfreeze()
        with self.assertRaises(LoraConfigError):
            lora.inject(enc, rank=2, alpha=4.0, dropout_p=0.0)
        adapted = self._encoder()
        lora.inject(adapted, rank=2, alpha=4.0, dropout_p=0.0)
        with self.assertRaises(LoraConfigError):
            lora.enable_full_finetune(adapted)

    def test_merge_matches_the_adapted_forward(self):
        enc = self._encoder()
        lora.inject(enc, rank=4, alpha=8.0, dropout_p=0.0)
        randomize_b(enc)
        adapted = enc(self.frames).data
        assert lora.merge_all(enc) == 6 * self.visual_config.depth
        assert not lora.has_adapters(enc)
        merged = enc.eval()(self.frames).data
        assert np.allclose(adapted, merged, atol=1e-5)

    def test_merge_single_layer(self):
        base = Linear(6, 5, rng=np.random.default_rng(0))
        layer = lora.LoraLinear(base, rank=2, alpha=4.0, rng=np.random.default_rng(1))
        layer.lora_B.data = np.random.default_rng(2).normal(size=layer.lora_B.shape).astype(np.float32)
        x = Tensor(np.random.default_rng(3).normal(size=(4, 6)))
        merged = lora.merge(layer)
        assert isinstance(merged, Linear)
        assert np.allclose(layer.eval()(x).data, merged(x).data, atol=1e-5)
        with self.assertRaises(AlreadyMergedError):
            lora.merge(merged)

    def test_rank_zero_merge_warns(self):
        layer = lora.LoraLinear(Linear(4, 4, rng=np.random.default_rng(0)), rank=0, alpha=1.0)
        with self.assertLogs("claip_emo.adaptation.lora", level="WARNING"):
            merged = lora.merge(layer)
        assert isinstance(merged, Linear)
        assert merged.weight is layer.weight

    def test_dropout_only_in_train_mode(self):
        layer = lora.LoraLinear(Linear(8, 8, rng=np.random.default_rng(0)), rank=4, alpha=8.0,
                                dropout_p=0.5, rng=np.random.default_rng(1))
        layer.lora_B.data = np.random.default_rng(2).normal(size=layer.lora_B.shape).astype(np.float32)
        x = Tensor(np.random.default_rng(3).normal(size=(16, 8)))
        layer.eval()
        first, second = layer(x).data, layer(x).data
        assert np.array_equal(first, second)
        expected = x.data @ layer.effective_weight().T + layer.bias.data
        assert np.allclose(first, expected, atol=1e-4)
        layer.train()
        assert not np.allclose(layer(x).data, first)

    def test_adapter_checkpoint_round_trip(self):
        model = build_model(self.cfg)
        randomize_b(model, seed=5)
        path = os.path.join(self.tmp_dir, "adapters.ckpt")
        written = lora.save_adapters(model, path)
        assert written == 2 * len(model.adapters)

        fresh = build_model(self.cfg)
        assert lora.load_adapters(fresh, path) == written
        theirs = dict(fresh.named_parameters())
        for name, param in lora.adapter_parameters(model).items():
            assert np.array_equal(param.data, theirs[name].data), name

    def test_adapter_checkpoint_rank_mismatch(self):
        path = os.path.join(self.tmp_dir, "adapters.ckpt")
        lora.save_adapters(build_model(self.cfg), path)
        with self.assertRaises(CheckpointShapeError):
            lora.load_adapters(build_model(self.tiny_config(lora__rank=4)), path)
