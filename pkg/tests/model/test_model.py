from unittest import mock

import numpy as np

from claip_emo import enums
from claip_emo.backbones.encoders import encode_audio, encode_frames
from claip_emo.errors import AggregationError, InvalidConfigValueError, ShapeError
from claip_emo.model.aggregation import AudioAggregator, VisualAggregator, aggregate_audio, aggregate_visual
from claip_emo.model.claip_model import (
    GRADCHECK_ENTRIES, ClipBatch, build_model, modality_mask, random_batch, run_gradient_check)
from claip_emo.model.fusion import FusionHead, fuse_predict
from claip_emo.numerics.gradcheck import check_gradients
from claip_emo.numerics.tensor import Tensor, default_dtype
from tests.claip_test import ClaipTestCase


class TestAggregation(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.rng = np.random.default_rng(0)

    def _visual(self, mode, frames=4):
        return VisualAggregator(mode=mode, frames=frames, dim=16, num_heads=2, mlp_ratio=2.0,
                                rng=np.random.default_rng(1))

    def test_mean_pooling_is_order_free(self):
        agg = self._visual(enums.AggregationMode.mean.value)
        x = self.rng.normal(size=(4, 16))
        pooled = agg(Tensor(x)).data
        assert np.allclose(pooled, x.mean(axis=0), atol=1e-6)
        assert np.allclose(agg(Tensor(x[::-1].copy())).data, pooled, atol=1e-6)
        assert agg.num_parameters() == 0

    def test_mean_of_one_frame_is_identity(self):
        agg = self._visual(enums.AggregationMode.mean.value, frames=1)
        x = self.rng.normal(size=(1, 16)).astype(np.float32)
        assert np.array_equal(agg(Tensor(x)).data, x[0])

    def test_temporal_layer_sees_frame_order(self):
        agg = self._visual(enums.AggregationMode.transformer.value)
        x = self.rng.normal(size=(4, 16))
        assert agg(Tensor(x)).shape == (16,)
        assert not np.allclose(agg(Tensor(x)).data, agg(Tensor(x[::-1].copy())).data)

    def test_temporal_layer_without_positions_is_order_free(self):
        with default_dtype(np.float64):
            agg = self._visual(enums.AggregationMode.transformer.value)
            agg.pos_embed.data = np.zeros_like(agg.pos_embed.data)
            x = self.rng.normal(size=(2, 4, 16))
            perm = [2, 0, 3, 1]
            assert np.allclose(agg(Tensor(x)).data, agg(Tensor(x[:, perm])).data, atol=1e-10)

    def test_frame_count_mismatch(self):
        agg = self._visual(enums.AggregationMode.transformer.value)
        with self.assertRaises(AggregationError):
            aggregate_visual(Tensor(np.zeros((3, 16))), agg=agg)

    def test_audio_pooling(self):
        mean = AudioAggregator(mode=enums.AggregationMode.mean.value, max_tokens=4, dim=16, num_heads=2,
                               mlp_ratio=2.0)
        x = self.rng.normal(size=(3, 16))
        assert np.allclose(mean(Tensor(x)).data, x.mean(axis=0), atol=1e-6)
        with self.assertRaises(AggregationError):
            aggregate_audio(Tensor(np.zeros((0, 16))), agg=mean)
        trans = AudioAggregator(mode=enums.AggregationMode.transformer.value, max_tokens=4, dim=16,
                                num_heads=2, mlp_ratio=2.0)
        assert trans(Tensor(x)).shape == (16,)
        with self.assertRaises(AggregationError):
            aggregate_audio(Tensor(np.zeros((5, 16))), agg=trans)


class TestFusion(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        rng = np.random.default_rng(0)
        self.z_visual = Tensor(rng.normal(size=(5, 12)))
        self.z_audio = Tensor(rng.normal(size=(5, 8)))

    def _head(self, mode):
        return FusionHead(mode=mode, visual_dim=12, audio_dim=8, num_classes=4, rng=np.random.default_rng(1))

    def test_probabilities_for_every_mode(self):
        for mode in enums.FusionMode:
            with self.subTest(mode=mode.value):
                probs = fuse_predict(self.z_visual, self.z_audio, head=self._head(mode.value)).data
                assert probs.shape == (5, 4)
                assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_fused_widths(self):
        assert self._head(enums.FusionMode.concat_linear.value).fused(self.z_visual, self.z_audio).shape == (5, 20)
        assert self._head(enums.FusionMode.additive.value).fused(self.z_visual, self.z_audio).shape == (5, 8)
        assert self._head(enums.FusionMode.gated.value).feature_dim == 8

    def test_open_gate_passes_the_visual_path(self):
        head = self._head(enums.FusionMode.gated.value)
        head.gate.weight.data = np.zeros_like(head.gate.weight.data)
        head.gate.bias.data = np.full_like(head.gate.bias.data, 50.0)
        fused = head.fused(self.z_visual, self.z_audio).data
        assert np.allclose(fused, head.proj_visual(self.z_visual).data, atol=1e-5)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            self._head(enums.FusionMode.additive.value).fused(self.z_audio, self.z_audio)


class TestClaipModel(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.cfg = self.tiny_config()
        self.batch = random_batch(self.cfg, batch_size=3, rng=np.random.default_rng(0))

    def test_logits_and_features(self):
        model = build_model(self.cfg).eval()
        assert model(self.batch).shape == (3, 3)
        assert model.features(self.batch).shape == (3, 64)
        assert np.allclose(model.predict_proba(self.batch).sum(axis=-1), 1.0, atol=1e-6)

    def test_batch_from_samples(self):
        dataset = self.tiny_dataset(self.cfg)
        samples = list(dataset)[:4]
        batch = ClipBatch.from_samples(samples)
        assert len(batch) == 4
        assert batch.frames.shape == (4, 2, 16, 16, 1)
        assert list(batch.labels) == [s.label for s in samples]
        preds = build_model(self.cfg).predict_labels(samples, batch_size=3)
        assert preds.shape == (4,)

    def test_single_modality_runs_one_branch(self):
        for modality, frames_calls, audio_calls in (("A", 0, 1), ("V", 1, 0), ("AV", 1, 1)):
            with self.subTest(modality=modality):
                model = build_model(self.tiny_config(modality=modality)).eval()
                with mock.patch("claip_emo.model.claip_model.encode_frames", wraps=encode_frames) as frames_mock, \
                        mock.patch("claip_emo.model.claip_model.encode_audio", wraps=encode_audio) as audio_mock:
                    logits = model(self.batch)
                assert logits.shape == (3, 3)
                assert frames_mock.call_count == frames_calls
                assert audio_mock.call_count == audio_calls

    def test_single_modality_widths(self):
        audio_only = build_model(self.tiny_config(modality=enums.Modality.audio.value))
        assert audio_only.visual is None and audio_only.agg_visual is None
        assert audio_only.features(self.batch).shape == (3, 32)
        assert len(audio_only.adapters.visual) == 0 and len(audio_only.adapters.audio) == 6

    def test_mask_shares_the_encoders(self):
        model = build_model(self.cfg)
        visual_only = modality_mask(model, mode=enums.Modality.visual.value)
        assert visual_only.visual is model.visual
        assert visual_only.audio is None
        assert modality_mask(model, mode=enums.Modality.audiovisual.value) is model
        with self.assertRaises(InvalidConfigValueError):
            modality_mask(visual_only, mode=enums.Modality.audio.value)

    def test_seed_changes_only_the_trainable_init(self):
        a = dict(build_model(self.cfg, seed=1).named_parameters())
        b = dict(build_model(self.cfg, seed=2).named_parameters())
        assert np.array_equal(a["visual.pos_embed"].data, b["visual.pos_embed"].data)
        assert not np.array_equal(a["head.classifier.weight"].data, b["head.classifier.weight"].data)

    def test_gradient_check(self):
        with mock.patch("claip_emo.model.claip_model.check_gradients", wraps=check_gradients) as checker:
            report = run_gradient_check(seed=0)
        assert checker.call_args.kwargs["max_entries"] == GRADCHECK_ENTRIES
        assert report.passed(1e-4)
        assert any(name.endswith("lora_A") for name in report.errors)
