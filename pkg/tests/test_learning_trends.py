"""Empirical trend checks. The desk-scale ones take tens of minutes on a
laptop CPU, so they only run with CLAIP_RUN_SLOW=1; the toy-scale ones
always run."""
import os
import unittest

import numpy as np

from claip_emo import enums, utils
from claip_emo.config import RunConfig, load_run_config
from claip_emo.enums import EnvVars, HistoryColumn
from claip_emo.harness.evaluate import cross_validate, evaluate
from claip_emo.harness.folds import make_folds
from claip_emo.harness.synthetic import Carrier, DatasetSpec, generate
from claip_emo.model.claip_model import ClipBatch, build_model
from claip_emo.parallel import get_threads
from claip_emo.training.trainer import train
from tests.claip_test import ClaipTestCase

DESK_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "desk_scale.cfg")
SEEDS = (0, 1, 2)


def mean_war(cfg: RunConfig, dataset, folds) -> float:
    return cross_validate(cfg, dataset, folds, threads=get_threads()).summary()["war_mean"]


@unittest.skipUnless(utils.env_flag_is_set(EnvVars.CLAIP_RUN_SLOW), "set CLAIP_RUN_SLOW=1 to run")
class TestLearningTrends(unittest.TestCase):

    def _data(self, cfg: RunConfig):
        dataset = generate(DatasetSpec.from_config(cfg))
        return dataset, make_folds(dataset.ids, dataset.labels, n_folds=cfg.data.n_folds, seed=cfg.seed)

    def test_adapted_fusion_beats_frozen_and_single_modality(self):
        passed = 0
        for seed in SEEDS:
            cfg = load_run_config(path=DESK_CONFIG, seed=seed)
            dataset, folds = self._data(cfg)
            av = mean_war(cfg, dataset, folds)
            frozen = mean_war(cfg.with_overrides({"lora.rank": 0}), dataset, folds)
            audio = mean_war(cfg.with_overrides({"modality": enums.Modality.audio.value}), dataset, folds)
            visual = mean_war(cfg.with_overrides({"modality": enums.Modality.visual.value}), dataset, folds)
            ok = av >= 0.85 and av - frozen >= 0.05 and av - max(audio, visual) >= 0.02
            print(f"seed={seed} AV={av:.4f} frozen={frozen:.4f} A={audio:.4f} V={visual:.4f} ok={ok}")
            passed += ok
        assert passed >= 2

    def test_temporal_layer_beats_mean_pooling_on_ordered_data(self):
        cfg = load_run_config(path=DESK_CONFIG, overrides={"data.temporal_order": True})
        dataset, folds = self._data(cfg)
        trans = mean_war(cfg, dataset, folds)
        mean = mean_war(cfg.with_overrides({"agg.visual": enums.AggregationMode.mean.value}), dataset, folds)
        assert trans - mean >= 0.05, (trans, mean)


class TestTrendsAtToyScale(ClaipTestCase):
    """Reduced versions of the trend checks above; seconds, always run."""

    def fitted(self, cfg: RunConfig, samples):
        model = build_model(cfg)
        result = train(model, samples, cfg=cfg)
        return model, result.history

    def test_fusion_beats_either_modality_when_each_clip_has_one(self):
        cfg = self.tiny_config(data__num_classes=2, data__clips_per_class=12, data__rho=0.0, data__sigma_v=0.0,
                               data__sigma_a=0.0, lora__rank=0, agg__visual="mean", agg__audio="mean",
                               train__epochs=30, train__lr_peak=1e-2)
        samples = list(self.tiny_dataset(cfg))

        def best_single_modality_war(blank_carrier: str) -> float:
            # clips whose only cue is missing look identical, so one class is predicted for all of them
            blank = np.asarray([s.label for s in samples if s.carrier == blank_carrier], dtype=np.int64)
            return (len(samples) - blank.size + np.bincount(blank, minlength=2).max()) / len(samples)

        visual_bound = best_single_modality_war(Carrier.audio_only)
        audio_bound = best_single_modality_war(Carrier.video_only)
        assert max(visual_bound, audio_bound) < 1.0

        wars = {}
        for modality in enums.Modality:
            model, _ = self.fitted(cfg.with_overrides({"modality": modality.value}), samples)
            wars[modality.value] = evaluate(model, samples).war
        assert wars["AV"] > max(visual_bound, audio_bound), wars
        assert wars["AV"] > wars["A"] and wars["AV"] > wars["V"], wars

    def test_only_the_temporal_layer_sees_frame_order(self):
        cfg = self.tiny_config(modality=enums.Modality.visual.value, data__num_classes=2, data__clips_per_class=4,
                               data__temporal_order=True, data__rho=1.0, data__sigma_v=0.0, data__sigma_a=0.0,
                               lora__rank=0, train__epochs=40, train__lr_peak=1e-2)
        samples = list(self.tiny_dataset(cfg))
        rising = next(s for s in samples if s.label == 0)
        falling = next(s for s in samples if s.label == 1)
        assert np.array_equal(rising.frames, falling.frames[::-1])

        pooled = build_model(cfg.with_overrides({"agg.visual": enums.AggregationMode.mean.value})).eval()
        z = pooled.features(ClipBatch.from_samples([rising, falling])).data
        assert np.allclose(z[0], z[1], rtol=0, atol=1e-5)

        model, _ = self.fitted(cfg, samples)
        assert evaluate(model, samples).war > 0.5

    def test_adapters_lower_the_training_loss(self):
        cfg = self.tiny_config(data__clips_per_class=6, lora__dropout=0.0, train__epochs=15, train__lr_peak=3e-3)
        samples = list(self.tiny_dataset(cfg))
        frozen_cfg, adapted_cfg = cfg.with_overrides({"lora.rank": 0}), cfg.with_overrides({"lora.rank": 8})
        batch = ClipBatch.from_samples(samples[:4])
        start = [build_model(c).eval()(batch).data for c in (frozen_cfg, adapted_cfg)]
        assert np.allclose(start[0], start[1], rtol=0, atol=1e-6)
        _, frozen = self.fitted(frozen_cfg, samples)
        _, adapted = self.fitted(adapted_cfg, samples)
        assert adapted[HistoryColumn.loss].iloc[-3:].mean() < frozen[HistoryColumn.loss].iloc[-3:].mean()
