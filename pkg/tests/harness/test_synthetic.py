import json
import os

import numpy as np

from claip_emo import enums
from claip_emo.audio.frontend import AudioFrontend
from claip_emo.enums import ArtifactName
from claip_emo.errors import DataError, DatasetSpecError
from claip_emo.harness.dataset_io import load_dataset, save_dataset, uniform_frame_indices
from claip_emo.harness.evaluate import RawFeatureReadout, evaluate, raw_modality_features
from claip_emo.harness.folds import make_folds, train_eval_split
from claip_emo.harness.synthetic import Carrier, DatasetSpec, generate
from tests.claip_test import ClaipTestCase


def small_spec(**kwargs) -> DatasetSpec:
    params = dict(num_classes=3, class_counts=[6, 6, 6], frames=2, image_size=16, duration=0.2, seed=0)
    params.update(kwargs)
    return DatasetSpec(**params)


class TestSynthetic(ClaipTestCase):

    def test_same_spec_same_data(self):
        assert generate(small_spec()).checksum() == generate(small_spec()).checksum()
        assert generate(small_spec()).checksum() != generate(small_spec(seed=1)).checksum()

    def test_shapes_and_ranges(self):
        dataset = generate(small_spec(class_counts=[4, 6, 2]))
        assert len(dataset) == 12
        assert np.array_equal(np.bincount(dataset.labels), [4, 6, 2])
        assert len(set(dataset.ids)) == 12
        for sample in dataset:
            assert sample.frames.shape == (2, 16, 16, 1) and sample.frames.dtype == np.float32
            assert sample.frames.min() >= 0.0 and sample.frames.max() <= 1.0
            assert len(sample.waveform) == 3200
            assert np.abs(sample.waveform.samples).max() <= 1.0

    def test_from_config(self):
        cfg = self.tiny_config(data__class_counts="2, 3, 4")
        spec = DatasetSpec.from_config(cfg)
        assert spec.class_counts == [2, 3, 4] and spec.frames == 2 and spec.image_size == 16

    def test_noiseless_frames_are_separable_by_nearest_centroid(self):
        dataset = generate(small_spec(sigma_v=0.0, sigma_a=0.0, rho=1.0))
        x = np.stack([s.frames.reshape(-1) for s in dataset])
        y = dataset.labels
        centroids = np.stack([x[y == k].mean(axis=0) for k in range(3)])
        distances = ((x[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
        assert np.array_equal(np.argmin(distances, axis=1), y)

    def test_complementary_clips_blank_one_modality(self):
        dataset = generate(small_spec(class_counts=[40, 40, 40], sigma_v=0.0, sigma_a=0.0, rho=0.5))
        carriers = [s.carrier for s in dataset]
        for carrier in (Carrier.both, Carrier.audio_only, Carrier.video_only):
            assert carrier in carriers
        both_share = carriers.count(Carrier.both) / len(carriers)
        assert 0.35 < both_share < 0.65
        for sample in dataset:
            if sample.carrier == Carrier.audio_only:
                assert np.all(sample.frames == 0.5)
            if sample.carrier == Carrier.video_only:
                assert not np.any(sample.waveform.samples)

    def test_temporal_pairs_differ_only_in_order(self):
        spec = small_spec(num_classes=4, class_counts=[3] * 4, sigma_v=0.0, rho=1.0, temporal_order=True,
                          frames=4)
        dataset = generate(spec)
        rising = next(s for s in dataset if s.label == 0)
        falling = next(s for s in dataset if s.label == 1)
        assert np.allclose(rising.frames[::-1], falling.frames)
        assert not np.allclose(rising.frames, falling.frames)

    def test_spec_errors(self):
        with self.assertRaises(DatasetSpecError):
            generate(small_spec(temporal_order=True))
        with self.assertRaises(DatasetSpecError):
            generate(small_spec(class_counts=[1, 1]))
        with self.assertRaises(DatasetSpecError):
            generate(small_spec(rho=1.5))

    def test_fused_readout_beats_single_modality_readouts(self):
        dataset = generate(small_spec(num_classes=4, class_counts=[80] * 4, sigma_v=0.3, sigma_a=0.1, rho=0.5))
        folds = make_folds(dataset.ids, dataset.labels, n_folds=2, seed=0)
        train_ids, eval_ids = train_eval_split(folds, fold=0)
        train_set, eval_set = dataset.by_ids(train_ids), dataset.by_ids(eval_ids)
        wars = {}
        for modality in enums.Modality:
            readout = RawFeatureReadout(num_classes=4, modality=modality.value, ridge=10.0).fit(train_set)
            wars[modality.value] = evaluate(readout, eval_set, train_ids=train_ids).war
        assert wars["AV"] > wars["A"]
        assert wars["AV"] > wars["V"]

    def test_raw_features_stack_both_modalities(self):
        dataset = generate(small_spec())
        samples = list(dataset)[:3]
        frontend = AudioFrontend()
        visual = raw_modality_features(samples, modality=enums.Modality.visual.value, frontend=frontend)
        audio = raw_modality_features(samples, modality=enums.Modality.audio.value, frontend=frontend)
        both = raw_modality_features(samples, modality=enums.Modality.audiovisual.value, frontend=frontend)
        assert both.shape == (3, visual.shape[1] + audio.shape[1])
        assert np.array_equal(both[:, :visual.shape[1]], visual)
        assert audio.shape[1] == frontend.n_mels


class TestDatasetIO(ClaipTestCase):

    def test_save_and_load_keep_the_checksum(self):
        dataset = generate(small_spec())
        save_dataset(dataset, out_dir=self.tmp_dir)
        with open(os.path.join(self.tmp_dir, ArtifactName.dataset_info), "r", encoding="utf8") as f:
            info = json.load(f)
        assert info["num_clips"] == 18 and info["checksum"] == dataset.checksum()
        loaded = load_dataset(self.tmp_dir)
        assert loaded.ids == dataset.ids
        assert loaded.checksum() == dataset.checksum()
        assert [s.carrier for s in loaded] == [s.carrier for s in dataset]

    def test_load_resamples_frames_and_audio(self):
        save_dataset(generate(small_spec(frames=4)), out_dir=self.tmp_dir)
        loaded = load_dataset(self.tmp_dir, frames=2, duration=0.1)
        assert loaded[0].frames.shape[0] == 2
        assert len(loaded[0].waveform) == 1600

    def test_uniform_frame_indices(self):
        assert list(uniform_frame_indices(10, 4)) == [0, 2, 4, 6]
        assert list(uniform_frame_indices(4, 4)) == [0, 1, 2, 3]
        with self.assertRaises(DataError):
            uniform_frame_indices(3, 4)

    def test_missing_manifest(self):
        with self.assertRaises(DataError):
            load_dataset(self.tmp_dir)

    def test_broken_manifest_line(self):
        save_dataset(generate(small_spec()), out_dir=self.tmp_dir)
        with open(os.path.join(self.tmp_dir, ArtifactName.manifest), "a", encoding="utf8") as f:
            f.write("{not json\n")
        with self.assertRaises(DataError):
            load_dataset(self.tmp_dir)
