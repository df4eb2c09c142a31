import shutil
import tempfile
import unittest

from claip_emo import enums
from claip_emo.config import RunConfig
from claip_emo.harness.synthetic import DatasetSpec, SyntheticDataset, generate


class ClaipTestCase(unittest.TestCase):
    """Tiny end-to-end geometry: depth-1 width-32 encoders, 2 frames of
    16x16, 0.2 s of audio (two spectrogram patches), 3 classes."""

    TINY_OVERRIDES = {
        "preset": enums.BackbonePreset.toy.value,
        "clip.frames": 2,
        "clip.duration": 0.2,
        "visual.image_size": 16,
        "audio_encoder.max_patches": 8,
        "lora.rank": 2,
        "data.num_classes": 3,
        "data.clips_per_class": 5,
        "train.epochs": 2,
        "train.batch_size": 4,
        "train.lr_peak": 1e-3,
    }

    def setUp(self) -> None:
        self.tmp_dir = tempfile.mkdtemp(prefix="claip_test_")

    def tearDown(self) -> None:
        shutil.rmtree(self.tmp_dir, ignore_errors=True)

    @classmethod
    def tiny_config(cls, **overrides) -> RunConfig:
        """Keyword overrides use ``__`` for the section dot: train__epochs=0."""
        dotted = {k.replace("__", "."): v for k, v in overrides.items()}
        return RunConfig().with_overrides({**cls.TINY_OVERRIDES, **dotted})

    @staticmethod
    def tiny_dataset(cfg: RunConfig) -> SyntheticDataset:
        return generate(DatasetSpec.from_config(cfg))

    @classmethod
    def tiny_cli_args(cls, **overrides) -> list:
        args = []
        for key, value in {**cls.TINY_OVERRIDES, **{k.replace("__", "."): v for k, v in overrides.items()}}.items():
            args.extend(["--set", f"{key}={value}"])
        return args
