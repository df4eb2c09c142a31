import os
import struct

import numpy as np

from claip_emo import enums
from claip_emo.audio.frontend import AudioFrontend, Waveform
from claip_emo.backbones import checkpoint
from claip_emo.backbones.audio_transformer import patchify_spectrogram
from claip_emo.backbones.encoders import encode_audio, encode_frame, encode_frames, make_backbone
from claip_emo.backbones.model_registry import resolve_encoder_config
from claip_emo.backbones.vision_transformer import patchify_image
from claip_emo.config import RunConfig
from claip_emo.errors import (
    CheckpointChecksumError, CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError,
    InvalidConfigValueError, ShapeError)
from tests.claip_test import ClaipTestCase


class TestEncoders(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.cfg = self.tiny_config()
        self.visual_config = resolve_encoder_config(self.cfg, kind=enums.EncoderKind.visual.value)
        self.audio_config = resolve_encoder_config(self.cfg, kind=enums.EncoderKind.audio.value)

    def test_backbone_is_seeded_and_frozen(self):
        a = make_backbone(seed=3, config=self.visual_config)
        b = make_backbone(seed=3, config=self.visual_config)
        c = make_backbone(seed=4, config=self.visual_config)
        assert a.is_frozen
        assert all(not p.requires_grad for p in a.parameters())
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.data, pb.data), name
        assert not np.array_equal(a.pos_embed.data, c.pos_embed.data)

    def test_preset_overrides_reach_the_encoder(self):
        assert self.visual_config.depth == 1 and self.visual_config.d_model == 32
        assert self.visual_config.num_patches == 4
        cfg = self.tiny_config(visual__depth=2)
        assert resolve_encoder_config(cfg, kind=enums.EncoderKind.visual.value).depth == 2

    def test_unbuildable_config(self):
        cfg = self.tiny_config(visual__n_heads=3)
        with self.assertRaises(InvalidConfigValueError):
            resolve_encoder_config(cfg, kind=enums.EncoderKind.visual.value)

    def test_frames_are_encoded_independently(self):
        enc = make_backbone(seed=0, config=self.visual_config)
        frames = np.random.default_rng(0).uniform(size=(3, 16, 16, 1))
        features = encode_frames(frames, enc)
        assert features.matrix.shape == (3, 32)
        for i in range(3):
            assert np.allclose(features.matrix.data[i], encode_frame(frames[i], enc).data, atol=1e-6)
        # changing one frame leaves the other rows untouched
        edited = frames.copy()
        edited[1] = 0.0
        again = encode_frames(edited, enc).matrix.data
        assert np.allclose(again[[0, 2]], features.matrix.data[[0, 2]], atol=1e-6)
        assert not np.allclose(again[1], features.matrix.data[1])

    def test_cls_readout_sees_every_patch(self):
        enc = make_backbone(seed=0, config=self.visual_config)
        frame = np.random.default_rng(1).uniform(size=(16, 16, 1))
        cls = enc(frame).data
        assert np.array_equal(cls, enc.tokens(frame).data[0])
        edited = frame.copy()
        edited[8:, 8:] = 0.0
        assert not np.allclose(enc(edited).data, cls)

    def test_wrong_frame_size(self):
        enc = make_backbone(seed=0, config=self.visual_config)
        with self.assertRaises(ShapeError):
            encode_frames(np.zeros((2, 24, 24, 1)), enc)

    def test_audio_tokens(self):
        enc = make_backbone(seed=0, config=self.audio_config)
        mel = AudioFrontend()(Waveform(samples=np.random.default_rng(0).normal(size=3200) * 0.1,
                                       sample_rate=16000))
        assert mel.num_frames == 18
        features = encode_audio(mel, enc)
        assert features.matrix.shape == (2, 32)

    def test_silence_without_positions_gives_identical_tokens(self):
        silence = Waveform(samples=np.zeros(8000), sample_rate=16000)
        mel = AudioFrontend()(silence)
        for use_pos_embed in (False, True):
            cfg = self.tiny_config(clip__duration=0.5, audio_encoder__use_pos_embed=use_pos_embed)
            enc = make_backbone(seed=0, config=resolve_encoder_config(cfg, kind=enums.EncoderKind.audio.value))
            tokens = encode_audio(mel, enc).matrix.data
            assert tokens.shape == (6, 32)
            assert np.all(np.isfinite(tokens))
            same = np.allclose(tokens, tokens[:1], rtol=0, atol=1e-5)
            assert same == (not use_pos_embed)

    def test_patchify_image_order(self):
        frame = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        patches = patchify_image(frame, patch=2)
        assert patches.shape == (4, 4)
        assert np.array_equal(patches[0], [0, 1, 4, 5])
        assert np.array_equal(patches[1], [2, 3, 6, 7])
        with self.assertRaises(ShapeError):
            patchify_image(np.zeros((5, 4, 1)), patch=2)

    def test_patchify_spectrogram(self):
        mel = np.zeros((20, 64))
        assert patchify_spectrogram(mel, patch_time=8, patch_mel=64).shape == (2, 512)
        with self.assertRaises(ShapeError):
            patchify_spectrogram(np.zeros((7, 64)), patch_time=8, patch_mel=64)
        with self.assertRaises(ShapeError):
            patchify_spectrogram(np.zeros((16, 60)), patch_time=8, patch_mel=64)


class TestCheckpoint(ClaipTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.cfg = self.tiny_config()
        self.config = resolve_encoder_config(self.cfg, kind=enums.EncoderKind.visual.value)
        self.encoder = make_backbone(seed=7, config=self.config)
        self.path = os.path.join(self.tmp_dir, "visual.ckpt")
        checkpoint.save_checkpoint(self.encoder, self.path)

    def _rewrite(self, mutate):
        with open(self.path, "rb") as f:
            raw = bytearray(f.read())
        with open(self.path, "wb") as f:
            f.write(bytes(mutate(raw)))

    def test_round_trip(self):
        loaded = checkpoint.load_checkpoint(self.path, self.config)
        for (name, a), (_, b) in zip(self.encoder.named_parameters(), loaded.named_parameters()):
            assert np.array_equal(a.data, b.data), name
            assert not b.requires_grad

    def test_trainable_flag_is_stored(self):
        self.encoder.unfreeze()
        checkpoint.save_checkpoint(self.encoder, self.path)
        records = checkpoint.read_tensors(self.path)
        assert all(r.trainable for r in records.values())

    def test_checksum_is_stable(self):
        other = os.path.join(self.tmp_dir, "again.ckpt")
        checkpoint.save_checkpoint(make_backbone(seed=7, config=self.config), other)
        assert checkpoint.checkpoint_checksum(self.path) == checkpoint.checkpoint_checksum(other)

    def test_corrupted_data_fails_crc(self):
        def flip(raw):
            raw[-8] ^= 0xFF
            return raw
        self._rewrite(flip)
        with self.assertRaises(CheckpointChecksumError):
            checkpoint.read_tensors(self.path)

    def test_truncated_file(self):
        self._rewrite(lambda raw: raw[:-10])
        with self.assertRaises(CheckpointTruncatedError):
            checkpoint.read_tensors(self.path)

    def _first_name_length(self) -> int:
        with open(self.path, "rb") as f:
            raw = f.read()
        return struct.unpack("<I", raw[12:16])[0]

    def test_name_that_is_not_utf8(self):
        def garble(raw):
            raw[16] = 0xFF
            return raw
        self._rewrite(garble)
        with self.assertRaises(CheckpointFormatError):
            checkpoint.read_tensors(self.path)

    def test_oversized_dims_fail_before_reading(self):
        name_len = self._first_name_length()
        dims_at = 16 + name_len + 4

        def inflate(raw):
            raw[dims_at:dims_at + 8] = struct.pack("<Q", 2 ** 40)
            return raw
        self._rewrite(inflate)
        with self.assertRaises(CheckpointTruncatedError) as ctx:
            checkpoint.read_tensors(self.path)
        assert "left" in str(ctx.exception)

    def test_implausible_rank(self):
        rank_at = 16 + self._first_name_length()

        def bump(raw):
            raw[rank_at:rank_at + 4] = struct.pack("<I", 1000)
            return raw
        self._rewrite(bump)
        with self.assertRaises(CheckpointFormatError):
            checkpoint.read_tensors(self.path)

    def test_bad_magic(self):
        self._rewrite(lambda raw: b"XXXX" + raw[4:])
        with self.assertRaises(CheckpointFormatError):
            checkpoint.read_tensors(self.path)

    def test_base_checkpoint_into_large_config(self):
        base = RunConfig()
        large = RunConfig().with_overrides({"preset": enums.BackbonePreset.large.value})
        kind = enums.EncoderKind.visual.value
        checkpoint.save_checkpoint(make_backbone(seed=0, config=resolve_encoder_config(base, kind=kind)),
                                   self.path)
        with self.assertRaises(CheckpointShapeError) as ctx:
            checkpoint.load_checkpoint(self.path, resolve_encoder_config(large, kind=kind))
        assert "patch_embed" in str(ctx.exception)
