from claip_emo import enums
from claip_emo.adaptation import count_params, param_table
from claip_emo.adaptation.accounting import param_group
from claip_emo.backbones.model_registry import resolve_encoder_config
from claip_emo.config import RunConfig
from claip_emo.enums import ParamGroup
from claip_emo.model.claip_model import build_model
from tests.claip_test import ClaipTestCase


def adapter_formula(cfg: RunConfig) -> int:
    """r(10d + 2h) per block: four d x d attention linears plus fc1 and fc2."""
    r = cfg.lora.rank
    total = 0
    for kind in (enums.EncoderKind.visual.value, enums.EncoderKind.audio.value):
        enc = resolve_encoder_config(cfg, kind=kind)
        total += enc.depth * r * (10 * enc.d_model + 2 * enc.hidden_dim)
    return total


class TestAccounting(ClaipTestCase):

    def test_counts_match_brute_force_and_formula(self):
        for preset in (enums.BackbonePreset.base.value, enums.BackbonePreset.large.value):
            for rank in (0, 2, 4, 8, 16):
                with self.subTest(preset=preset, rank=rank):
                    cfg = RunConfig().with_overrides({"preset": preset, "lora.rank": rank})
                    model = build_model(cfg)
                    report = count_params(model)
                    params = list(model.named_parameters())
                    assert report.total == sum(p.size for _, p in params)
                    assert report.trainable == sum(p.size for _, p in params if p.requires_grad)
                    assert report.adapter_trainable == adapter_formula(cfg)
                    assert report.groups[ParamGroup.backbone_visual].trainable == 0
                    assert report.groups[ParamGroup.backbone_audio].trainable == 0
                    assert report.trainable == (report.adapter_trainable
                                                + report.groups[ParamGroup.aggregator].trainable
                                                + report.groups[ParamGroup.head].trainable)

    def test_base_formula_constant(self):
        cfg = RunConfig().with_overrides({"lora.rank": 1})
        assert adapter_formula(cfg) == 2 * 9216

    def test_adapter_share_at_the_default_rank(self):
        report = count_params(build_model(RunConfig()))
        assert 0.005 < report.adapter_share < 0.10
        assert report.ratio > report.adapter_share

    def test_rank_sweep_is_increasing(self):
        counts = [count_params(build_model(self.tiny_config(lora__rank=r))).trainable for r in (0, 2, 4, 8, 16)]
        assert counts == sorted(counts) and len(set(counts)) == len(counts)

    def test_aggregation_ordering(self):
        def trainable(visual, audio):
            cfg = self.tiny_config(agg__visual=visual, agg__audio=audio)
            return count_params(build_model(cfg)).trainable
        mean, trans = enums.AggregationMode.mean.value, enums.AggregationMode.transformer.value
        assert trainable(mean, mean) < trainable(trans, mean) < trainable(trans, trans)

    def test_mean_aggregation_has_no_parameters(self):
        cfg = self.tiny_config(agg__visual=enums.AggregationMode.mean.value)
        report = count_params(build_model(cfg))
        assert report.groups[ParamGroup.aggregator].total == 0

    def test_full_finetune_trains_the_backbones(self):
        report = count_params(build_model(self.tiny_config(lora__full_finetune=True)))
        assert report.adapter_trainable == 0
        assert report.groups[ParamGroup.backbone_visual].trainable == report.groups[ParamGroup.backbone_visual].total
        assert report.ratio == 1.0

    def test_param_group_names(self):
        assert param_group("visual.block0.attn.q.weight") == ParamGroup.backbone_visual
        assert param_group("visual.block0.attn.q.lora_A") == ParamGroup.lora_visual
        assert param_group("audio.block0.mlp.fc2.lora_B") == ParamGroup.lora_audio
        assert param_group("agg_visual.cls_token") == ParamGroup.aggregator
        assert param_group("head.classifier.weight") == ParamGroup.head

    def test_param_table(self):
        report = count_params(build_model(self.tiny_config()))
        table = param_table(report)
        assert list(table["group"]) == ParamGroup.ordered() + ["total"]
        assert table["trainable"].iloc[-1] == report.trainable
        assert table["trainable"].iloc[:-1].sum() == report.trainable
