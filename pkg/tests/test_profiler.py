"""Tests for parameter and FLOP accounting"""

import sys
from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv

# Add code directory to Python path
test_dir = Path(__file__).parent
project_root = test_dir.parent
code_dir = project_root / "code"
sys.path.insert(0, str(code_dir))

# Load environment variables from project root
load_dotenv(project_root / ".env")

from errors import ConfigError, DimensionError
from layers.nn_blocks import Linear
from models.data_models import BertPoolerConfig
from poolers import BertPooler
from services.profiler import (
    PRESET_NAMES,
    bert_layer_flops,
    count_flops,
    count_params,
    matmul_flops,
    profile_frame,
    profile_preset,
    render_text,
)


def _pooler(**overrides) -> BertPooler:
    values = dict(d_model=512, num_heads=8, max_positions=8)
    values.update(overrides)
    return BertPooler(BertPoolerConfig(**values))


def test_linear_parameter_count():
    report = count_params(Linear(512, 512))
    assert report.total == 262_656


def test_matmul_flops_hand_count():
    assert matmul_flops(2, 3, 4) == 48
    assert matmul_flops(2, 3, 4, flops_per_mac=1) == 24


class TestBertPresets:
    def test_bert_512(self):
        params, flops = profile_preset("bert-512")
        assert params.components["layers.0"] == 3_152_384
        assert params.total == 3_152_384 + 512 + 9 * 512
        assert flops.geometry == {"T": 8, "D": 512}

    def test_bert_2048(self):
        params, _ = profile_preset("bert-2048")
        assert params.components["layers.0"] == 50_358_272

    def test_cls_token_costs_one_row(self):
        with_cls = count_params(_pooler(use_cls_token=True)).total
        without = count_params(_pooler(use_cls_token=False)).total
        assert with_cls - without == 512

    def test_short_sequence_stays_cheap(self):
        assert count_flops(_pooler(), {"T": 4, "D": 512}).total <= 1e8


class TestScaling:
    def test_attention_term_grows_with_token_count_squared(self):
        layer = _pooler().layers[0]
        short = bert_layer_flops(5, layer, 8)
        long = bert_layer_flops(9, layer, 8)
        assert long["attention"] / short["attention"] == pytest.approx(81 / 25)
        assert long["projections"] / short["projections"] == pytest.approx(9 / 5)

    def test_doubling_length_less_than_quadruples_total(self):
        pooler = _pooler()
        short = count_flops(pooler, {"T": 4, "D": 512}).total
        long = count_flops(pooler, {"T": 8, "D": 512}).total
        assert 1.0 < long / short < 4.0

    def test_convention_halves_matmul_terms(self):
        pooler = _pooler()
        two = count_flops(pooler, {"T": 4, "D": 512}, flops_per_mac=2)
        one = count_flops(pooler, {"T": 4, "D": 512}, flops_per_mac=1)
        assert one.total < two.total < 2 * one.total
        assert two.convention == "1 MAC = 2 FLOPs"


class TestBackbonePresets:
    @pytest.mark.parametrize("family", ["toy", "backbone"])
    def test_reduction_ordering(self, family):
        totals = {mode: profile_preset(f"{family}-{mode}") for mode in ("original", "frmb", "frab")}
        params = {mode: report[0].total for mode, report in totals.items()}
        flops = {mode: report[1].total for mode, report in totals.items()}
        assert params["frmb"] < params["original"] < params["frab"]
        assert flops["frmb"] < flops["original"] < flops["frab"]

    def test_bert_head_is_cheap_next_to_backbone(self):
        _, flops = profile_preset("toy-frmb-bert")
        backbone = sum(v for k, v in flops.components.items() if k.startswith("backbone."))
        head = sum(v for k, v in flops.components.items() if k.startswith("head."))
        assert head / backbone < 0.01


class TestFusionPresets:
    def test_early_fusion_head_width(self):
        params, _ = profile_preset("early-fusion")
        assert params.components["head"] == 640 * 51 + 51

    def test_late_fusion_head_width(self):
        params, flops = profile_preset("late-fusion")
        assert params.components["head"] == 768 * 51 + 51
        assert "fast_bert.layers.0" in flops.components


class TestReports:
    def test_frame_total_row(self):
        params, flops = profile_preset("bert-512")
        frame = profile_frame(params, flops)
        assert list(frame.columns) == ["component", "params", "flops"]
        total = frame[frame["component"] == "total"].iloc[0]
        assert total["params"] == params.total
        assert total["flops"] == flops.total
        assert frame[frame["component"] != "total"]["flops"].sum() == flops.total

    def test_text_header(self):
        params, flops = profile_preset("bert-512", flops_per_mac=1)
        header = render_text("bert-512", params, flops).splitlines()[0]
        assert header == "# bert-512 | 1 MAC = 1 FLOP | T=8 D=512"

    def test_every_preset_builds(self):
        for name in PRESET_NAMES:
            if name == "bert-2048":
                continue
            params, flops = profile_preset(name)
            assert params.total > 0 and flops.total > 0


class TestGeometryErrors:
    def test_missing_key(self):
        with pytest.raises(ConfigError):
            count_flops(_pooler(), {"T": 4})

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            count_flops(_pooler(), {"T": 4, "D": 256})

    def test_sequence_too_long(self):
        with pytest.raises(ConfigError):
            count_flops(_pooler(), {"T": 9, "D": 512})

    def test_bad_convention(self):
        with pytest.raises(ConfigError):
            count_flops(_pooler(), {"T": 4, "D": 512}, flops_per_mac=3)

    def test_model_without_default_geometry(self):
        with pytest.raises(ConfigError):
            count_flops(_pooler())


def test_params_match_live_tensors():
    pooler = _pooler(d_model=16, num_heads=2)
    assert count_params(pooler).total == sum(int(np.prod(p.shape)) for p in pooler.parameters())
