import pytest
import yaml
from pydantic import ValidationError

from prefect_avs.core.types import SettingKind, TaskSetting
from prefect_avs.engine.config import (
    InitMode,
    LRSchedule,
    TrainConfig,
    apply_overrides,
    dump_config,
    load_config,
)
from prefect_avs.errors import ConfigurationError
from prefect_avs.model.avs import FusionMode
from prefect_avs.objectives.losses import AvmVariant


class TestTrainConfig:
    """Unit tests for TrainConfig."""

    def test_defaults(self):
        """Defaults follow the reference recipe."""
        config = TrainConfig()
        assert config.lr == 1e-4
        assert config.batch_size == 4
        assert config.fusion == FusionMode.TPAVI
        assert config.tpavi_stages == (1, 2, 3, 4)
        assert config.loss.lam == 0.5
        assert config.schedule == LRSchedule.CONSTANT
        assert config.init == InitMode.SCRATCH

    def test_epochs_per_setting(self):
        """15, 30 and 60 epochs unless configured."""
        config = TrainConfig()
        assert config.epochs_for(TaskSetting.for_kind("S4")) == 15
        assert config.epochs_for(TaskSetting.for_kind("MS3")) == 30
        assert config.epochs_for(TaskSetting.for_kind("AVSS", num_classes=71)) == 60
        assert TrainConfig(epochs=2).epochs_for(TaskSetting.for_kind("AVSS", num_classes=71)) == 2

    @pytest.mark.parametrize(
        "fields",
        [
            {"tpavi_stages": []},
            {"tpavi_stages": [0, 4]},
            {"init": "from_checkpoint"},
            {"batch_size": 4, "micro_batch_size": 3},
            {"lr": 0.0},
            {"loss": {"lam": -1.0}},
        ],
    )
    def test_rejects_invalid(self, fields):
        """Inconsistent runs are refused before any training starts."""
        with pytest.raises(ValidationError):
            TrainConfig.model_validate(fields)

    def test_no_fusion_without_stages(self):
        """Empty TPAVI stages are fine when fusion is not TPAVI."""
        assert TrainConfig(fusion=FusionMode.NONE, tpavi_stages=()).tpavi_stages == ()

    def test_resolve_setting(self):
        """The dataset setting wins, a configured one must agree with it."""
        ms3 = TaskSetting.for_kind("MS3")
        assert TrainConfig().resolve_setting(ms3) == ms3
        assert TrainConfig(setting=ms3).resolve_setting(ms3) == ms3
        with pytest.raises(ConfigurationError, match="S4"):
            TrainConfig(setting=TaskSetting.for_kind("S4")).resolve_setting(ms3)

    def test_model_for(self):
        """The architecture section maps onto a model configuration."""
        config = TrainConfig(fusion=FusionMode.TPAVI, tpavi_stages=(2, 4), audio_dim=32, freeze_audio=True)
        model_config = config.model_for(TaskSetting.for_kind("AVSS", num_classes=7))
        assert model_config.setting.kind == SettingKind.AVSS
        assert model_config.tpavi_stages == (2, 4)
        assert model_config.audio_dim == 32
        assert model_config.freeze_audio


class TestLoadConfig:
    """Unit tests for load_config, apply_overrides and dump_config."""

    def test_yaml_file(self, temp_dir):
        """Fields are read from YAML, nested sections included."""
        path = temp_dir / "run.yaml"
        path.write_text("lr: 0.001\nloss:\n  lam: 0.0\n  avm_variant: VV\ntpavi_stages: [4]\n")
        config = load_config(path)
        assert config.lr == 0.001
        assert config.loss.lam == 0.0
        assert config.loss.avm_variant == AvmVariant.VV
        assert config.tpavi_stages == (4,)

    def test_overrides(self, temp_dir):
        """Dotted overrides apply on top of the file and parse as YAML values."""
        path = temp_dir / "run.yaml"
        path.write_text("seed: 3\nloss:\n  lam: 0.5\n")
        config = load_config(path, ["loss.avm_variant=none", "tpavi_stages=[1,2]", "flip=true", "seed=7"])
        assert config.loss.lam == 0.5
        assert config.loss.avm_variant == AvmVariant.NONE
        assert config.tpavi_stages == (1, 2)
        assert config.flip is True
        assert config.seed == 7

    def test_apply_overrides_copies(self):
        """The input mapping is left untouched."""
        data = {"loss": {"lam": 0.5}}
        updated = apply_overrides(data, ["loss.lam=0"])
        assert updated == {"loss": {"lam": 0}}
        assert data == {"loss": {"lam": 0.5}}

    def test_defaults_without_file(self):
        """No file and no overrides give the defaults."""
        assert load_config() == TrainConfig()

    def test_dump_then_load(self, temp_dir):
        """A dumped configuration loads back to an equal object."""
        config = TrainConfig(
            setting=TaskSetting.for_kind("MS3"),
            lr=3e-4,
            epochs=2,
            tpavi_stages=(1, 3),
            init="from_checkpoint",
            checkpoint=temp_dir / "source.pt",
        )
        path = dump_config(config, temp_dir / "nested" / "config.yaml")
        assert load_config(path) == config
        assert yaml.safe_load(path.read_text())["init"] == "from_checkpoint"

    @pytest.mark.parametrize(
        "content, match",
        [
            ("lr: [unclosed\n", "not valid YAML"),
            ("- 1\n- 2\n", "mapping"),
            ("fusion: attention\n", "invalid configuration"),
        ],
    )
    def test_bad_files(self, temp_dir, content, match):
        """Unreadable or invalid files raise ConfigurationError."""
        path = temp_dir / "run.yaml"
        path.write_text(content)
        with pytest.raises(ConfigurationError, match=match):
            load_config(path)

    def test_missing_file(self, temp_dir):
        """A missing file is reported by path."""
        with pytest.raises(ConfigurationError, match="not found"):
            load_config(temp_dir / "absent.yaml")

    @pytest.mark.parametrize("override", ["lr", "=3", "lr=[1,"])
    def test_bad_override(self, override):
        """Overrides must be key=value with a parseable value."""
        with pytest.raises(ConfigurationError):
            load_config(overrides=[override])
