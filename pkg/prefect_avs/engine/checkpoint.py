"""
Checkpoint container.

A checkpoint is a `torch.save`d dict with plain entries only, so it loads with
`weights_only=True`:

    format      "prefect-avs/checkpoint-v1"
    state_dict  named parameter arrays, keyed by module and stage
                (e.g. "fusions.2.theta.weight", "aspp.0.project.0.weight")
    config      resolved TrainConfig, JSON-compatible
    setting     TaskSetting, JSON-compatible
    epoch       last completed epoch
    history     per-epoch metric records
"""
import logging
from pathlib import Path
from typing import Any, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field

from prefect_avs.core.types import TaskSetting
from prefect_avs.defaults import checkpoint_format
from prefect_avs.engine.config import TrainConfig
from prefect_avs.errors import ConfigurationError, IncompatibleCheckpointError
from prefect_avs.model.avs import AVSModel, build_model

logger = logging.getLogger(__name__)


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    state_dict: dict[str, torch.Tensor]
    config: TrainConfig
    setting: TaskSetting
    epoch: int = Field(0, ge=0)
    history: list[dict[str, Any]] = Field(default_factory=list)

    @classmethod
    def from_model(
        cls,
        model: AVSModel,
        config: TrainConfig,
        epoch: int = 0,
        history: Optional[list[dict[str, Any]]] = None,
    ) -> "Checkpoint":
        state = {key: value.detach().clone().cpu() for key, value in model.state_dict().items()}
        return cls(
            state_dict=state,
            config=config,
            setting=model.config.setting,
            epoch=epoch,
            history=list(history or []),
        )

    def build_model(self) -> AVSModel:
        """A model of the recorded architecture carrying the saved parameters, in eval mode."""
        model = build_model(self.config.model_for(self.setting))
        model.load_state_dict(self.state_dict)
        return model.eval()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format": checkpoint_format,
                "state_dict": self.state_dict,
                "config": self.config.model_dump(mode="json"),
                "setting": self.setting.model_dump(mode="json"),
                "epoch": self.epoch,
                "history": self.history,
            },
            path,
        )
        logger.info("Saved checkpoint (epoch %d) to %s", self.epoch, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(payload, dict) or payload.get("format") != checkpoint_format:
            logger.error("Unrecognized checkpoint container at %s", path)
            raise ConfigurationError(f"{path} is not a {checkpoint_format} checkpoint")

        checkpoint = cls(
            state_dict=payload["state_dict"],
            config=TrainConfig.model_validate(payload["config"]),
            setting=TaskSetting.model_validate(payload["setting"]),
            epoch=payload["epoch"],
            history=payload["history"],
        )
        logger.debug("Loaded checkpoint (epoch %d, %d tensors) from %s", checkpoint.epoch, len(checkpoint.state_dict), path)
        return checkpoint


def transfer_init(model: AVSModel, source: Checkpoint | str | Path) -> AVSModel:
    """
    Copy every parameter of `source` into `model`.

    The two architectures must match exactly: same keys, same shapes. Only
    parameters travel; optimizer state is never part of a checkpoint.

    :raises IncompatibleCheckpointError: listing every missing, unexpected or
        differently shaped key
    """
    if not isinstance(source, Checkpoint):
        source = Checkpoint.load(source)

    target = model.state_dict()
    mismatched = set(target).symmetric_difference(source.state_dict)
    mismatched.update(
        key
        for key in set(target).intersection(source.state_dict)
        if target[key].shape != source.state_dict[key].shape
    )
    if mismatched:
        logger.error("Cannot transfer %d mismatched parameter(s)", len(mismatched))
        raise IncompatibleCheckpointError(mismatched)

    model.load_state_dict(source.state_dict)
    logger.info(
        "Initialized %s model from a %s checkpoint (epoch %d)",
        model.config.setting.kind.value,
        source.setting.kind.value,
        source.epoch,
    )
    return model
