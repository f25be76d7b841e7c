"""Central finite-difference checks of every differentiable component, in float64."""
import pytest
import torch
from torch import nn
from torch.autograd import gradcheck
from torch.func import functional_call

from prefect_avs.audio.encoder import AudioEncoder
from prefect_avs.core.types import TaskSetting
from prefect_avs.model.avs import build_model
from prefect_avs.model.backbone import BackboneConfig, VisualBackbone
from prefect_avs.model.decoder import DecoderConfig, FPNDecoder
from prefect_avs.model.fusion import Aspp, Tpavi
from tests.conftest import tiny_model_config

RTOL = 1e-4
ATOL = 1e-6


def check_module(module: nn.Module, *inputs: torch.Tensor, fast_mode: bool = False, output=lambda out: out) -> bool:
    """gradcheck with the module's parameters lifted into explicit inputs."""
    module = module.double()
    names = [name for name, _ in module.named_parameters()]
    parameters = [p.detach().clone().requires_grad_(True) for _, p in module.named_parameters()]
    inputs = [x.detach().double().requires_grad_(True) for x in inputs]

    def fn(*tensors):
        params = dict(zip(names, tensors[: len(names)]))
        return output(functional_call(module, params, tuple(tensors[len(names):])))

    return gradcheck(fn, (*parameters, *inputs), rtol=RTOL, atol=ATOL, fast_mode=fast_mode)


def _randomize(module: nn.Module, seed: int) -> nn.Module:
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for parameter in module.parameters():
            parameter.copy_(0.5 * torch.randn(parameter.shape, generator=generator, dtype=parameter.dtype))
    return module


class TestGradients:
    """Finite-difference gradient suite."""

    def test_audio_encoder(self):
        """Audio encoder gradients."""
        torch.manual_seed(0)
        assert check_module(AudioEncoder((2, 3, 4), dim=5), torch.randn(2, 16, 12))

    def test_backbone(self):
        """Backbone gradients on 32×32 frames, full Jacobian."""
        torch.manual_seed(0)
        backbone = VisualBackbone(BackboneConfig(channels=(2, 2, 2, 2), stem_channels=2))
        assert check_module(backbone, torch.rand(1, 3, 32, 32), output=tuple)

    def test_aspp(self):
        """ASPP gradients."""
        torch.manual_seed(0)
        assert check_module(Aspp(4, 4, rates=(1, 2)), torch.randn(2, 4, 4, 4))

    def test_tpavi(self):
        """TPAVI gradients with respect to V, A and every parameter."""
        block = _randomize(Tpavi(4, 2, audio_dim=3), seed=0)
        assert check_module(block, torch.randn(2, 4, 2, 2), torch.randn(2, 3), output=lambda out: out[0])

    def test_decoder(self):
        """Decoder gradients through the full decode path at 32×32, full Jacobian."""
        torch.manual_seed(0)
        decoder = FPNDecoder(4, 1, DecoderConfig(width=4))
        fused = [torch.randn(1, 4, 32 // 2 ** (i + 1), 32 // 2 ** (i + 1)) for i in range(1, 5)]
        module = _Decode(decoder)
        assert check_module(module, *fused)

    @pytest.mark.slow
    def test_full_model(self):
        """End-to-end gradients of the assembled model."""
        setting = TaskSetting.for_kind("MS3", clips_per_video=2)
        model = build_model(tiny_model_config(setting), seed=0)
        for fusion in model.fusions:
            _randomize(fusion, seed=1)
        assert check_module(model, torch.rand(1, 2, 3, 32, 32), torch.randn(1, 2, 98, 64), fast_mode=True,
                            output=lambda out: out.scores)


class _Decode(nn.Module):
    def __init__(self, decoder: FPNDecoder):
        super().__init__()
        self.decoder = decoder

    def forward(self, *fused):
        return self.decoder(list(fused), (32, 32))
