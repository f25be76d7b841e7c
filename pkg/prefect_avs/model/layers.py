import math

from torch import nn


def group_norm(channels: int) -> nn.GroupNorm:
    """GroupNorm with at least two channels per group, at most eight groups."""
    groups = math.gcd(max(channels // 2, 1), 8)
    return nn.GroupNorm(groups, channels)


def conv_norm_relu(in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1, dilation: int = 1) -> nn.Sequential:
    padding = dilation * (kernel_size // 2)
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=padding, dilation=dilation, bias=False),
        group_norm(out_channels),
        nn.ReLU(inplace=False),
    )


def init_he_fan_in(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
