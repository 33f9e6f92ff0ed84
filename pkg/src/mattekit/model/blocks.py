"""Shared building blocks: normalized convs, bottlenecks, window helpers."""

from __future__ import annotations

import torch
import torch.nn as nn


def gn_groups(channels: int) -> int:
    g = min(32, channels)
    while channels % g:
        g -= 1
    return g


def group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(gn_groups(channels), channels)


def conv3x3(cin: int, cout: int, stride: int = 1, dilation: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)


def conv1x1(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 1, stride=stride)


def linear_conv(cin: int, cout: int, kernel: int = 1) -> nn.Conv2d:
    """Conv with no following ReLU: keeps the gain-preserving default
    (Kaiming-uniform) init instead of the relu-gain variant, so residual
    branches and prediction heads start as small perturbations."""
    conv = conv1x1(cin, cout) if kernel == 1 else conv3x3(cin, cout)
    conv.linear_init = True
    return conv


class ConvGNReLU(nn.Sequential):
    def __init__(self, cin, cout, kernel=3, stride=1, dilation=1):
        conv = conv3x3(cin, cout, stride, dilation) if kernel == 3 else conv1x1(cin, cout, stride)
        super().__init__(conv, group_norm(cout), nn.ReLU(inplace=True))


class Bottleneck(nn.Module):
    """1x1 -> 3x3 -> 1x1 residual block with group norm."""

    def __init__(self, cin, cmid, cout, stride=1, dilation=1):
        super().__init__()
        self.conv1 = conv1x1(cin, cmid)
        self.gn1 = group_norm(cmid)
        self.conv2 = conv3x3(cmid, cmid, stride=stride, dilation=dilation)
        self.gn2 = group_norm(cmid)
        self.conv3 = conv1x1(cmid, cout)
        self.gn3 = group_norm(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(conv1x1(cin, cout, stride=stride), group_norm(cout))
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.gn1(self.conv1(x)))
        out = self.relu(self.gn2(self.conv2(out)))
        out = self.gn3(self.conv3(out))
        return self.relu(out + identity)


class ResidualStage(nn.Sequential):
    def __init__(self, cin, cmid, cout, blocks, stride=1, dilation=1):
        layers = [Bottleneck(cin, cmid, cout, stride=stride, dilation=dilation)]
        layers += [Bottleneck(cout, cmid, cout, dilation=dilation) for _ in range(blocks - 1)]
        super().__init__(*layers)


class ResBlock3x3(nn.Module):
    """Two 3x3 convs with group norm and an identity skip (decoder refinement)."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.gn1 = group_norm(channels)
        self.conv2 = conv3x3(channels, channels)
        self.gn2 = group_norm(channels)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.gn1(self.conv1(x)))
        out = self.gn2(self.conv2(out))
        return self.relu(out + x)


def window_partition(x: torch.Tensor, s: int) -> torch.Tensor:
    """(B, C, H, W) with H, W multiples of s -> (B * nH * nW, s*s, C) tokens."""
    b, c, h, w = x.shape
    nh, nw = h // s, w // s
    x = x.reshape(b, c, nh, s, nw, s)
    x = x.permute(0, 2, 4, 3, 5, 1)            # b, nh, nw, s, s, c
    return x.reshape(b * nh * nw, s * s, c)


def window_merge(tokens: torch.Tensor, s: int, b: int, h: int, w: int) -> torch.Tensor:
    """Inverse of window_partition back to (B, C, H, W)."""
    nh, nw = h // s, w // s
    c = tokens.shape[-1]
    x = tokens.reshape(b, nh, nw, s, s, c)
    x = x.permute(0, 5, 1, 3, 2, 4)            # b, c, nh, s, nw, s
    return x.reshape(b, c, h, w)


def rowwise_attention(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """softmax(Q K^T) over token rows, deliberately without a 1/sqrt(d) factor."""
    return torch.softmax(q @ k.transpose(-2, -1), dim=-1)


def init_weights(module: nn.Module) -> None:
    """Kaiming init: relu-gain for convs feeding ReLUs, the construction-time
    Kaiming-uniform default for linear-marked convs; unit affine for norms."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            if getattr(m, "linear_init", False):
                continue
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.GroupNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
