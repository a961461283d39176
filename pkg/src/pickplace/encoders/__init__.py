"""Pluggable frozen semantic backbones.

Every backbone satisfies one contract: RGB in, a bottleneck feature grid
plus a skip pyramid out (deepest level first, resolutions doubling toward
the input); instruction string in, a fixed-width goal vector out.  All
parameters are frozen; the trainable decoders live in the model module.
"""

from __future__ import annotations

import hashlib
import math
import re

import numpy as np
import torch
import torch.nn as nn


class ConfigurationError(RuntimeError):
    """Raised for unknown backbones or missing pretrained artifacts."""


def _seeded_conv(cin: int, cout: int, stride: int,
                 gen: torch.Generator) -> nn.Conv2d:
    conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
    std = math.sqrt(2.0 / (cin * 9))
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
    return conv


def _token_embedding(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.md5(token.encode()).digest()[:4], "little")
    rs = np.random.RandomState(seed)
    vec = rs.standard_normal(dim).astype(np.float32)
    return vec / np.linalg.norm(vec)


def tokenize(instruction: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", instruction.lower())


class SemanticBackbone(nn.Module):
    """Interface: frozen image pyramid + text goal vector."""

    goal_dim: int
    bottleneck_channels: int
    skip_channels: tuple[int, ...]
    frozen = True

    def encode_image(self, rgb: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """(B, 3, H, W) in [0, 1] -> (bottleneck, skips deepest-first)."""
        raise NotImplementedError

    def encode_text(self, instruction: str) -> torch.Tensor:
        raise NotImplementedError

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def _freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()


class ToyBackbone(SemanticBackbone):
    """Fixed-seed random conv stack plus a bag-of-n-grams text encoder.

    The text encoding concatenates averaged unigram and bigram embeddings:
    order-insensitive within each bag, but bigrams keep enough local order
    to tell "red blocks ... green bowl" from "green blocks ... red bowl".
    """

    goal_dim = 64
    bottleneck_channels = 64
    skip_channels = (48, 24, 12)

    def __init__(self, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.c1 = _seeded_conv(3, 12, 2, gen)
        self.c2 = _seeded_conv(12, 24, 2, gen)
        self.c3 = _seeded_conv(24, 48, 2, gen)
        self.c4 = _seeded_conv(48, 64, 2, gen)
        self._freeze()
        self._text_cache: dict[str, torch.Tensor] = {}

    @torch.no_grad()
    def encode_image(self, rgb: torch.Tensor):
        x = (rgb - 0.5) * 2.0
        s1 = torch.relu(self.c1(x))
        s2 = torch.relu(self.c2(s1))
        s3 = torch.relu(self.c3(s2))
        v0 = torch.relu(self.c4(s3))
        return v0, [s3, s2, s1]

    def encode_text(self, instruction: str) -> torch.Tensor:
        if not instruction:
            raise ValueError("instruction must be a non-empty string")
        if instruction not in self._text_cache:
            tokens = tokenize(instruction)
            if not tokens:
                raise ValueError(f"instruction {instruction!r} has no tokens")
            half = self.goal_dim // 2
            uni = np.mean([_token_embedding(t, half) for t in tokens], axis=0)
            bigrams = [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
            if bigrams:
                bi = np.mean([_token_embedding(t, half) for t in bigrams], axis=0)
            else:
                bi = np.zeros(half, dtype=np.float32)
            vec = np.concatenate([uni, bi]).astype(np.float32)
            self._text_cache[instruction] = torch.from_numpy(vec)
        return self._text_cache[instruction]


class _MiniTransformer(nn.Module):
    """Tiny untrained transformer text encoder (frozen random weights)."""

    def __init__(self, dim: int, seed: int):
        super().__init__()
        torch.manual_seed(seed)
        self.buckets = 512
        self.embed = nn.Embedding(self.buckets, dim)
        self.pos = nn.Parameter(torch.randn(64, dim) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=2, dim_feedforward=2 * dim, batch_first=True,
            dropout=0.0)
        self.encoder = nn.TransformerEncoder(layer, num_layers=2)

    @torch.no_grad()
    def forward(self, tokens: list[str]) -> torch.Tensor:
        ids = [int.from_bytes(hashlib.md5(t.encode()).digest()[:4], "little")
               % self.buckets for t in tokens]
        x = self.embed(torch.tensor(ids))[None] + self.pos[:len(ids)][None]
        return self.encoder(x)[0].mean(dim=0)


class UntrainedBackbone(SemanticBackbone):
    """Random-weight stand-in for a pretrained encoder pair (no pretraining)."""

    goal_dim = 64
    bottleneck_channels = 96
    skip_channels = (64, 32, 16)

    def __init__(self, seed: int = 4321):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.c1 = _seeded_conv(3, 16, 2, gen)
        self.c2 = _seeded_conv(16, 32, 2, gen)
        self.c3 = _seeded_conv(32, 64, 2, gen)
        self.c4 = _seeded_conv(64, 96, 2, gen)
        self.text = _MiniTransformer(self.goal_dim, seed + 1)
        self._freeze()
        self._text_cache: dict[str, torch.Tensor] = {}

    @torch.no_grad()
    def encode_image(self, rgb: torch.Tensor):
        x = (rgb - 0.5) * 2.0
        s1 = torch.relu(self.c1(x))
        s2 = torch.relu(self.c2(s1))
        s3 = torch.relu(self.c3(s2))
        v0 = torch.relu(self.c4(s3))
        return v0, [s3, s2, s1]

    def encode_text(self, instruction: str) -> torch.Tensor:
        if not instruction:
            raise ValueError("instruction must be a non-empty string")
        if instruction not in self._text_cache:
            tokens = tokenize(instruction)
            if not tokens:
                raise ValueError(f"instruction {instruction!r} has no tokens")
            self._text_cache[instruction] = self.text(tokens).detach()
        return self._text_cache[instruction]


def make_backbone(name: str, **kwargs) -> SemanticBackbone:
    if name == "toy":
        return ToyBackbone(**kwargs)
    if name == "untrained":
        return UntrainedBackbone(**kwargs)
    if name == "clip_rn50":
        from .pretrained import ClipResNet50Backbone
        return ClipResNet50Backbone(**kwargs)
    if name == "rn50_bert":
        from .pretrained import ResNetBertBackbone
        return ResNetBertBackbone(**kwargs)
    raise ConfigurationError(
        f"unknown backbone {name!r}; available: toy, untrained, clip_rn50, rn50_bert")


BACKBONE_NAMES = ("toy", "untrained", "clip_rn50", "rn50_bert")
