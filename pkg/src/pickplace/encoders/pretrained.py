"""Adapters for externally downloaded pretrained backbones.

Weights are never vendored.  Point the environment variables at local
artifacts:

    PICKPLACE_CLIP_WEIGHTS  state_dict .pt of the contrastive RN50 model
    PICKPLACE_CLIP_BPE      byte-pair merges file (plain or .gz)
    PICKPLACE_RN50_WEIGHTS  torchvision resnet50 ImageNet state_dict .pt
    PICKPLACE_BERT_DIR      local directory for the sentence encoder

The acceptance suite never exercises these; the toy backbone covers CI.
"""

from __future__ import annotations

import gzip
import html
import os
import re
from collections import OrderedDict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import ConfigurationError, SemanticBackbone

CLIP_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


def _require(env: str, hint: str) -> Path:
    value = os.environ.get(env)
    if not value:
        raise ConfigurationError(
            f"{env} is not set; expected a path to {hint}. "
            f"Download the artifact separately and export {env}=/path/to/file.")
    path = Path(value)
    if not path.exists():
        raise ConfigurationError(f"{env}={path} does not exist (expected {hint})")
    return path


# ---------------------------------------------------------------------------
# Contrastively-pretrained ResNet50 tower (anti-aliased stem + avgpool strides)

class _Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, inplanes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu1 = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu2 = nn.ReLU(inplace=True)
        self.avgpool = nn.AvgPool2d(stride) if stride > 1 else nn.Identity()
        self.conv3 = nn.Conv2d(planes, planes * 4, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * 4)
        self.relu3 = nn.ReLU(inplace=True)
        self.downsample = None
        if stride > 1 or inplanes != planes * 4:
            self.downsample = nn.Sequential(OrderedDict([
                ("-1", nn.AvgPool2d(stride)),
                ("0", nn.Conv2d(inplanes, planes * 4, 1, stride=1, bias=False)),
                ("1", nn.BatchNorm2d(planes * 4)),
            ]))

    def forward(self, x):
        identity = x
        out = self.relu1(self.bn1(self.conv1(x)))
        out = self.relu2(self.bn2(self.conv2(out)))
        out = self.avgpool(out)
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu3(out + identity)


class _ModifiedResNet(nn.Module):
    def __init__(self, layers=(3, 4, 6, 3), width=64):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width // 2, 3, stride=2, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width // 2)
        self.relu1 = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(width // 2, width // 2, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width // 2)
        self.relu2 = nn.ReLU(inplace=True)
        self.conv3 = nn.Conv2d(width // 2, width, 3, padding=1, bias=False)
        self.bn3 = nn.BatchNorm2d(width)
        self.relu3 = nn.ReLU(inplace=True)
        self.avgpool = nn.AvgPool2d(2)
        self._inplanes = width
        self.layer1 = self._make_layer(width, layers[0])
        self.layer2 = self._make_layer(width * 2, layers[1], stride=2)
        self.layer3 = self._make_layer(width * 4, layers[2], stride=2)
        self.layer4 = self._make_layer(width * 8, layers[3], stride=2)

    def _make_layer(self, planes, blocks, stride=1):
        layers = [_Bottleneck(self._inplanes, planes, stride)]
        self._inplanes = planes * 4
        for _ in range(1, blocks):
            layers.append(_Bottleneck(self._inplanes, planes))
        return nn.Sequential(*layers)

    def forward(self, x):
        x = self.relu1(self.bn1(self.conv1(x)))
        x = self.relu2(self.bn2(self.conv2(x)))
        x = self.relu3(self.bn3(self.conv3(x)))
        x = self.avgpool(x)
        f1 = self.layer1(x)
        f2 = self.layer2(f1)
        f3 = self.layer3(f2)
        f4 = self.layer4(f3)
        return f4, [f3, f2, f1]


class _QuickGELU(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(1.702 * x)


class _ResidualAttentionBlock(nn.Module):
    def __init__(self, d_model, n_head):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, n_head)
        self.ln_1 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(OrderedDict([
            ("c_fc", nn.Linear(d_model, d_model * 4)),
            ("gelu", _QuickGELU()),
            ("c_proj", nn.Linear(d_model * 4, d_model)),
        ]))
        self.ln_2 = nn.LayerNorm(d_model)

    def forward(self, x, attn_mask):
        y = self.ln_1(x)
        x = x + self.attn(y, y, y, need_weights=False, attn_mask=attn_mask)[0]
        x = x + self.mlp(self.ln_2(x))
        return x


class _TextTransformer(nn.Module):
    def __init__(self, width=512, layers=12, heads=8, vocab=49408,
                 context=77, embed_dim=1024):
        super().__init__()
        self.context_length = context
        self.token_embedding = nn.Embedding(vocab, width)
        self.positional_embedding = nn.Parameter(torch.empty(context, width))
        self.resblocks = nn.ModuleList(
            [_ResidualAttentionBlock(width, heads) for _ in range(layers)])
        self.ln_final = nn.LayerNorm(width)
        self.text_projection = nn.Parameter(torch.empty(width, embed_dim))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.token_embedding(tokens) + self.positional_embedding[:tokens.shape[1]]
        mask = torch.full((tokens.shape[1], tokens.shape[1]), float("-inf"))
        mask.triu_(1)
        x = x.permute(1, 0, 2)
        for block in self.resblocks:
            x = block(x, mask)
        x = x.permute(1, 0, 2)
        x = self.ln_final(x)
        eot = tokens.argmax(dim=-1)
        return x[torch.arange(x.shape[0]), eot] @ self.text_projection


# ---------------------------------------------------------------------------
# Byte-pair tokenizer compatible with the released merges file

def _bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + \
        list(range(ord("\xa1"), ord("\xac") + 1)) + \
        list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


class _BPETokenizer:
    def __init__(self, merges_path: Path):
        raw = merges_path.read_bytes()
        if merges_path.suffix == ".gz":
            raw = gzip.decompress(raw)
        merges = raw.decode("utf-8").split("\n")[1:49152 - 256 - 2 + 1]
        merges = [tuple(m.split()) for m in merges]
        self.byte_encoder = _bytes_to_unicode()
        vocab = list(self.byte_encoder.values())
        vocab += [v + "</w>" for v in vocab]
        for merge in merges:
            vocab.append("".join(merge))
        vocab += ["<|startoftext|>", "<|endoftext|>"]
        self.encoder = {v: i for i, v in enumerate(vocab)}
        self.bpe_ranks = {m: i for i, m in enumerate(merges)}
        self.cache = {}

    def _bpe(self, token: str) -> str:
        if token in self.cache:
            return self.cache[token]
        word = tuple(token[:-1]) + (token[-1] + "</w>",)
        while len(word) > 1:
            pairs = set(zip(word, word[1:]))
            bigram = min(pairs, key=lambda p: self.bpe_ranks.get(p, float("inf")))
            if bigram not in self.bpe_ranks:
                break
            first, second = bigram
            new_word = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    new_word.append(first + second)
                    i += 2
                else:
                    new_word.append(word[i])
                    i += 1
            word = tuple(new_word)
        out = " ".join(word)
        self.cache[token] = out
        return out

    _WORD_PAT = re.compile(r"'s|'t|'re|'ve|'m|'ll|'d|[a-z]+|[0-9]|[^\sa-z0-9]+")

    def encode(self, text: str, context: int = 77) -> torch.Tensor:
        text = html.unescape(html.unescape(text)).strip().lower()
        ids = [self.encoder["<|startoftext|>"]]
        for token in re.findall(self._WORD_PAT, text):
            token = "".join(self.byte_encoder[b] for b in token.encode("utf-8"))
            ids.extend(self.encoder[t] for t in self._bpe(token).split(" "))
        ids.append(self.encoder["<|endoftext|>"])
        ids = ids[:context]
        out = torch.zeros(1, context, dtype=torch.long)
        out[0, :len(ids)] = torch.tensor(ids)
        return out


# ---------------------------------------------------------------------------
# Backbone adapters

class ClipResNet50Backbone(SemanticBackbone):
    """Frozen contrastive vision-language RN50: 7x7x2048 bottleneck, 1024-d text."""

    goal_dim = 1024
    bottleneck_channels = 2048
    skip_channels = (1024, 512, 256)
    input_resolution = 224

    def __init__(self):
        super().__init__()
        weights = _require("PICKPLACE_CLIP_WEIGHTS",
                           "the RN50 vision-language state_dict (clip_rn50.pt)")
        bpe = _require("PICKPLACE_CLIP_BPE",
                       "the byte-pair merges file (bpe_simple_vocab_16e6.txt.gz)")
        state = torch.load(weights, map_location="cpu")
        if hasattr(state, "state_dict"):
            state = state.state_dict()
        self.visual = _ModifiedResNet()
        self.text = _TextTransformer()
        self._load(state)
        self.tokenizer = _BPETokenizer(bpe)
        self._freeze()
        self._text_cache: dict[str, torch.Tensor] = {}

    def _load(self, state: dict) -> None:
        visual_state = {k[len("visual."):]: v for k, v in state.items()
                        if k.startswith("visual.") and not k.startswith("visual.attnpool")}
        missing, unexpected = self.visual.load_state_dict(visual_state, strict=False)
        if missing:
            raise ConfigurationError(f"weights missing visual keys: {missing[:5]}")
        text_state = {}
        for k, v in state.items():
            if k.startswith("transformer.resblocks."):
                text_state[k[len("transformer."):]] = v
            elif k in ("token_embedding.weight", "positional_embedding",
                       "ln_final.weight", "ln_final.bias", "text_projection"):
                text_state[k] = v
        missing, _ = self.text.load_state_dict(text_state, strict=False)
        if missing:
            raise ConfigurationError(f"weights missing text keys: {missing[:5]}")

    @torch.no_grad()
    def encode_image(self, rgb: torch.Tensor):
        x = F.interpolate(rgb, size=(self.input_resolution, self.input_resolution),
                          mode="bilinear", align_corners=False)
        mean = torch.tensor(CLIP_IMAGE_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(CLIP_IMAGE_STD).view(1, 3, 1, 1)
        return self.visual((x - mean) / std)

    def encode_text(self, instruction: str) -> torch.Tensor:
        if not instruction:
            raise ValueError("instruction must be a non-empty string")
        if instruction not in self._text_cache:
            tokens = self.tokenizer.encode(instruction)
            with torch.no_grad():
                self._text_cache[instruction] = self.text(tokens)[0].float()
        return self._text_cache[instruction]


class ResNetBertBackbone(SemanticBackbone):
    """Classification-pretrained vision tower + independent sentence encoder."""

    goal_dim = 768
    bottleneck_channels = 2048
    skip_channels = (1024, 512, 256)
    input_resolution = 224

    def __init__(self):
        super().__init__()
        weights = _require("PICKPLACE_RN50_WEIGHTS",
                           "a torchvision resnet50 ImageNet state_dict (.pth)")
        bert_dir = _require("PICKPLACE_BERT_DIR",
                            "a local sentence-encoder directory (config + weights)")
        from torchvision.models import resnet50
        self.visual = resnet50(weights=None)
        self.visual.load_state_dict(torch.load(weights, map_location="cpu"))
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as err:  # pragma: no cover
            raise ConfigurationError("transformers is required for rn50_bert") from err
        self.tokenizer = AutoTokenizer.from_pretrained(str(bert_dir))
        self.text = AutoModel.from_pretrained(str(bert_dir))
        self._freeze()
        self._text_cache: dict[str, torch.Tensor] = {}

    @torch.no_grad()
    def encode_image(self, rgb: torch.Tensor):
        x = F.interpolate(rgb, size=(self.input_resolution, self.input_resolution),
                          mode="bilinear", align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        x = (x - mean) / std
        v = self.visual
        x = v.maxpool(v.relu(v.bn1(v.conv1(x))))
        f1 = v.layer1(x)
        f2 = v.layer2(f1)
        f3 = v.layer3(f2)
        f4 = v.layer4(f3)
        return f4, [f3, f2, f1]

    def encode_text(self, instruction: str) -> torch.Tensor:
        if not instruction:
            raise ValueError("instruction must be a non-empty string")
        if instruction not in self._text_cache:
            inputs = self.tokenizer(instruction, return_tensors="pt")
            with torch.no_grad():
                out = self.text(**inputs).last_hidden_state[0, 0]
            self._text_cache[instruction] = out.float()
        return self._text_cache[instruction]
