"""Two-stream affordance networks and cross-correlation placement.

Three fully-convolutional nets share one design: a from-scratch RGB-D
spatial stream plus a frozen-backbone semantic stream whose trainable
decoder is language-conditioned at three layers and laterally fused with
spatial features.

The pick and key nets keep full resolution end to end: their spatial
stream is a stride-free dilated stack, which makes the spatial-only pick
map exactly shift-equivariant.  The query net runs on k rotated crops per
step, so it uses a cheaper strided hourglass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import ConfigurationError, SemanticBackbone, make_backbone
from .geometry import Observation, PixelAction, PixelPose, extract_rotated_crops

COLOR_SHIFT = 0.5
HEIGHT_SCALE = 0.1

STREAM_MODES = ("two_stream", "spatial_only", "semantic_only")
GOAL_MODES = ("language", "image_goal", "none")


class ModelError(RuntimeError):
    """Numerical failure (non-finite maps) or invalid forward arguments."""


@dataclass(frozen=True)
class ModelConfig:
    stream_mode: str = "two_stream"
    backbone: str = "toy"
    use_skips: bool = True
    goal_mode: str = "language"
    crop_size: int = 64
    k_pick: int = 1
    k_place: int = 36
    corr_dim: int = 3
    correlation: str = "fft"                      # fft | direct
    spatial_channels: tuple = (12, 14, 14, 12)    # dilated stream widths
    decoder_widths: tuple = (32, 20, 12)          # 3 conditioned decoder layers
    query_channels: tuple = (8, 12, 16, 24)       # query hourglass encoder
    query_decoder_widths: tuple = (16, 12, 8)

    def __post_init__(self):
        if self.stream_mode not in STREAM_MODES:
            raise ConfigurationError(f"stream_mode {self.stream_mode!r} not in {STREAM_MODES}")
        if self.goal_mode not in GOAL_MODES:
            raise ConfigurationError(f"goal_mode {self.goal_mode!r} not in {GOAL_MODES}")
        if self.stream_mode == "spatial_only" and self.goal_mode == "language":
            raise ConfigurationError("spatial_only has no language path; "
                                     "use goal_mode='none' or 'image_goal'")
        if self.crop_size % 2 != 0:
            raise ConfigurationError(f"crop_size must be even, got {self.crop_size}")
        if len(self.decoder_widths) != 3:
            raise ConfigurationError("exactly three conditioned decoder layers required")
        if self.correlation not in ("fft", "direct"):
            raise ConfigurationError(f"correlation {self.correlation!r} not in (fft, direct)")
        if min(self.k_pick, self.k_place, self.corr_dim) < 1:
            raise ConfigurationError("k_pick, k_place, corr_dim must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("spatial_channels", "decoder_widths", "query_channels",
                    "query_decoder_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        for key in ("spatial_channels", "decoder_widths", "query_channels",
                    "query_decoder_widths"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class AffordanceMaps:
    q_pick: np.ndarray    # (H, W, k_pick)
    q_place: np.ndarray   # (H, W, k_place)

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Softmax over all pixels and bins of each map."""
        def softmax_all(q):
            flat = q.reshape(-1).astype(np.float64)
            flat = np.exp(flat - flat.max())
            return (flat / flat.sum()).reshape(q.shape)
        return softmax_all(self.q_pick), softmax_all(self.q_place)


def select_action(maps: AffordanceMaps) -> PixelAction:
    """Joint argmax per head; ties break to the lowest flat index."""
    for name, q in (("q_pick", maps.q_pick), ("q_place", maps.q_place)):
        if not np.isfinite(q).all():
            raise ModelError(f"{name} contains non-finite values (model diverged)")
    pu, pv, pr = np.unravel_index(int(np.argmax(maps.q_pick)), maps.q_pick.shape)
    lu, lv, lr = np.unravel_index(int(np.argmax(maps.q_place)), maps.q_place.shape)
    return PixelAction(
        pick=PixelPose(int(pu), int(pv), int(pr), maps.q_pick.shape[2]),
        place=PixelPose(int(lu), int(lv), int(lr), maps.q_place.shape[2]))


# ---------------------------------------------------------------------------
# Correlation

def cross_correlate(kernel: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation summed over feature channels.

    output[u, v] = sum_{a, b, ch} kernel[a, b, ch] * key[u + a - c//2,
    v + b - c//2, ch], with the key treated as zero outside its support.
    """
    if kernel.ndim == 2:
        kernel = kernel[:, :, None]
    if key.ndim == 2:
        key = key[:, :, None]
    ch, cw, d = kernel.shape
    h, w, kd = key.shape
    if kd != d:
        raise ModelError(f"channel mismatch: kernel {d} vs key {kd}")
    if ch > h or cw > w:
        raise ModelError(f"kernel {ch}x{cw} larger than key {h}x{w}")
    pu, pv = ch // 2, cw // 2
    padded = np.zeros((h + ch - 1, w + cw - 1, d), dtype=np.result_type(kernel, key))
    padded[pu:pu + h, pv:pv + w] = key
    windows = np.lib.stride_tricks.sliding_window_view(padded, (ch, cw), axis=(0, 1))
    return np.einsum("uvdab,abd->uv", windows, kernel)


def _next_fast_len(n: int) -> int:
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def correlate_torch(kernels: torch.Tensor, key: torch.Tensor,
                    method: str = "fft") -> torch.Tensor:
    """Batched differentiable correlation: (k, d, c, c) x (1, d, H, W) -> (k, H, W)."""
    k, d, ch, cw = kernels.shape
    _, kd, h, w = key.shape
    if kd != d:
        raise ModelError(f"channel mismatch: kernels {d} vs key {kd}")
    pu, pv = ch // 2, cw // 2
    if method == "direct":
        padded = F.pad(key, (pv, cw - 1 - pv, pu, ch - 1 - pu))
        return F.conv2d(padded, kernels)[0]
    nu = _next_fast_len(h + pu)
    nv = _next_fast_len(w + pv)
    kf = torch.fft.rfft2(key, s=(nu, nv))
    qf = torch.fft.rfft2(kernels, s=(nu, nv))
    full = torch.fft.irfft2((qf.conj() * kf).sum(dim=1), s=(nu, nv))
    return torch.roll(full, shifts=(pu, pv), dims=(-2, -1))[:, :h, :w]


# ---------------------------------------------------------------------------
# Building blocks

def _scale_head(conv: nn.Conv2d, scale: float = 0.1) -> nn.Conv2d:
    with torch.no_grad():
        conv.weight.mul_(scale)
        if conv.bias is not None:
            conv.bias.zero_()
    return conv


def _match(t: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    """Resize (B, C, h, w) features to a target grid."""
    if t.shape[-2:] == hw:
        return t
    if t.shape[-2] >= hw[0] and t.shape[-1] >= hw[1]:
        return F.adaptive_avg_pool2d(t, hw)
    return F.interpolate(t, size=hw, mode="bilinear", align_corners=False)


class HadamardGate(nn.Module):
    """Project the goal vector to channel width, tile, multiply elementwise."""

    def __init__(self, goal_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(goal_dim, channels)
        with torch.no_grad():
            self.proj.weight.mul_(0.1)
            self.proj.bias.fill_(1.0)

    def forward(self, v: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        gate = self.proj(g)
        if gate.shape[-1] != v.shape[1]:
            raise ModelError(f"gate width {gate.shape[-1]} != feature channels {v.shape[1]}")
        return v * gate[:, :, None, None]


class LateralFuse(nn.Module):
    """Concatenate spatial features into the semantic stream, reduce by 1x1 conv."""

    def __init__(self, sem_channels: int, spa_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(sem_channels + spa_channels, sem_channels, 1)

    def forward(self, sem: torch.Tensor, spa: torch.Tensor) -> torch.Tensor:
        if sem.shape[-2:] != spa.shape[-2:]:
            raise ModelError(f"lateral shape mismatch: {tuple(sem.shape)} vs {tuple(spa.shape)}")
        return self.conv(torch.cat([sem, spa], dim=1))


class DilatedSpatialStream(nn.Module):
    """Stride-free RGB-D stream; exactly shift-equivariant away from borders."""

    def __init__(self, in_channels: int, widths: tuple, out_channels: int):
        super().__init__()
        dilations = (1, 2, 4, 8)
        chans = [in_channels] + list(widths)
        self.convs = nn.ModuleList([
            nn.Conv2d(chans[i], chans[i + 1], 3, padding=dilations[i],
                      dilation=dilations[i])
            for i in range(len(widths))
        ])
        self.head = (_scale_head(nn.Conv2d(widths[-1], out_channels, 1))
                     if out_channels else None)
        self.feature_channels = widths[-1]

    def forward(self, x: torch.Tensor):
        feats = []
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x)
        out = self.head(x) if self.head is not None else None
        # Laterals for the three semantic decoder layers: deepest first.
        return out, x, [feats[1], feats[2], feats[3]]


class HourglassSpatialStream(nn.Module):
    """Strided encoder-decoder for crop batches; decodes to half resolution."""

    def __init__(self, in_channels: int, enc_widths: tuple, dec_widths: tuple,
                 out_channels: int):
        super().__init__()
        chans = [in_channels] + list(enc_widths)
        self.enc = nn.ModuleList([
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            for i in range(len(enc_widths))
        ])
        dec_in = [enc_widths[-1]] + list(dec_widths[:-1])
        self.dec = nn.ModuleList([
            nn.Conv2d(dec_in[i], dec_widths[i], 3, padding=1)
            for i in range(len(dec_widths))
        ])
        self.head = (_scale_head(nn.Conv2d(dec_widths[-1], out_channels, 1))
                     if out_channels else None)
        self.feature_channels = dec_widths[-1]

    def forward(self, x: torch.Tensor):
        size = x.shape[-2:]
        for conv in self.enc:
            x = F.relu(conv(x))
        feats = []
        for conv in self.dec:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.relu(conv(x))
            feats.append(x)
        out = None
        if self.head is not None:
            out = F.interpolate(self.head(x), size=size, mode="bilinear",
                                align_corners=False)
        return out, x, feats


class SemanticDecoder(nn.Module):
    """Trainable decoder over frozen backbone features.

    Three upsampling layers after the bottleneck, each: conv, add projected
    encoder skip, multiply tiled goal gate, laterally fuse spatial features.
    """

    def __init__(self, backbone: SemanticBackbone, widths: tuple,
                 lateral_channels: list[int] | None, out_channels: int,
                 use_skips: bool, use_language: bool):
        super().__init__()
        self.use_skips = use_skips
        self.use_language = use_language
        chans = [backbone.bottleneck_channels] + list(widths)
        self.convs = nn.ModuleList([
            nn.Conv2d(chans[i], chans[i + 1], 3, padding=1) for i in range(3)])
        if use_skips:
            self.skip_proj = nn.ModuleList([
                nn.Conv2d(backbone.skip_channels[i], widths[i], 1) for i in range(3)])
        if use_language:
            self.gates = nn.ModuleList([
                HadamardGate(backbone.goal_dim, widths[i]) for i in range(3)])
        if lateral_channels is not None:
            self.laterals = nn.ModuleList([
                LateralFuse(widths[i], lateral_channels[i]) for i in range(3)])
        else:
            self.laterals = None
        self.head = (_scale_head(nn.Conv2d(widths[-1], out_channels, 1))
                     if out_channels else None)
        self.feature_channels = widths[-1]

    def forward(self, v0: torch.Tensor, skips: list[torch.Tensor],
                g: torch.Tensor | None, laterals: list[torch.Tensor] | None,
                out_size: tuple[int, int]):
        x = v0
        for i in range(3):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.relu(self.convs[i](x))
            if self.use_skips:
                x = x + self.skip_proj[i](_match(skips[i], x.shape[-2:]))
            if self.use_language:
                if g is None:
                    raise ModelError("language-conditioned decoder needs a goal vector")
                x = self.gates[i](x, g)
            if self.laterals is not None and laterals is not None:
                x = self.laterals[i](x, _match(laterals[i], x.shape[-2:]))
        out = None
        if self.head is not None:
            out = F.interpolate(self.head(x), size=out_size, mode="bilinear",
                                align_corners=False)
        feats = F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)
        return out, feats


class TwoStreamFCN(nn.Module):
    """One affordance net: spatial + semantic streams with role-specific fusion.

    role "pick": elementwise addition of the two streams' dense logits.
    role "query"/"key": concatenate stream features, fuse by 1x1 conv to d.
    """

    def __init__(self, config: ModelConfig, backbone: SemanticBackbone | None,
                 role: str, out_channels: int, hourglass: bool):
        super().__init__()
        self.role = role
        self.config = config
        self.hourglass = hourglass
        mode = config.stream_mode
        self.has_spatial = mode in ("two_stream", "spatial_only")
        self.has_semantic = mode in ("two_stream", "semantic_only")
        use_language = self.has_semantic and config.goal_mode == "language"
        head_out = out_channels if role == "pick" else None
        spa_feat_ch = 0
        if self.has_spatial:
            if hourglass:
                self.spatial = HourglassSpatialStream(
                    6, config.query_channels, config.query_decoder_widths, head_out)
                lat_ch = list(config.query_decoder_widths)
            else:
                self.spatial = DilatedSpatialStream(
                    6, config.spatial_channels, head_out)
                lat_ch = [config.spatial_channels[1], config.spatial_channels[2],
                          config.spatial_channels[3]]
            spa_feat_ch = self.spatial.feature_channels
        else:
            lat_ch = None
        if self.has_semantic:
            widths = (config.query_decoder_widths if hourglass
                      else config.decoder_widths)
            self.semantic = SemanticDecoder(
                backbone, widths, lat_ch if self.has_spatial else None,
                head_out, config.use_skips, use_language)
        if role in ("query", "key"):
            sem_ch = self.semantic.feature_channels if self.has_semantic else 0
            self.fuse = nn.Conv2d(sem_ch + spa_feat_ch, out_channels, 1)
            _scale_head(self.fuse)

    def forward(self, inp6: torch.Tensor, sem_inputs=None, g: torch.Tensor | None = None,
                goal_inp6: torch.Tensor | None = None) -> torch.Tensor:
        size = inp6.shape[-2:]
        spa_out = spa_feats = spa_lats = None
        if self.has_spatial:
            spa_out, spa_feats, spa_lats = self.spatial(inp6)
            if goal_inp6 is not None and self.role in ("query", "key"):
                # Image-goal conditioning: add goal-image features elementwise.
                _, g_feats, g_lats = self.spatial(goal_inp6)
                spa_feats = spa_feats + g_feats
                spa_lats = [a + b for a, b in zip(spa_lats, g_lats)]
        sem_out = sem_feats = None
        if self.has_semantic:
            v0, skips = sem_inputs
            sem_out, sem_feats = self.semantic(v0, skips, g, spa_lats, size)
        if self.role == "pick":
            if sem_out is None:
                return spa_out
            if spa_out is None:
                return sem_out
            return spa_out + sem_out
        parts = [_match(t, size) for t in (sem_feats, spa_feats) if t is not None]
        return self.fuse(torch.cat(parts, dim=1) if len(parts) > 1 else parts[0])


class RotatorHead(nn.Module):
    """Scores k rotated crops at a fixed pick pixel (parallel-gripper picks)."""

    def __init__(self, config: ModelConfig, backbone: SemanticBackbone | None):
        super().__init__()
        self.net = TwoStreamFCN(config, backbone, role="key", out_channels=4,
                                hourglass=True)
        self.score = nn.Linear(4, 1)

    def forward(self, crops6, sem_inputs, g) -> torch.Tensor:
        feats = self.net(crops6, sem_inputs, g)          # (k, 4, c, c)
        pooled = feats.mean(dim=(-2, -1))                # (k, 4)
        return self.score(pooled)[:, 0]                  # (k,)


# ---------------------------------------------------------------------------
# The full model

class AffordanceModel(nn.Module):
    """Pick net plus query/key placement nets behind one config."""

    def __init__(self, config: ModelConfig, backbone: SemanticBackbone | None = None):
        super().__init__()
        self.config = config
        if config.stream_mode == "spatial_only":
            self.backbone = None
        else:
            self.backbone = backbone or make_backbone(config.backbone)
        self.pick_net = TwoStreamFCN(config, self.backbone, role="pick",
                                     out_channels=1, hourglass=False)
        self.query_net = TwoStreamFCN(config, self.backbone, role="query",
                                      out_channels=config.corr_dim, hourglass=True)
        self.key_net = TwoStreamFCN(config, self.backbone, role="key",
                                    out_channels=config.corr_dim, hourglass=False)
        self.rotator = (RotatorHead(config, self.backbone)
                        if config.k_pick > 1 else None)

    # -- input preparation --------------------------------------------------
    @staticmethod
    def observation_planes(obs: Observation) -> np.ndarray:
        """(H, W, 9): normalized RGB, height replicated to 3, raw RGB."""
        color = obs.color.astype(np.float32)
        depth = (obs.height / HEIGHT_SCALE).astype(np.float32)
        return np.concatenate([
            color - COLOR_SHIFT,
            np.repeat(depth[:, :, None], 3, axis=2),
            color,
        ], axis=2)

    def _tensors(self, planes: np.ndarray, dtype: torch.dtype):
        t = torch.from_numpy(np.ascontiguousarray(planes.transpose(2, 0, 1))[None])
        t = t.to(dtype)
        return t[:, :6], t[:, 6:9]

    def _sem_full(self, rgb: torch.Tensor):
        if self.backbone is None:
            return None
        return self.backbone.encode_image(rgb)

    def _goal_vector(self, instruction: str | None, dtype: torch.dtype):
        if self.config.goal_mode != "language" or self.config.stream_mode == "spatial_only":
            return None
        if not instruction:
            raise ModelError("goal_mode='language' requires an instruction")
        return self.backbone.encode_text(instruction)[None].to(dtype)

    def _crops(self, planes: np.ndarray, pick: PixelPose, k: int, dtype: torch.dtype):
        c = self.config.crop_size
        crops = extract_rotated_crops(planes, (pick.u, pick.v), c, k)
        t = torch.from_numpy(np.ascontiguousarray(crops.transpose(0, 3, 1, 2))).to(dtype)
        return t[:, :6], t[:, 6:9]

    # -- forward passes -----------------------------------------------------
    def forward_maps(self, obs: Observation, instruction: str | None,
                     pick: PixelPose, goal_obs: Observation | None = None,
                     dtype: torch.dtype = torch.float32,
                     ) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forcible forward: q_pick (1, k, H, W) and q_place (k, H, W)."""
        cfg = self.config
        h, w = obs.frame.height, obs.frame.width
        if not (0 <= pick.u < h and 0 <= pick.v < w):
            raise ModelError(f"pick pixel ({pick.u}, {pick.v}) out of bounds")
        planes = self.observation_planes(obs)
        inp6, rgb = self._tensors(planes, dtype)
        sem_inputs = self._sem_full(rgb)
        g = self._goal_vector(instruction, dtype)
        goal_inp6 = None
        if cfg.goal_mode == "image_goal":
            if goal_obs is None:
                raise ModelError("goal_mode='image_goal' requires a goal observation")
            goal_inp6, _ = self._tensors(self.observation_planes(goal_obs), dtype)

        q_pick = self.pick_net(inp6, sem_inputs, g)                 # (1, 1, H, W)
        if self.rotator is not None:
            crops6, crops_rgb = self._crops(planes, pick, cfg.k_pick, dtype)
            sem_crops = self._sem_full(crops_rgb)
            g_k = g.expand(cfg.k_pick, -1) if g is not None else None
            rot_scores = self.rotator(crops6, sem_crops, g_k)       # (k_pick,)
            q_pick = q_pick + rot_scores[None, :, None, None]
        key = self.key_net(inp6, sem_inputs, g, goal_inp6=goal_inp6)  # (1, d, H, W)
        crops6, crops_rgb = self._crops(planes, pick, cfg.k_place, dtype)
        sem_crops = self._sem_full(crops_rgb)
        g_k = g.expand(cfg.k_place, -1) if g is not None else None
        goal_crops = None
        if goal_inp6 is not None:
            goal_planes = self.observation_planes(goal_obs)
            goal_crops, _ = self._crops(goal_planes, pick, cfg.k_place, dtype)
        kernels = self.query_net(crops6, sem_crops, g_k, goal_inp6=goal_crops)
        q_place = correlate_torch(kernels, key, method=cfg.correlation)  # (k, H, W)
        return q_pick, q_place

    @torch.no_grad()
    def forward_pick(self, obs: Observation, instruction: str | None = None,
                     ) -> np.ndarray:
        """q_pick as (H, W, k_pick)."""
        planes = self.observation_planes(obs)
        inp6, rgb = self._tensors(planes, torch.float32)
        sem_inputs = self._sem_full(rgb)
        g = self._goal_vector(instruction, torch.float32)
        q = self.pick_net(inp6, sem_inputs, g)[0]        # (1, H, W)
        q_map = q.permute(1, 2, 0).numpy()
        if self.rotator is None:
            return q_map
        u, v = np.unravel_index(int(np.argmax(q_map[:, :, 0])), q_map.shape[:2])
        crops6, crops_rgb = self._crops(planes, PixelPose(int(u), int(v)),
                                        self.config.k_pick, torch.float32)
        sem_crops = self._sem_full(crops_rgb)
        g_k = g.expand(self.config.k_pick, -1) if g is not None else None
        rot = self.rotator(crops6, sem_crops, g_k).numpy()
        return q_map + rot[None, None, :]

    @torch.no_grad()
    def forward_place(self, obs: Observation, instruction: str | None,
                      pick: PixelPose, goal_obs: Observation | None = None,
                      ) -> np.ndarray:
        """q_place as (H, W, k_place), conditioned on the pick location."""
        _, q_place = self.forward_maps(obs, instruction, pick, goal_obs)
        return q_place.permute(1, 2, 0).numpy()

    @torch.no_grad()
    def affordances(self, obs: Observation, instruction: str | None = None,
                    goal_obs: Observation | None = None) -> AffordanceMaps:
        q_pick = self.forward_pick(obs, instruction)
        pu, pv, _ = np.unravel_index(int(np.argmax(q_pick)), q_pick.shape)
        q_place = self.forward_place(obs, instruction,
                                     PixelPose(int(pu), int(pv)), goal_obs)
        return AffordanceMaps(q_pick=q_pick, q_place=q_place)

    def act(self, obs: Observation, instruction: str | None = None,
            goal_obs: Observation | None = None) -> PixelAction:
        return select_action(self.affordances(obs, instruction, goal_obs))

    # -- bookkeeping ----------------------------------------------------------
    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.detach().cpu().numpy()).tobytes())
        return h.hexdigest()


def audit_normalization_free(model: nn.Module) -> list[str]:
    """Names of trainable modules that are normalization layers (expect none)."""
    bad = []
    norm_types = (nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d, nn.LayerNorm,
                  nn.GroupNorm, nn.InstanceNorm1d, nn.InstanceNorm2d,
                  nn.InstanceNorm3d, nn.SyncBatchNorm)
    for name, module in model.named_modules():
        if isinstance(module, norm_types):
            if any(p.requires_grad for p in module.parameters(recurse=False)):
                bad.append(name)
    return bad


def trainable_module_types(model: nn.Module) -> set[type]:
    """Types of leaf modules that own trainable parameters."""
    kinds = set()
    for module in model.modules():
        if any(True for _ in module.children()):
            continue
        if any(p.requires_grad for p in module.parameters(recurse=False)):
            kinds.add(type(module))
    return kinds
