"""Dual-stream volumetric encoder.

A shared window encoder (patch embedding + small transformer) turns each
non-overlapping window of a padded volume into patch tokens; the
concatenated variable-length sequence is then compressed per modality by
a perceiver-style sampler into exactly 128 tokens of width 768, and
projected token-wise into the decoder embedding space. The window
encoder can be frozen (the default), leaving samplers and projections as
the only trainable vision parameters.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from .config import EncoderConfig
from .errors import InvalidVolumeError
from .volumes import VolumeGrid


def window_counts(shape: Sequence[int], window: Sequence[int]) -> Tuple[int, int, int]:
    """Windows per axis after padding: ceil(size / window)."""
    return tuple(-(-int(s) // int(w)) for s, w in zip(shape, window))


def num_windows(shape: Sequence[int], window: Sequence[int]) -> int:
    counts = window_counts(shape, window)
    return counts[0] * counts[1] * counts[2]


def pad_to_windows(values: torch.Tensor, window: Sequence[int]) -> torch.Tensor:
    """Zero-pad a (X, Y, Z) tensor at the high end to window multiples."""
    counts = window_counts(values.shape, window)
    target = [c * w for c, w in zip(counts, window)]
    pad = []
    for axis in (2, 1, 0):  # F.pad wants last-axis-first pairs
        pad.extend([0, target[axis] - values.shape[axis]])
    return torch.nn.functional.pad(values, pad)


def iter_windows(values: torch.Tensor, window: Sequence[int]) -> torch.Tensor:
    """Stack the non-overlapping windows of a padded volume.

    Raster order: x fastest to slowest as (x, y, z) nested loops, matching
    the closed-form count. Output shape (n_windows, *window).
    """
    padded = pad_to_windows(values, window)
    nx, ny, nz = window_counts(values.shape, window)
    wx, wy, wz = window
    out = []
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                out.append(padded[ix * wx:(ix + 1) * wx,
                                  iy * wy:(iy + 1) * wy,
                                  iz * wz:(iz + 1) * wz])
    return torch.stack(out)


class WindowEncoder(nn.Module):
    """Patch embedding plus a small transformer, applied per window."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        width = cfg.token_width
        self.patch_embed = nn.Conv3d(1, width, kernel_size=cfg.patch_shape,
                                     stride=cfg.patch_shape)
        tokens_per_window = 1
        for w, p in zip(cfg.window_shape, cfg.patch_shape):
            tokens_per_window *= w // p
        self.tokens_per_window = tokens_per_window
        self.pos_embed = nn.Parameter(torch.zeros(1, tokens_per_window, width))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=width, nhead=cfg.encoder_heads, dim_feedforward=4 * width,
            batch_first=True, dropout=0.0, activation="gelu",
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=cfg.encoder_depth)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        # windows: (n, wx, wy, wz) -> (n, tokens_per_window, width)
        x = self.patch_embed(windows.unsqueeze(1))
        x = x.flatten(2).transpose(1, 2)
        return self.blocks(x + self.pos_embed)


class PerceiverResampler(nn.Module):
    """Learned latent queries cross-attending over a feature sequence.

    Output length equals the number of latents no matter how long the
    input is.
    """

    def __init__(self, width: int, n_latents: int, depth: int, heads: int,
                 ff_mult: int):
        super().__init__()
        self.latents = nn.Parameter(torch.randn(n_latents, width) * 0.02)
        self.layers = nn.ModuleList()
        for _ in range(depth):
            self.layers.append(nn.ModuleDict({
                "norm_q": nn.LayerNorm(width),
                "norm_kv": nn.LayerNorm(width),
                "attn": nn.MultiheadAttention(width, heads, batch_first=True),
                "norm_ff": nn.LayerNorm(width),
                "ff": nn.Sequential(
                    nn.Linear(width, ff_mult * width),
                    nn.GELU(),
                    nn.Linear(ff_mult * width, width),
                ),
            }))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        # features: (B, L, width) -> (B, n_latents, width)
        if features.ndim != 3 or features.shape[1] < 1:
            raise InvalidVolumeError(
                f"sampler needs a (B, L>=1, width) sequence, got {tuple(features.shape)}"
            )
        x = self.latents.unsqueeze(0).expand(features.shape[0], -1, -1).to(features.dtype)
        for layer in self.layers:
            q = layer["norm_q"](x)
            kv = layer["norm_kv"](features)
            attended, _ = layer["attn"](q, kv, kv, need_weights=False)
            x = x + attended
            x = x + layer["ff"](layer["norm_ff"](x))
        return x


class DualStreamEncoder(nn.Module):
    """Shared window encoder with per-modality samplers and projections."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.window_encoder = WindowEncoder(cfg)
        sampler = lambda: PerceiverResampler(
            cfg.token_width, cfg.latent_tokens, cfg.sampler_depth,
            cfg.sampler_heads, cfg.sampler_ff_mult,
        )
        self.pet_sampler = sampler()
        self.ct_sampler = sampler()
        self.pet_projection = nn.Linear(cfg.token_width, cfg.decoder_width)
        self.ct_projection = nn.Linear(cfg.token_width, cfg.decoder_width)
        if cfg.freeze_encoder:
            for p in self.window_encoder.parameters():
                p.requires_grad_(False)

    # -- stages -------------------------------------------------------

    def encode_volume(self, volume: Union[VolumeGrid, np.ndarray, torch.Tensor]) -> torch.Tensor:
        """Variable-length feature sequence (1, n_windows * tokens_per_window, width)."""
        if isinstance(volume, VolumeGrid):
            values = volume.values
        else:
            values = volume
        if isinstance(values, np.ndarray):
            values = torch.from_numpy(np.ascontiguousarray(values))
        values = values.to(next(self.parameters()).dtype)
        if values.ndim != 3 or values.numel() == 0:
            raise InvalidVolumeError(
                f"encoder expects a non-empty 3D volume, got shape {tuple(values.shape)}"
            )
        windows = iter_windows(values, self.cfg.window_shape)
        feats = self.window_encoder(windows)           # (n, t, width)
        return feats.reshape(1, -1, self.cfg.token_width)

    def perceiver_sample(self, features: torch.Tensor, modality: str) -> torch.Tensor:
        sampler = self._pick(modality, self.pet_sampler, self.ct_sampler)
        return sampler(features)

    def project_tokens(self, block: torch.Tensor, modality: str) -> torch.Tensor:
        if block.shape[-1] != self.cfg.token_width:
            raise InvalidVolumeError(
                f"projection expects width {self.cfg.token_width}, got {block.shape[-1]}"
            )
        projection = self._pick(modality, self.pet_projection, self.ct_projection)
        return projection(block)

    def tokens_for(self, volume, modality: str) -> torch.Tensor:
        """Full chain: volume -> (1, 128, decoder_width)."""
        return self.project_tokens(
            self.perceiver_sample(self.encode_volume(volume), modality), modality
        )

    @staticmethod
    def _pick(modality: str, pet, ct):
        if modality == "pet":
            return pet
        if modality == "ct":
            return ct
        raise InvalidVolumeError(f"modality must be pet or ct, got {modality!r}")
