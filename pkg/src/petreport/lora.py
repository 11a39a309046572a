"""Low-rank adapters for the decoder's attention projections.

Each adapted weight W gains an additive update (alpha/rank) * B @ A with
A random and B zero at init, so the adapted model starts exactly equal
to the base model. Only A and B train; the wrapped projection stays
frozen.
"""

from __future__ import annotations

import math
from typing import Dict, List

import torch
from torch import nn

from .config import LoraConfig
from .decoder import ToyDecoder
from .errors import ConfigError

# config-level matrix names -> decoder projection attributes
TARGET_PROJECTIONS: Dict[str, str] = {
    "query": "q_proj",
    "key": "k_proj",
    "value": "v_proj",
    "output": "o_proj",
}


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_A = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        self.lora_dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        update = self.lora_dropout(x) @ self.lora_A.t() @ self.lora_B.t()
        return self.base(x) + self.scaling * update

    @property
    def trainable_parameter_count(self) -> int:
        return self.lora_A.numel() + self.lora_B.numel()


def attach_lora(decoder: ToyDecoder, cfg: LoraConfig) -> List[str]:
    """Wrap the configured projections in every block, in place.

    Returns the dotted paths of the adapted modules; adapting twice is a
    config error rather than a silent double-wrap.
    """
    cfg.validate()
    adapted: List[str] = []
    for i, block in enumerate(decoder.blocks):
        for target in cfg.target_matrices:
            proj_name = TARGET_PROJECTIONS[target]
            current = getattr(block.attn, proj_name)
            if isinstance(current, LoraLinear):
                raise ConfigError(f"blocks.{i}.attn.{proj_name} already has an adapter")
            if not isinstance(current, nn.Linear):
                raise ConfigError(f"blocks.{i}.attn.{proj_name} is not a linear layer")
            setattr(block.attn, proj_name,
                    LoraLinear(current, cfg.rank, cfg.alpha, cfg.dropout))
            adapted.append(f"blocks.{i}.attn.{proj_name}")
    return adapted


def lora_parameter_count(decoder: ToyDecoder) -> int:
    return sum(
        m.trainable_parameter_count
        for m in decoder.modules()
        if isinstance(m, LoraLinear)
    )
