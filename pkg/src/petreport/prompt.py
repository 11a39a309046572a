"""Decoder prompt assembly.

The decoder never sees raw volumes: it sees a fixed-layout prompt where
the two resampled visual token blocks sit between marker tokens, followed
by the center/gender findings template and a short task instruction:

    ⟨ct⟩ ...128 ct tokens... ⟨/ct⟩ ⟨pet⟩ ...128 pet tokens... ⟨/pet⟩
    ⟨template⟩ ...template words... ⟨/template⟩ ...instruction words...

Marker and text positions carry real token ids; visual positions carry
the pad id in ``token_ids`` and the projected encoder outputs in
``embeds``. When the assembled prompt would exceed the input budget the
template is truncated from its tail and the drop is recorded; markers,
visual tokens and instruction are never cut.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Tuple

import torch

from .errors import ConfigError
from .tokenizer import (
    CT_CLOSE,
    CT_OPEN,
    PET_CLOSE,
    PET_OPEN,
    TEMPLATE_CLOSE,
    TEMPLATE_OPEN,
    WordTokenizer,
)

logger = logging.getLogger(__name__)

INSTRUCTION_VERSION = "instruct-v1"


def load_instruction() -> str:
    """Read the packaged generation instruction, minus its version header."""
    text = (
        resources.files("petreport").joinpath("assets/instruction.txt").read_text("utf-8")
    )
    header, _, body = text.partition("\n")
    expected = f"version: {INSTRUCTION_VERSION}"
    if header.strip() != expected:
        raise ConfigError(
            f"instruction asset header {header.strip()!r} does not match {expected!r}"
        )
    return body.strip()


@dataclass
class PromptBundle:
    """Assembled prompt: ids for bookkeeping, embeds for the decoder."""

    token_ids: List[int]
    embeds: torch.Tensor  # (1, length, width)
    spans: Dict[str, Tuple[int, int]]  # half-open position ranges
    template_tokens_dropped: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def truncated(self) -> bool:
        return self.template_tokens_dropped > 0


def prompt_token_ids(
    center_id: int,
    gender: str,
    templates,
    tokenizer: WordTokenizer,
    instruction: Optional[str] = None,
    max_input_tokens: int = 2048,
    n_ct: int = 128,
    n_pet: int = 128,
) -> Tuple[List[int], Dict[str, Tuple[int, int]], int]:
    """Pure id-level assembly: (ids, spans, dropped template tokens).

    Visual positions carry the pad id; this is the part of the prompt
    that must be identical across runs for fixed inputs.
    """
    template_text = templates.lookup(center_id, gender)
    if instruction is None:
        instruction = load_instruction()
    template_ids = tokenizer.encode(template_text)
    instruction_ids = tokenizer.encode(instruction)

    fixed = 6 + n_ct + n_pet  # markers plus both visual spans
    budget = max_input_tokens - fixed - len(instruction_ids)
    if budget < 0:
        raise ConfigError(
            f"markers, visual tokens and instruction need {fixed + len(instruction_ids)} "
            f"positions but the input limit is {max_input_tokens}"
        )
    dropped = max(0, len(template_ids) - budget)
    if dropped:
        template_ids = template_ids[: len(template_ids) - dropped]

    pad = tokenizer.pad_id
    tid = tokenizer.token_id
    ids: List[int] = [tid(CT_OPEN)]
    ct_span = (len(ids), len(ids) + n_ct)
    ids += [pad] * n_ct
    ids += [tid(CT_CLOSE), tid(PET_OPEN)]
    pet_span = (len(ids), len(ids) + n_pet)
    ids += [pad] * n_pet
    ids += [tid(PET_CLOSE), tid(TEMPLATE_OPEN)]
    template_span = (len(ids), len(ids) + len(template_ids))
    ids += template_ids
    ids.append(tid(TEMPLATE_CLOSE))
    instruction_span = (len(ids), len(ids) + len(instruction_ids))
    ids += instruction_ids
    spans = {
        "ct": ct_span,
        "pet": pet_span,
        "template": template_span,
        "instruction": instruction_span,
    }
    return ids, spans, dropped


def _as_block(tokens: torch.Tensor, width: int, name: str) -> torch.Tensor:
    if tokens.dim() == 2:
        tokens = tokens.unsqueeze(0)
    if tokens.dim() != 3 or tokens.shape[0] != 1:
        raise ValueError(f"{name} block must be (1, n, width), got {tuple(tokens.shape)}")
    if tokens.shape[-1] != width:
        raise ValueError(
            f"{name} block width {tokens.shape[-1]} does not match decoder width {width}"
        )
    return tokens


def assemble_prompt(
    ct_tokens: torch.Tensor,
    pet_tokens: torch.Tensor,
    center_id: int,
    gender: str,
    templates,
    tokenizer: WordTokenizer,
    decoder,
    instruction: Optional[str] = None,
    max_input_tokens: int = 2048,
) -> PromptBundle:
    """Build the decoder input for one case.

    ``templates.lookup`` decides whether the center/gender pair exists;
    its error passes through untouched.
    """
    width = decoder.width
    ct_tokens = _as_block(ct_tokens, width, "ct")
    pet_tokens = _as_block(pet_tokens, width, "pet")
    ids, spans, dropped = prompt_token_ids(
        center_id,
        gender,
        templates,
        tokenizer,
        instruction,
        max_input_tokens,
        n_ct=ct_tokens.shape[1],
        n_pet=pet_tokens.shape[1],
    )
    warnings: List[str] = []
    if dropped:
        msg = (
            f"template truncated: dropped {dropped} trailing tokens to fit "
            f"the {max_input_tokens}-token input limit"
        )
        warnings.append(msg)
        logger.warning(msg)

    ct_span, pet_span = spans["ct"], spans["pet"]
    id_tensor = torch.tensor([ids], dtype=torch.long)
    text_embeds = decoder.embed_ids(id_tensor)
    embeds = torch.cat(
        [
            text_embeds[:, : ct_span[0]],
            ct_tokens.to(text_embeds.dtype),
            text_embeds[:, ct_span[1] : pet_span[0]],
            pet_tokens.to(text_embeds.dtype),
            text_embeds[:, pet_span[1] :],
        ],
        dim=1,
    )
    assert embeds.shape[1] == len(ids)

    return PromptBundle(
        token_ids=ids,
        embeds=embeds,
        spans=spans,
        template_tokens_dropped=dropped,
        warnings=warnings,
    )
