"""Decoding loop for report generation.

Sampling works against a minimal step protocol: a callable that maps the
list of already-generated token ids to next-token logits. That keeps the
loop testable with hand-built toy models and independent of how the
prompt was assembled. The repetition penalty only ever sees generated
ids, never the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import torch

from .config import GenerationConfig
from .errors import ConfigError
from .prompt import PromptBundle

StepFn = Callable[[List[int]], torch.Tensor]


def apply_repetition_penalty(
    logits: torch.Tensor, generated_ids: Sequence[int], penalty: float
) -> torch.Tensor:
    """Scale logits of already-emitted tokens away from re-selection."""
    if penalty == 1.0 or not generated_ids:
        return logits
    out = logits.clone()
    idx = torch.tensor(sorted(set(int(i) for i in generated_ids)), dtype=torch.long)
    vals = out[idx]
    out[idx] = torch.where(vals > 0, vals / penalty, vals * penalty)
    return out


def top_p_filter(probs: torch.Tensor, top_p: float) -> torch.Tensor:
    """Zero out the improbable tail, keep the smallest nucleus, renormalize."""
    if top_p >= 1.0:
        return probs
    sorted_probs, sorted_idx = torch.sort(probs, descending=True)
    exclusive_cum = torch.cumsum(sorted_probs, dim=0) - sorted_probs
    keep_sorted = exclusive_cum < top_p  # position 0 always survives
    keep = torch.zeros_like(probs, dtype=torch.bool)
    keep[sorted_idx] = keep_sorted
    filtered = torch.where(keep, probs, torch.zeros_like(probs))
    return filtered / filtered.sum()


def sample_next(
    logits: torch.Tensor,
    generated_ids: Sequence[int],
    cfg: GenerationConfig,
    rng: Optional[torch.Generator] = None,
) -> int:
    logits = apply_repetition_penalty(logits.float(), generated_ids, cfg.repetition_penalty)
    if cfg.greedy_mode:
        return int(torch.argmax(logits))
    probs = torch.softmax(logits / cfg.temperature, dim=-1)
    probs = top_p_filter(probs, cfg.top_p)
    return int(torch.multinomial(probs, 1, generator=rng))


@dataclass
class GenerationResult:
    token_ids: List[int]
    text: str
    stop_reason: str  # "stop_token" or "max_tokens"

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)


def generate_ids(
    step_fn: StepFn,
    cfg: GenerationConfig,
    stop_id: int,
    seed: int = 0,
) -> Tuple[List[int], str]:
    """Sample until the stop id appears or the new-token budget runs out.

    The stop id terminates the loop and is never part of the output.
    """
    cfg.validate()
    rng = torch.Generator().manual_seed(seed)
    ids: List[int] = []
    for _ in range(cfg.max_new_tokens):
        logits = step_fn(ids)
        next_id = sample_next(logits, ids, cfg, rng)
        if next_id == stop_id:
            return ids, "stop_token"
        ids.append(next_id)
    return ids, "max_tokens"


def decoder_step_fn(model, bundle: PromptBundle) -> StepFn:
    """Full-prefix recompute step over an assembled prompt."""
    prompt = bundle.embeds

    def step(generated_ids: List[int]) -> torch.Tensor:
        with torch.no_grad():
            embeds = prompt
            if generated_ids:
                tail = model.decoder.embed_ids(
                    torch.tensor([generated_ids], dtype=torch.long)
                )
                embeds = torch.cat([prompt, tail], dim=1)
            return model.decoder(inputs_embeds=embeds)[0, -1]

    return step


def generate_report(
    model,
    bundle: PromptBundle,
    cfg: Optional[GenerationConfig] = None,
    seed: int = 0,
) -> GenerationResult:
    """Decode one report from an assembled prompt."""
    if cfg is None:
        cfg = model.cfg.generation
    stop_id = model.tokenizer.token_id(cfg.stop_token)
    if stop_id == model.tokenizer.unk_id:
        raise ConfigError(f"stop token {cfg.stop_token!r} is not in the vocabulary")
    was_training = model.training
    model.eval()
    try:
        ids, reason = generate_ids(decoder_step_fn(model, bundle), cfg, stop_id, seed)
    finally:
        if was_training:
            model.train()
    text = model.tokenizer.decode(ids, skip_special=True)
    return GenerationResult(token_ids=ids, text=text, stop_reason=reason)
