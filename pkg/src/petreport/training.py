"""Adapter training for the report generator.

Only a thin sliver of the model trains: the two token resamplers, their
projections, the LoRA matrices, and the marker-token embedding rows.
Everything else is frozen at construction, which keeps checkpoints tiny
(trainable tensors plus a config fingerprint) and lets the expensive
window-encoder pass be cached per case.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import PipelineConfig, TrainConfig, config_from_dict
from .dataio import PreppedCase
from .decoder import ToyDecoder
from .encoder import DualStreamEncoder
from .errors import ConfigError, DataError
from .lora import attach_lora
from .prompt import PromptBundle, assemble_prompt, prompt_token_ids
from .tokenizer import WordTokenizer

# every trainable parameter name must contain one of these markers
TRAINABLE_GROUPS = (
    "pet_sampler",
    "ct_sampler",
    "pet_projection",
    "ct_projection",
    "lora_",
    "special_token_embeddings",
)


def lr_at_step(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, constant afterwards."""
    if cfg.warmup_steps <= 0:
        return cfg.base_lr
    return cfg.base_lr * min(1.0, step / cfg.warmup_steps)


class ReportModel(nn.Module):
    """Encoder + adapted decoder + tokenizer, built deterministically."""

    def __init__(self, cfg: PipelineConfig, tokenizer: WordTokenizer):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = tokenizer
        torch.manual_seed(cfg.train.seed)
        self.encoder = DualStreamEncoder(cfg.encoder)
        self.decoder = ToyDecoder(
            tokenizer.vocab_size, cfg.encoder.decoder_width, tokenizer.special_id_range
        )
        self.adapted_paths = attach_lora(self.decoder, cfg.lora)
        # filled by pretrain_base; persisted so checkpoints can rebuild
        # the frozen base deterministically without storing its tensors
        self.pretrain_rows: List[Tuple[List[int], int]] = []

    def prompt_for(
        self,
        pet_features: torch.Tensor,
        ct_features: torch.Tensor,
        center_id: int,
        gender: str,
        templates,
        instruction: Optional[str] = None,
    ) -> PromptBundle:
        ct_block = self.encoder.project_tokens(
            self.encoder.perceiver_sample(ct_features, "ct"), "ct"
        )
        pet_block = self.encoder.project_tokens(
            self.encoder.perceiver_sample(pet_features, "pet"), "pet"
        )
        return assemble_prompt(
            ct_block,
            pet_block,
            center_id,
            gender,
            templates,
            self.tokenizer,
            self.decoder,
            instruction=instruction,
            max_input_tokens=self.cfg.generation.max_input_tokens,
        )


def trainable_parameter_names(model: nn.Module) -> List[str]:
    return sorted(n for n, p in model.named_parameters() if p.requires_grad)


def assert_trainable_contract(model: nn.Module):
    """Trainables must cover exactly the adapter groups, nothing else."""
    names = trainable_parameter_names(model)
    stray = [n for n in names if not any(g in n for g in TRAINABLE_GROUPS)]
    if stray:
        raise ConfigError(f"unexpected trainable parameters: {stray}")
    missing = [g for g in TRAINABLE_GROUPS if not any(g in n for n in names)]
    if missing:
        raise ConfigError(f"no trainable parameters found for: {missing}")


def frozen_state_hash(model: nn.Module) -> str:
    """Order-stable digest of every frozen parameter, for drift checks."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        if not p.requires_grad:
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# -- per-case feature cache -------------------------------------------


@dataclass
class TrainingExample:
    """One case, reduced to what the trainable stack consumes."""

    case_id: str
    pet_features: torch.Tensor  # (1, L, token_width), frozen-encoder output
    ct_features: torch.Tensor
    center_id: int
    gender: str
    target_ids: List[int]  # findings tokens, stop token last


def encode_case_features(model: ReportModel, case: PreppedCase) -> Tuple[torch.Tensor, torch.Tensor]:
    with torch.no_grad():
        pet = model.encoder.encode_volume(case.pet)
        ct = model.encoder.encode_volume(case.ct)
    return pet, ct


def build_training_example(
    model: ReportModel, case: PreppedCase, cache_dir: Optional[Path] = None
) -> TrainingExample:
    findings = case.report.findings.strip()
    if not findings:
        raise DataError(f"case {case.case_id} has an empty findings section")
    target_ids = model.tokenizer.encode(findings, add_stop=True)

    pet = ct = None
    cache_path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache_path = cache_dir / f"{case.case_id}_{model.cfg.fingerprint()[:8]}.pt"
        if cache_path.exists():
            blob = torch.load(cache_path, weights_only=True)
            pet, ct = blob["pet"], blob["ct"]
    if pet is None:
        pet, ct = encode_case_features(model, case)
        if cache_path is not None:
            torch.save({"pet": pet, "ct": ct}, cache_path)

    return TrainingExample(
        case_id=case.case_id,
        pet_features=pet,
        ct_features=ct,
        center_id=case.meta.center_id,
        gender=case.meta.gender,
        target_ids=target_ids,
    )


def build_training_set(
    model: ReportModel,
    cases: Iterable[PreppedCase],
    cache_dir: Optional[Path] = None,
) -> List[TrainingExample]:
    return [build_training_example(model, case, cache_dir) for case in cases]


# -- base pretraining --------------------------------------------------


def _run_base_fit(model: ReportModel, rows: Sequence[Tuple[Sequence[int], int]],
                  log_fn=None) -> List[float]:
    """Fit all non-adapter decoder params on (sequence, prompt_len) rows."""
    cfg = model.cfg.train
    tok = model.tokenizer
    longest = max(len(seq) for seq, _ in rows)
    input_ids = torch.full((len(rows), longest), tok.pad_id, dtype=torch.long)
    labels = torch.full((len(rows), longest), -100, dtype=torch.long)
    for i, (seq, prompt_len) in enumerate(rows):
        seq_t = torch.tensor(seq, dtype=torch.long)
        input_ids[i, : len(seq)] = seq_t
        labels[i, prompt_len : len(seq)] = seq_t[prompt_len:]

    for name, p in model.decoder.named_parameters():
        p.requires_grad_("lora_" not in name)
    params = [p for p in model.decoder.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.pretrain_lr,
                                  weight_decay=cfg.weight_decay)
    losses = []
    was_training = model.training
    model.train()
    warmup = min(20, max(1, cfg.pretrain_steps // 10))
    for step in range(1, cfg.pretrain_steps + 1):
        for group in optimizer.param_groups:
            group["lr"] = cfg.pretrain_lr * min(1.0, step / warmup)
        optimizer.zero_grad()
        loss = masked_lm_loss(model.decoder(input_ids=input_ids), labels)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
        if log_fn is not None:
            log_fn(step, losses[-1])
    # refreeze: only adapters and marker rows stay trainable
    for name, p in model.decoder.named_parameters():
        p.requires_grad_("lora_" in name or "special_token_embeddings" in name)
        p.grad = None
    if not was_training:
        model.eval()
    return losses


def pretrain_base(
    model: ReportModel,
    examples: Sequence["TrainingExample"],
    templates,
    instruction: Optional[str] = None,
    log_fn=None,
) -> List[float]:
    """Language-model fit of the stand-in base decoder, then refreeze.

    Runs on the real prompt layout (pad placeholders in the visual
    spans) so positions and markers match adaptation. The LoRA tensors
    are left untouched, so the adapted model still equals the base
    exactly when adaptation starts. The fitted rows are remembered on
    the model; checkpoints replay them instead of storing base weights.
    """
    if model.cfg.train.pretrain_steps == 0 or not examples:
        return []
    rows = []
    for ex in examples:
        ids, _, _ = prompt_token_ids(
            ex.center_id, ex.gender, templates, model.tokenizer,
            instruction, model.cfg.generation.max_input_tokens,
        )
        rows.append((ids + list(ex.target_ids), len(ids)))
    model.pretrain_rows = rows
    return _run_base_fit(model, rows, log_fn)


# -- loss --------------------------------------------------------------


def _example_tensors(
    model: ReportModel, example: TrainingExample, templates, instruction
) -> Tuple[torch.Tensor, torch.Tensor]:
    bundle = model.prompt_for(
        example.pet_features,
        example.ct_features,
        example.center_id,
        example.gender,
        templates,
        instruction=instruction,
    )
    target = torch.tensor([example.target_ids], dtype=torch.long)
    embeds = torch.cat([bundle.embeds, model.decoder.embed_ids(target)], dim=1)
    labels = torch.full((1, embeds.shape[1]), -100, dtype=torch.long)
    labels[0, bundle.length :] = target[0]
    return embeds, labels


def _collate(pairs: Sequence[Tuple[torch.Tensor, torch.Tensor]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = pairs[0][0].shape[-1]
    longest = max(e.shape[1] for e, _ in pairs)
    embeds = torch.zeros(len(pairs), longest, width, dtype=pairs[0][0].dtype)
    labels = torch.full((len(pairs), longest), -100, dtype=torch.long)
    for i, (e, l) in enumerate(pairs):
        n = e.shape[1]
        embeds[i, :n] = e[0]
        labels[i, :n] = l[0]
    return embeds, labels


def masked_lm_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross entropy over report positions only."""
    shifted_logits = logits[:, :-1].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    if int((shifted_labels != -100).sum()) == 0:
        raise DataError("batch contains no report tokens to train on")
    return F.cross_entropy(shifted_logits, shifted_labels, ignore_index=-100)


def batch_loss(
    model: ReportModel,
    batch: Sequence[TrainingExample],
    templates,
    instruction=None,
) -> torch.Tensor:
    pairs = [_example_tensors(model, ex, templates, instruction) for ex in batch]
    embeds, labels = _collate(pairs)
    logits = model.decoder(inputs_embeds=embeds)
    return masked_lm_loss(logits, labels)


# -- loop --------------------------------------------------------------


@dataclass
class TrainHistory:
    step_losses: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.step_losses)


def train_model(
    model: ReportModel,
    examples: Sequence[TrainingExample],
    templates,
    instruction: Optional[str] = None,
    log_fn=None,
) -> TrainHistory:
    """Run the accumulation loop until the epoch or max-step budget ends."""
    if not examples:
        raise DataError("no training examples")
    cfg = model.cfg.train
    if model.cfg.encoder.freeze_encoder:
        assert_trainable_contract(model)
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    order_rng = random.Random(cfg.seed)
    history = TrainHistory()
    step = 0

    for _epoch in range(cfg.epochs):
        order = list(range(len(examples)))
        order_rng.shuffle(order)
        micro_batches = [
            order[i : i + cfg.micro_batch] for i in range(0, len(order), cfg.micro_batch)
        ]
        for start in range(0, len(micro_batches), cfg.accum_steps):
            window = micro_batches[start : start + cfg.accum_steps]
            step += 1
            lr = lr_at_step(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            micro_losses = []
            for indices in window:
                loss = batch_loss(model, [examples[i] for i in indices], templates, instruction)
                (loss / len(window)).backward()
                micro_losses.append(float(loss.detach()))
            optimizer.step()
            history.step_losses.append(sum(micro_losses) / len(micro_losses))
            history.learning_rates.append(lr)
            if log_fn is not None:
                log_fn(step, history.step_losses[-1], lr)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return history
    return history


# -- checkpoints -------------------------------------------------------


def save_checkpoint(path, model: ReportModel):
    """Persist config fingerprint, vocab and trainable tensors only."""
    trainable = {
        n: p.detach().cpu().clone()
        for n, p in model.named_parameters()
        if p.requires_grad
    }
    payload = {
        "fingerprint": model.cfg.fingerprint(),
        "config": model.cfg.to_dict(),
        "seed": model.cfg.train.seed,
        "vocab": list(model.tokenizer._id_to_token),
        "pretrain_rows": [(list(seq), int(n)) for seq, n in model.pretrain_rows],
        "trainable": trainable,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> ReportModel:
    """Rebuild the frozen model from config + seed, then load trainables."""
    payload = torch.load(path, weights_only=False)
    cfg = config_from_dict(payload["config"])
    if cfg.fingerprint() != payload["fingerprint"]:
        raise ConfigError("checkpoint fingerprint does not match its stored config")
    tokenizer = WordTokenizer()
    for token in payload["vocab"]:
        tokenizer._add(token)
    model = ReportModel(cfg, tokenizer)
    rows = payload.get("pretrain_rows", [])
    if rows:
        model.pretrain_rows = [(list(seq), int(n)) for seq, n in rows]
        _run_base_fit(model, model.pretrain_rows)
    expected = set(trainable_parameter_names(model))
    got = set(payload["trainable"])
    if expected != got:
        raise ConfigError(
            f"checkpoint trainable set mismatch: missing {sorted(expected - got)}, "
            f"unexpected {sorted(got - expected)}"
        )
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.requires_grad:
                p.copy_(payload["trainable"][name])
    return model
