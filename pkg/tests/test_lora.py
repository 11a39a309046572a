import pytest
import torch

from petreport.config import LoraConfig
from petreport.decoder import ToyDecoder
from petreport.errors import ConfigError
from petreport.lora import LoraLinear, attach_lora, lora_parameter_count

VOCAB = 40
WIDTH = 32


def make_decoder(seed=0):
    torch.manual_seed(seed)
    return ToyDecoder(VOCAB, WIDTH, (2, 9))


def test_scaling_is_alpha_over_rank():
    cfg = LoraConfig()
    assert cfg.rank == 8 and cfg.alpha == 32.0
    assert cfg.scaling == 4.0
    layer = LoraLinear(torch.nn.Linear(WIDTH, WIDTH), cfg.rank, cfg.alpha, 0.0)
    assert layer.scaling == 4.0


def test_adapted_model_equals_base_at_init():
    dec = make_decoder().eval()
    ids = torch.randint(0, VOCAB, (2, 11))
    before = dec(input_ids=ids)
    attach_lora(dec, LoraConfig())
    dec.eval()
    assert torch.equal(dec(input_ids=ids), before)
    # B starts at zero, so equality holds bit for bit even in train mode
    dec.train()
    assert torch.equal(dec(input_ids=ids), before)


def test_attach_paths_default_targets():
    dec = make_decoder()
    paths = attach_lora(dec, LoraConfig())
    assert paths == [
        "blocks.0.attn.q_proj",
        "blocks.0.attn.v_proj",
        "blocks.1.attn.q_proj",
        "blocks.1.attn.v_proj",
    ]
    assert isinstance(dec.blocks[0].attn.q_proj, LoraLinear)
    assert isinstance(dec.blocks[0].attn.k_proj, torch.nn.Linear)


def test_attach_all_four_targets():
    dec = make_decoder()
    cfg = LoraConfig(target_matrices=("query", "key", "value", "output"))
    paths = attach_lora(dec, cfg)
    assert len(paths) == 8
    for block in dec.blocks:
        for name in ("q_proj", "k_proj", "v_proj", "o_proj"):
            assert isinstance(getattr(block.attn, name), LoraLinear)


def test_parameter_count_matches_enumeration():
    dec = make_decoder()
    cfg = LoraConfig(rank=8)
    paths = attach_lora(dec, cfg)
    # every adapted square projection contributes rank * (d_in + d_out)
    expected = len(paths) * cfg.rank * (WIDTH + WIDTH)
    assert lora_parameter_count(dec) == expected
    by_name = sum(
        p.numel()
        for n, p in dec.named_parameters()
        if "lora_" in n and p.requires_grad
    )
    assert by_name == expected


def test_trainable_set_after_attach():
    dec = make_decoder()
    attach_lora(dec, LoraConfig())
    trainable = {n for n, p in dec.named_parameters() if p.requires_grad}
    assert "embedding.special_token_embeddings" in trainable
    others = trainable - {"embedding.special_token_embeddings"}
    assert others and all(("lora_A" in n or "lora_B" in n) for n in others)
    # wrapped base weights stay frozen
    assert not dec.blocks[0].attn.q_proj.base.weight.requires_grad


def test_b_matrix_gets_gradient_first():
    dec = make_decoder()
    attach_lora(dec, LoraConfig(dropout=0.0))
    ids = torch.randint(0, VOCAB, (1, 9))
    logits = dec(input_ids=ids)
    torch.nn.functional.cross_entropy(logits[0, :-1], ids[0, 1:]).backward()
    layer = dec.blocks[0].attn.q_proj
    # with B identically zero the loss is flat in A but not in B
    assert torch.all(layer.lora_A.grad == 0)
    assert layer.lora_B.grad.abs().sum() > 0


def test_training_b_changes_outputs():
    dec = make_decoder().eval()
    ids = torch.randint(0, VOCAB, (1, 5))
    before = dec(input_ids=ids)
    attach_lora(dec, LoraConfig(dropout=0.0))
    layer = dec.blocks[0].attn.q_proj
    with torch.no_grad():
        layer.lora_B += 0.05
    assert not torch.equal(dec(input_ids=ids), before)


def test_double_attach_is_rejected():
    dec = make_decoder()
    attach_lora(dec, LoraConfig())
    with pytest.raises(ConfigError):
        attach_lora(dec, LoraConfig())


def test_unknown_target_is_rejected():
    dec = make_decoder()
    with pytest.raises(ConfigError):
        attach_lora(dec, LoraConfig(target_matrices=("query", "banana")))


def test_lora_shapes_and_init():
    torch.manual_seed(3)
    base = torch.nn.Linear(WIDTH, 2 * WIDTH)
    layer = LoraLinear(base, rank=4, alpha=8.0, dropout=0.0)
    assert layer.lora_A.shape == (4, WIDTH)
    assert layer.lora_B.shape == (2 * WIDTH, 4)
    assert torch.all(layer.lora_B == 0)
    assert layer.lora_A.abs().sum() > 0
    assert layer.trainable_parameter_count == 4 * (WIDTH + 2 * WIDTH)
