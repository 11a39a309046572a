import pytest
import torch

from petreport.decoder import ToyDecoder
from petreport.errors import ConfigError, UnknownCenterError
from petreport.prompt import PromptBundle, assemble_prompt, load_instruction
from petreport.reports import TemplateDictionary
from petreport.tokenizer import (
    CT_CLOSE,
    CT_OPEN,
    PET_CLOSE,
    PET_OPEN,
    STOP_TOKEN,
    TEMPLATE_CLOSE,
    TEMPLATE_OPEN,
    WordTokenizer,
)

WIDTH = 32
N_VIS = 128


@pytest.fixture(scope="module")
def setup():
    templates = TemplateDictionary.builtin()
    tok = WordTokenizer()
    tok.add_corpus([text for _, text in ((k, templates.lookup(*k)) for k in templates.keys())])
    tok.add_corpus([load_instruction()])
    torch.manual_seed(0)
    decoder = ToyDecoder(tok.vocab_size, WIDTH, tok.special_id_range)
    return templates, tok, decoder


def blocks(seed=0):
    g = torch.Generator().manual_seed(seed)
    ct = torch.randn(1, N_VIS, WIDTH, generator=g)
    pet = torch.randn(1, N_VIS, WIDTH, generator=g)
    return ct, pet


def test_instruction_asset_loads_clean():
    text = load_instruction()
    assert text and not text.startswith("version:")
    assert STOP_TOKEN in text


def test_layout_and_marker_positions(setup):
    templates, tok, decoder = setup
    ct, pet = blocks()
    bundle = assemble_prompt(ct, pet, 1, "male", templates, tok, decoder)
    ids = bundle.token_ids
    t_lo, t_hi = bundle.spans["template"]
    i_lo, i_hi = bundle.spans["instruction"]
    assert bundle.length == 6 + 2 * N_VIS + (t_hi - t_lo) + (i_hi - i_lo)
    assert ids[0] == tok.token_id(CT_OPEN)
    assert ids[1 + N_VIS] == tok.token_id(CT_CLOSE)
    assert ids[2 + N_VIS] == tok.token_id(PET_OPEN)
    assert ids[3 + 2 * N_VIS] == tok.token_id(PET_CLOSE)
    assert ids[4 + 2 * N_VIS] == tok.token_id(TEMPLATE_OPEN)
    assert ids[t_hi] == tok.token_id(TEMPLATE_CLOSE)
    assert bundle.spans["ct"] == (1, 1 + N_VIS)
    assert bundle.spans["pet"] == (3 + N_VIS, 3 + 2 * N_VIS)
    assert all(i == tok.pad_id for i in ids[1 : 1 + N_VIS])
    assert ids[t_lo:t_hi] == tok.encode(templates.lookup(1, "male"))
    assert ids[i_lo:i_hi] == tok.encode(load_instruction())
    assert i_hi == bundle.length
    assert not bundle.truncated and bundle.warnings == []


def test_empty_template_and_instruction_is_262_tokens(setup):
    _, tok, decoder = setup

    class Blank:
        def lookup(self, center_id, gender):
            return ""

    ct, pet = blocks()
    bundle = assemble_prompt(ct, pet, 1, "male", Blank(), tok, decoder, instruction="")
    assert bundle.length == 262
    assert bundle.spans["template"] == (261, 261)
    assert bundle.spans["instruction"] == (262, 262)


def test_embeds_carry_visual_blocks_and_text_rows(setup):
    templates, tok, decoder = setup
    ct, pet = blocks(7)
    bundle = assemble_prompt(ct, pet, 2, "female", templates, tok, decoder)
    lo, hi = bundle.spans["ct"]
    assert torch.equal(bundle.embeds[:, lo:hi], ct)
    lo, hi = bundle.spans["pet"]
    assert torch.equal(bundle.embeds[:, lo:hi], pet)
    t_lo, t_hi = bundle.spans["template"]
    expected = decoder.embed_ids(torch.tensor([bundle.token_ids[t_lo:t_hi]]))
    assert torch.equal(bundle.embeds[:, t_lo:t_hi], expected)
    assert bundle.embeds.shape == (1, bundle.length, WIDTH)


def test_assembly_is_deterministic(setup):
    templates, tok, decoder = setup
    ct, pet = blocks(3)
    a = assemble_prompt(ct, pet, 3, "male", templates, tok, decoder)
    b = assemble_prompt(ct.clone(), pet.clone(), 3, "male", templates, tok, decoder)
    assert a.token_ids == b.token_ids
    assert a.spans == b.spans
    assert torch.equal(a.embeds, b.embeds)


def test_gender_swap_touches_only_the_template_span(setup):
    templates, tok, decoder = setup
    ct, pet = blocks(5)
    male = assemble_prompt(ct, pet, 1, "male", templates, tok, decoder)
    female = assemble_prompt(ct, pet, 1, "female", templates, tok, decoder)
    m_lo, m_hi = male.spans["template"]
    f_lo, f_hi = female.spans["template"]
    assert m_lo == f_lo
    assert male.token_ids[:m_lo] == female.token_ids[:f_lo]
    assert male.token_ids[m_hi:] == female.token_ids[f_hi:]
    assert male.token_ids[m_lo:m_hi] != female.token_ids[f_lo:f_hi]


def test_template_truncates_tail_first_with_warning(setup):
    templates, tok, decoder = setup
    ct, pet = blocks()
    template_ids = tok.encode(templates.lookup(1, "male"))
    instr_ids = tok.encode(load_instruction())
    full = 262 + len(template_ids) + len(instr_ids)
    bundle = assemble_prompt(
        ct, pet, 1, "male", templates, tok, decoder, max_input_tokens=full - 5
    )
    assert bundle.truncated
    assert bundle.template_tokens_dropped == 5
    assert len(bundle.warnings) == 1 and "truncat" in bundle.warnings[0]
    assert bundle.length == full - 5
    t_lo, t_hi = bundle.spans["template"]
    assert bundle.token_ids[t_lo:t_hi] == template_ids[:-5]
    i_lo, i_hi = bundle.spans["instruction"]
    assert bundle.token_ids[i_lo:i_hi] == instr_ids


def test_limit_below_fixed_cost_is_a_config_error(setup):
    templates, tok, decoder = setup
    ct, pet = blocks()
    with pytest.raises(ConfigError):
        assemble_prompt(ct, pet, 1, "male", templates, tok, decoder, max_input_tokens=100)


def test_unknown_center_passes_through(setup):
    templates, tok, decoder = setup
    ct, pet = blocks()
    with pytest.raises(UnknownCenterError):
        assemble_prompt(ct, pet, 99, "male", templates, tok, decoder)


def test_bad_block_shapes_are_rejected(setup):
    templates, tok, decoder = setup
    ct, pet = blocks()
    with pytest.raises(ValueError):
        assemble_prompt(ct[0, :, :5], pet, 1, "male", templates, tok, decoder)
    with pytest.raises(ValueError):
        assemble_prompt(torch.randn(2, N_VIS, WIDTH), pet, 1, "male", templates, tok, decoder)


def test_gradient_flows_back_to_visual_blocks(setup):
    templates, tok, decoder = setup
    ct, pet = blocks(11)
    ct.requires_grad_(True)
    bundle = assemble_prompt(ct, pet, 1, "male", templates, tok, decoder)
    bundle.embeds.sum().backward()
    assert ct.grad is not None and ct.grad.abs().sum() > 0
