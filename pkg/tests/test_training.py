import copy

import pytest
import torch
import torch.nn.functional as F

from modelkit import tiny_case, tiny_config, tiny_model
from petreport.config import TrainConfig
from petreport.errors import ConfigError, DataError
from petreport.training import (
    TRAINABLE_GROUPS,
    TrainingExample,
    assert_trainable_contract,
    batch_loss,
    build_training_example,
    build_training_set,
    frozen_state_hash,
    load_checkpoint,
    lr_at_step,
    masked_lm_loss,
    pretrain_base,
    save_checkpoint,
    train_model,
    trainable_parameter_names,
)

INSTRUCTION = "Write the findings."


@pytest.fixture(scope="module")
def trained_setup():
    model, templates = tiny_model(extra_vocab=(INSTRUCTION,))
    cases = [tiny_case(i) for i in range(4)]
    examples = build_training_set(model, cases)
    return model, templates, cases, examples


def test_lr_warmup_then_constant():
    cfg = TrainConfig()
    assert cfg.base_lr == 5e-5 and cfg.warmup_steps == 100
    assert lr_at_step(0, cfg) == 0.0
    assert lr_at_step(50, cfg) == pytest.approx(2.5e-5)
    assert lr_at_step(100, cfg) == pytest.approx(5e-5)
    assert lr_at_step(250, cfg) == pytest.approx(5e-5)
    no_warmup = TrainConfig(warmup_steps=0)
    assert lr_at_step(0, no_warmup) == no_warmup.base_lr


def test_trainable_names_cover_exactly_the_adapter_groups(trained_setup):
    model, _, _, _ = trained_setup
    names = trainable_parameter_names(model)
    assert names
    for name in names:
        assert any(g in name for g in TRAINABLE_GROUPS), name
    for group in TRAINABLE_GROUPS:
        assert any(group in n for n in names), group
    assert_trainable_contract(model)


def test_contract_rejects_stray_trainables(trained_setup):
    model, _, _, _ = trained_setup
    model2 = copy.deepcopy(model)
    model2.decoder.pos_embed.requires_grad_(True)
    with pytest.raises(ConfigError):
        assert_trainable_contract(model2)


def test_training_example_targets_end_with_stop(trained_setup):
    model, _, cases, examples = trained_setup
    for case, ex in zip(cases, examples):
        assert ex.target_ids[-1] == model.tokenizer.stop_id
        assert model.tokenizer.stop_id not in ex.target_ids[:-1]
        decoded = model.tokenizer.decode(ex.target_ids, skip_special=True)
        assert decoded == case.report.findings
        assert ex.pet_features.shape == (1, 8, 768)
        assert ex.ct_features.shape == (1, 8, 768)


def test_empty_findings_is_a_data_error(trained_setup):
    model, _, cases, _ = trained_setup
    case = copy.deepcopy(cases[0])
    case.report.findings = "   "
    with pytest.raises(DataError):
        build_training_example(model, case)


def test_feature_cache_round_trip(tmp_path, trained_setup):
    model, _, cases, _ = trained_setup
    first = build_training_example(model, cases[0], cache_dir=tmp_path)
    files = list(tmp_path.glob("*.pt"))
    assert len(files) == 1 and files[0].name.startswith("case_0000_")
    again = build_training_example(model, cases[0], cache_dir=tmp_path)
    assert torch.equal(first.pet_features, again.pet_features)
    assert torch.equal(first.ct_features, again.ct_features)


def test_masked_loss_matches_manual_cross_entropy():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(2, 6, 11, generator=g)
    labels = torch.tensor(
        [
            [-100, -100, 3, 4, 5, 6],
            [-100, 2, 7, -100, -100, -100],
        ]
    )
    expected_terms = []
    for b in range(2):
        for t in range(1, 6):
            if labels[b, t] != -100:
                expected_terms.append(
                    F.cross_entropy(logits[b, t - 1][None], labels[b, t][None])
                )
    expected = torch.stack(expected_terms).mean()
    assert masked_lm_loss(logits, labels) == pytest.approx(float(expected), rel=1e-6)


def test_masked_loss_needs_report_tokens():
    logits = torch.randn(1, 4, 9)
    labels = torch.full((1, 4), -100)
    with pytest.raises(DataError):
        masked_lm_loss(logits, labels)


def test_loss_only_sees_report_positions(trained_setup):
    model, templates, _, examples = trained_setup
    model.eval()
    base = batch_loss(model, examples[:1], templates, INSTRUCTION)
    # perturbing a frozen text embedding row used only in the prompt must
    # not change which positions the loss covers; swapping the target does
    other = examples[1]
    swapped = TrainingExample(
        case_id=examples[0].case_id,
        pet_features=examples[0].pet_features,
        ct_features=examples[0].ct_features,
        center_id=examples[0].center_id,
        gender=examples[0].gender,
        target_ids=other.target_ids,
    )
    changed = batch_loss(model, [swapped], templates, INSTRUCTION)
    assert float(base.detach()) != pytest.approx(float(changed.detach()))


def test_train_loop_step_accounting(trained_setup):
    model, templates, _, examples = trained_setup
    fresh, _ = tiny_model(extra_vocab=(INSTRUCTION,))
    cfg = tiny_config(epochs=3, max_steps=None, micro_batch=2, accum_steps=2,
                      effective_batch=4)
    fresh.cfg = cfg
    history = train_model(fresh, examples, templates, INSTRUCTION)
    # 4 examples -> 2 micro-batches -> 1 optimizer step per epoch
    assert history.steps == 3
    assert history.learning_rates[0] == pytest.approx(cfg.train.base_lr / 2)
    assert history.learning_rates[-1] == pytest.approx(cfg.train.base_lr)

    capped, _ = tiny_model(extra_vocab=(INSTRUCTION,))
    capped.cfg = tiny_config(epochs=3, max_steps=2, micro_batch=2, accum_steps=2,
                             effective_batch=4)
    assert train_model(capped, examples, templates, INSTRUCTION).steps == 2


def test_training_reduces_loss_and_keeps_base_frozen(trained_setup):
    _, templates, _, examples = trained_setup
    model, _ = tiny_model(extra_vocab=(INSTRUCTION,))
    before_hash = frozen_state_hash(model)
    before_trainable = {
        n: p.detach().clone()
        for n, p in model.named_parameters()
        if p.requires_grad
    }
    history = train_model(model, examples, templates, INSTRUCTION)
    assert history.steps == 15
    assert history.step_losses[-1] < history.step_losses[0]
    assert frozen_state_hash(model) == before_hash
    moved = [
        n
        for n, p in model.named_parameters()
        if p.requires_grad and not torch.equal(p.detach(), before_trainable[n])
    ]
    assert any("lora_B" in n for n in moved)
    assert any("sampler" in n for n in moved)


def test_model_build_is_deterministic():
    a, _ = tiny_model()
    b, _ = tiny_model()
    assert frozen_state_hash(a) == frozen_state_hash(b)


def test_pretrain_fits_base_and_restores_contract(trained_setup):
    _, templates, _, examples = trained_setup
    model, _ = tiny_model(cfg=tiny_config(pretrain_steps=12, pretrain_lr=1e-2),
                          extra_vocab=(INSTRUCTION,))
    names_before = trainable_parameter_names(model)
    adapters_before = {
        n: p.detach().clone() for n, p in model.named_parameters() if "lora_" in n
    }
    base_hash = frozen_state_hash(model)

    losses = pretrain_base(model, examples, templates, INSTRUCTION)

    assert len(losses) == 12
    assert losses[-1] < losses[0]
    assert len(model.pretrain_rows) == len(examples)
    # the frozen base moved, the adapters did not
    assert frozen_state_hash(model) != base_hash
    assert trainable_parameter_names(model) == names_before
    assert_trainable_contract(model)
    for n, p in model.named_parameters():
        if "lora_" in n:
            assert torch.equal(p.detach(), adapters_before[n]), n
        if "lora_B" in n:
            assert torch.count_nonzero(p) == 0


def test_pretrain_disabled_is_a_no_op(trained_setup):
    _, templates, _, examples = trained_setup
    model, _ = tiny_model(cfg=tiny_config(pretrain_steps=0),
                          extra_vocab=(INSTRUCTION,))
    base_hash = frozen_state_hash(model)
    assert pretrain_base(model, examples, templates, INSTRUCTION) == []
    assert model.pretrain_rows == []
    assert frozen_state_hash(model) == base_hash


def test_checkpoint_replays_pretrained_base(tmp_path, trained_setup):
    _, templates, _, examples = trained_setup
    model, _ = tiny_model(cfg=tiny_config(pretrain_steps=8, max_steps=3),
                          extra_vocab=(INSTRUCTION,))
    pretrain_base(model, examples, templates, INSTRUCTION)
    train_model(model, examples, templates, INSTRUCTION)
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, model)

    restored = load_checkpoint(path)
    assert restored.pretrain_rows == model.pretrain_rows
    assert frozen_state_hash(restored) == frozen_state_hash(model)
    model.eval(), restored.eval()
    with torch.no_grad():
        a = batch_loss(model, examples[:2], templates, INSTRUCTION)
        b = batch_loss(restored, examples[:2], templates, INSTRUCTION)
    assert float(a) == pytest.approx(float(b), rel=1e-7)


def test_checkpoint_round_trip(tmp_path, trained_setup):
    model, templates, _, examples = trained_setup
    trained, _ = tiny_model(extra_vocab=(INSTRUCTION,))
    trained.cfg = tiny_config(max_steps=3)
    train_model(trained, examples, templates, INSTRUCTION)
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, trained)

    payload = torch.load(path, weights_only=False)
    assert set(payload) == {"fingerprint", "config", "seed", "vocab",
                            "pretrain_rows", "trainable"}
    assert set(payload["trainable"]) == set(trainable_parameter_names(trained))

    restored = load_checkpoint(path)
    assert frozen_state_hash(restored) == frozen_state_hash(trained)
    for name, p in trained.named_parameters():
        if p.requires_grad:
            restored_p = dict(restored.named_parameters())[name]
            assert torch.equal(p.detach(), restored_p.detach())
    trained.eval(), restored.eval()
    ex = examples[0]
    with torch.no_grad():
        a = batch_loss(trained, [ex], templates, INSTRUCTION)
        b = batch_loss(restored, [ex], templates, INSTRUCTION)
    assert float(a) == pytest.approx(float(b), rel=1e-6)


def test_checkpoint_fingerprint_mismatch_is_rejected(tmp_path, trained_setup):
    model, templates, _, examples = trained_setup
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, model)
    payload = torch.load(path, weights_only=False)
    payload["config"]["train"]["base_lr"] = 1.0
    torch.save(payload, path)
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_empty_example_list_is_rejected(trained_setup):
    model, templates, _, _ = trained_setup
    with pytest.raises(DataError):
        train_model(model, [], templates, INSTRUCTION)
