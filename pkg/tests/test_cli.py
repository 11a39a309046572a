"""End-to-end plumbing of the command line: every subcommand in order on
a tiny dataset, manifests on success and failure, exit codes."""

import json
import subprocess
import sys

import pytest

from petreport.cli import main
from petreport.config import (
    EncoderConfig,
    GenerationConfig,
    LoraConfig,
    PipelineConfig,
    TrainConfig,
    dump_config,
)
from petreport.manifest import read_manifest

N_CASES = 4


def _toy_config(path):
    cfg = PipelineConfig(
        encoder=EncoderConfig(
            window_shape=(8, 8, 8),
            patch_shape=(8, 8, 8),
            encoder_depth=1,
            sampler_depth=1,
            sampler_ff_mult=1,
            decoder_width=64,
        ),
        lora=LoraConfig(dropout=0.0),
        train=TrainConfig(
            base_lr=3e-3,
            warmup_steps=2,
            epochs=10,
            micro_batch=2,
            accum_steps=1,
            effective_batch=2,
            seed=0,
            max_steps=5,
            pretrain_steps=5,
        ),
        generation=GenerationConfig(max_new_tokens=24),
    )
    dump_config(cfg, path)
    return cfg


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    dirs = {
        "raw": root / "raw",
        "prep": root / "prep",
        "train": root / "train",
        "gen": root / "gen",
        "eval": root / "eval",
        "config": root / "config.yaml",
    }
    _toy_config(dirs["config"])
    codes = [
        main(["--quiet", "synth", "--out", str(dirs["raw"]),
              "--cases", str(N_CASES), "--seed", "3"]),
        main(["--quiet", "prep", "--raw", str(dirs["raw"]),
              "--out", str(dirs["prep"]), "--config", str(dirs["config"])]),
        main(["--quiet", "train", "--data", str(dirs["prep"]),
              "--out", str(dirs["train"]), "--config", str(dirs["config"])]),
        main(["--quiet", "generate", "--checkpoint", str(dirs["train"] / "checkpoint.pt"),
              "--data", str(dirs["prep"]), "--out", str(dirs["gen"]),
              "--greedy", "--seed", "5"]),
        main(["--quiet", "evaluate", "--generated", str(dirs["gen"]),
              "--data", str(dirs["prep"]), "--out", str(dirs["eval"])]),
    ]
    return dirs, codes


def test_every_stage_exits_zero(pipeline):
    _, codes = pipeline
    assert codes == [0, 0, 0, 0, 0]


def test_manifests_written_with_ok_status(pipeline):
    dirs, _ = pipeline
    for key, command in (("raw", "synth"), ("prep", "prep"), ("train", "train"),
                         ("gen", "generate"), ("eval", "evaluate")):
        manifest = read_manifest(dirs[key])
        assert manifest.status == "ok"
        assert manifest.command == command
        assert manifest.error is None
        assert manifest.finished_at is not None


def test_train_artifacts(pipeline):
    dirs, _ = pipeline
    assert (dirs["train"] / "checkpoint.pt").is_file()
    history = json.loads((dirs["train"] / "history.json").read_text())
    assert len(history["pretrain_losses"]) == 5
    assert len(history["step_losses"]) == 5
    assert len(history["learning_rates"]) == 5
    manifest = read_manifest(dirs["train"])
    assert manifest.config_fingerprint
    assert manifest.metrics["steps"] == 5
    assert manifest.metrics["pretrain_steps"] == 5


def test_generate_artifacts(pipeline):
    dirs, _ = pipeline
    index = json.loads((dirs["gen"] / "generated.json").read_text())
    assert len(index) == N_CASES
    for case_id, entry in index.items():
        text_path = dirs["gen"] / f"{case_id}.txt"
        assert text_path.is_file()
        assert entry["stop_reason"] in ("stop_token", "max_tokens")
        assert entry["n_tokens"] > 0


def test_evaluate_artifacts_include_figures(pipeline):
    dirs, _ = pipeline
    for name in ("scores.csv", "scores.json", "nlg.json"):
        assert (dirs["eval"] / name).is_file()
    nlg = json.loads((dirs["eval"] / "nlg.json").read_text())
    assert set(nlg) == {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor"}
    pngs = sorted(p.name for p in dirs["eval"].glob("*.png"))
    assert pngs == ["confusion_ct.png", "confusion_pet.png",
                    "f1_ct.png", "f1_pet.png"]
    for p in dirs["eval"].glob("*.png"):
        assert p.stat().st_size > 0
    manifest = read_manifest(dirs["eval"])
    assert "macro_pet_all" in manifest.metrics
    assert "baseline_macro_pet_all" in manifest.metrics


def test_missing_data_dir_exits_4_with_failed_manifest(tmp_path):
    out = tmp_path / "out"
    rc = main(["--quiet", "train", "--data", str(tmp_path / "nowhere"),
               "--out", str(out)])
    assert rc == 4
    manifest = read_manifest(out)
    assert manifest.status == "failed"
    assert manifest.error.startswith("DataError")


def test_invalid_config_exits_3(tmp_path, pipeline):
    dirs, _ = pipeline
    bad = tmp_path / "bad.yaml"
    text = dirs["config"].read_text().replace("effective_batch: 2",
                                              "effective_batch: 7")
    bad.write_text(text)
    rc = main(["--quiet", "prep", "--raw", str(dirs["raw"]),
               "--out", str(tmp_path / "out"), "--config", str(bad)])
    assert rc == 3


def test_no_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_help_runs_fast_in_a_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "petreport.cli", "--help"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "evaluate" in proc.stdout
