"""Command line entry points.

Five subcommands cover the pipeline end to end:

    synth     build a synthetic raw dataset
    prep      quantify, resample and crop raw cases
    train     fit the adapter stack on prepped cases
    generate  decode findings for prepped cases from a checkpoint
    evaluate  text overlap + region scoring, CSV/JSON plus figures

Every subcommand writes a ``manifest.json`` into its output directory,
also when it fails partway. Exit codes: 0 ok, 2 usage, 3 config error,
4 data error, 5 extraction error, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, ExtractionError, PetReportError
from .manifest import RunManifest

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_EXTRACTION = 5


def _load_cfg(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    return load_config(path)


def _print(args, msg: str):
    if not args.quiet:
        print(msg)


# -- synth -------------------------------------------------------------


def _cmd_synth(args) -> Dict[str, object]:
    from .dataio import synth_dataset

    dirs = synth_dataset(
        args.out,
        n_cases=args.cases,
        seed=args.seed,
        volume_shape=tuple(args.shape),
        spacing_mm=tuple(args.spacing),
    )
    return {
        "outputs": {"cases": str(Path(args.out) / "cases"),
                    "templates": str(Path(args.out) / "templates")},
        "metrics": {"n_cases": len(dirs)},
    }


# -- prep --------------------------------------------------------------


def _cmd_prep(args) -> Dict[str, object]:
    from .dataio import (
        list_case_dirs,
        load_templates,
        read_raw_case,
        write_prepped_case,
    )
    from .reports import render_report_document
    from .volumes import prep_scan_pair

    cfg = _load_cfg(args.config)
    out = Path(args.out)
    n = 0
    for case_dir in list_case_dirs(args.raw):
        raw = read_raw_case(case_dir)
        prepped = prep_scan_pair(raw.pet, raw.ct, raw.meta, cfg.prep,
                                 split=args.split_regions)
        write_prepped_case(out / "cases" / case_dir.name, prepped, raw.meta,
                           render_report_document(raw.report), raw.labels)
        n += 1
    load_templates(args.raw).save_dir(out / "templates")
    return {
        "fingerprint": cfg.fingerprint(),
        "outputs": {"cases": str(out / "cases"), "templates": str(out / "templates")},
        "metrics": {"n_cases": n},
    }


# -- train -------------------------------------------------------------


def _load_prepped(data_root):
    from .dataio import list_case_dirs, load_templates, read_prepped_case

    cases = [read_prepped_case(d) for d in list_case_dirs(data_root)]
    templates = load_templates(data_root)
    return cases, templates


def _cmd_train(args) -> Dict[str, object]:
    from .prompt import load_instruction
    from .tokenizer import WordTokenizer
    from .training import (
        ReportModel,
        build_training_set,
        pretrain_base,
        save_checkpoint,
        train_model,
    )

    cfg = _load_cfg(args.config)
    cases, templates = _load_prepped(args.data)
    instruction = load_instruction()

    tokenizer = WordTokenizer()
    tokenizer.add_corpus([templates.lookup(c, g) for c, g in templates.keys()])
    tokenizer.add_corpus([case.report.findings for case in cases])
    tokenizer.add_corpus([instruction])

    model = ReportModel(cfg, tokenizer)
    examples = build_training_set(model, cases, cache_dir=args.cache)
    pre_log = None if args.quiet else (
        lambda step, loss: print(f"base {step:4d}  loss {loss:8.4f}")
    )
    log_fn = None if args.quiet else (
        lambda step, loss, lr: print(f"step {step:4d}  loss {loss:8.4f}  lr {lr:.2e}")
    )
    pretrain_losses = pretrain_base(model, examples, templates, instruction,
                                    log_fn=pre_log)
    history = train_model(model, examples, templates, instruction, log_fn=log_fn)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.pt"
    save_checkpoint(ckpt, model)
    with open(out / "history.json", "w", encoding="utf-8") as fh:
        json.dump({"pretrain_losses": pretrain_losses,
                   "step_losses": history.step_losses,
                   "learning_rates": history.learning_rates}, fh, indent=2)
    metrics = {"steps": history.steps,
               "first_loss": history.step_losses[0],
               "final_loss": history.step_losses[-1]}
    if pretrain_losses:
        metrics["pretrain_steps"] = len(pretrain_losses)
        metrics["pretrain_final_loss"] = pretrain_losses[-1]
    return {
        "fingerprint": cfg.fingerprint(),
        "seed": cfg.train.seed,
        "outputs": {"checkpoint": str(ckpt), "history": str(out / "history.json")},
        "metrics": metrics,
    }


# -- generate ----------------------------------------------------------


def _cmd_generate(args) -> Dict[str, object]:
    from .generation import generate_report
    from .training import build_training_example, load_checkpoint

    model = load_checkpoint(args.checkpoint)
    cases, templates = _load_prepped(args.data)
    gen_cfg = model.cfg.generation
    if args.greedy:
        gen_cfg = dataclasses.replace(gen_cfg, greedy_mode=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for i, case in enumerate(cases):
        example = build_training_example(model, case, cache_dir=args.cache)
        bundle = model.prompt_for(
            example.pet_features, example.ct_features,
            example.center_id, example.gender, templates,
        )
        result = generate_report(model, bundle, gen_cfg, seed=args.seed + i)
        (out / f"{case.case_id}.txt").write_text(result.text + "\n", encoding="utf-8")
        index[case.case_id] = {
            "n_tokens": result.n_tokens,
            "stop_reason": result.stop_reason,
        }
        _print(args, f"{case.case_id}: {result.n_tokens} tokens ({result.stop_reason})")
    with open(out / "generated.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return {
        "fingerprint": model.cfg.fingerprint(),
        "seed": args.seed,
        "outputs": {"texts": str(out), "index": str(out / "generated.json")},
        "metrics": {"n_cases": len(cases)},
    }


# -- evaluate ----------------------------------------------------------


def _paired_texts(generated_dir, cases) -> Dict[str, str]:
    generated_dir = Path(generated_dir)
    texts = {}
    for case in cases:
        path = generated_dir / f"{case.case_id}.txt"
        if not path.exists():
            raise DataError(f"no generated text for {case.case_id} under {generated_dir}")
        texts[case.case_id] = path.read_text(encoding="utf-8").strip()
    return texts


def _cmd_evaluate(args) -> Dict[str, object]:
    from .extraction import RuleExtractor, make_extractor
    from .figures import save_evaluation_figures
    from .nlg import nlg_metrics
    from .ontology import LabelMatrix
    from .scoring import all_normal_baseline, score_matrices

    cases, _ = _load_prepped(args.data)
    if not cases:
        raise DataError(f"no cases under {args.data}")
    generated = _paired_texts(args.generated, cases)
    candidates = [generated[c.case_id] for c in cases]
    references = [c.report.findings for c in cases]

    nlg = nlg_metrics(candidates, references, mode=args.segmentation)

    extractor_kwargs = {}
    if args.backend == "llm":
        extractor_kwargs = {
            "endpoint_url": args.endpoint_url,
            "model_id": args.model_id,
            "cache_dir": args.cache,
        }
    extractor = make_extractor(args.backend, **extractor_kwargs)
    pred = extractor.extract_many(candidates)

    rule = RuleExtractor()
    with_labels = [c.labels if c.labels is not None else rule.extract(c.report.findings)
                   for c in cases]
    truth = LabelMatrix.stack(with_labels)

    report = score_matrices(truth, pred, exclude_undefined=args.exclude_undefined)
    baseline = all_normal_baseline(truth)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scores.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "scores.json").write_text(report.to_json() + "\n", encoding="utf-8")
    with open(out / "nlg.json", "w", encoding="utf-8") as fh:
        json.dump({k: round(v, 4) for k, v in nlg.items()}, fh, indent=2, sort_keys=True)
    figure_paths = save_evaluation_figures(report, truth, pred, out)

    for key, value in sorted(nlg.items()):
        _print(args, f"{key:10s} {value:7.2f}")
    for variant in sorted(report.macro):
        _print(args, f"macro {variant:14s} {100 * report.macro[variant]:7.2f} "
                     f"(all-normal {100 * baseline.macro[variant]:7.2f})")

    metrics = {k: round(v, 4) for k, v in nlg.items()}
    metrics.update({f"macro_{k}": round(100 * v, 4) for k, v in report.macro.items()})
    metrics.update({f"weighted_{k}": round(100 * v, 4) for k, v in report.weighted.items()})
    metrics.update({f"baseline_macro_{k}": round(100 * v, 4)
                    for k, v in baseline.macro.items()})
    return {
        "outputs": {
            "scores_csv": str(out / "scores.csv"),
            "scores_json": str(out / "scores.json"),
            "nlg_json": str(out / "nlg.json"),
            "figures": [str(p) for p in figure_paths],
        },
        "metrics": metrics,
    }


# -- wiring ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="petreport",
        description="Desk-scale PET/CT report generation pipeline.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=3, default=[24, 24, 32])
    p.add_argument("--spacing", type=float, nargs=3, default=[3.0, 3.0, 3.0])
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("prep", help="preprocess raw cases")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--split-regions", action="store_true")
    p.set_defaults(fn=_cmd_prep)

    p = sub.add_parser("train", help="train the adapter stack")
    p.add_argument("--data", required=True, help="prepped dataset root")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--cache", help="frozen-encoder feature cache directory")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="decode findings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--cache")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("evaluate", help="score generated findings")
    p.add_argument("--generated", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("rule", "llm"), default="rule")
    p.add_argument("--segmentation", choices=("whitespace", "cjk"), default="whitespace")
    p.add_argument("--exclude-undefined", action="store_true")
    p.add_argument("--endpoint-url")
    p.add_argument("--model-id")
    p.add_argument("--cache")
    p.set_defaults(fn=_cmd_evaluate)
    return parser


def _run(args, argv: List[str]) -> int:
    manifest = RunManifest(command=args.command, argv=argv)
    out_dir = getattr(args, "out", None)
    try:
        summary = args.fn(args)
    except PetReportError as err:
        manifest.finish("failed", f"{type(err).__name__}: {err}")
        if out_dir:
            manifest.write(out_dir)
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err, ConfigError):
            return EXIT_CONFIG
        if isinstance(err, ExtractionError):
            return EXIT_EXTRACTION
        if isinstance(err, DataError):
            return EXIT_DATA
        return 1
    manifest.config_fingerprint = summary.get("fingerprint")
    manifest.seed = summary.get("seed")
    manifest.inputs = {
        k: str(getattr(args, k))
        for k in ("raw", "data", "checkpoint", "generated", "config", "cache")
        if getattr(args, k, None)
    }
    manifest.outputs = summary.get("outputs", {})
    manifest.metrics = summary.get("metrics", {})
    manifest.finish("ok")
    if out_dir:
        manifest.write(out_dir)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    return _run(args, argv)


if __name__ == "__main__":
    sys.exit(main())
