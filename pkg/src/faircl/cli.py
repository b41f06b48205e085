"""Command-line entry point: ``faircl <command> [--config FILE] [--key value ...]``.

Exit status is 0 on success, 1 on a validation error (bad flag, key, value,
manifest or configuration) and 2 when a run fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence


from faircl import __version__
from faircl.config import KEYS, ConfigValueError, RunConfig, coerce, read_config_file
from faircl.data import (COMPOSITE, ManifestError, Utterance, generate_synthetic_corpus,
                         group_key, load_manifest, stratified_split, write_manifest)
from faircl.evaluation import (comparison_csv, comparison_text, demographic_probe, evaluate,
                               project_2d)
from faircl.model import ModelConfig, Params, load_checkpoint, save_checkpoint
from faircl.train import ConfigError, TrainingError, finetune, pooled_embeddings, pretrain

log = logging.getLogger("faircl")

COMMANDS = {
    "gen-data": "generate a synthetic corpus (manifest plus feature files)",
    "pretrain": "contrastive pretraining on the training split",
    "finetune": "CTC fine-tuning from a pretrained checkpoint",
    "evaluate": "per-cohort WER report on the held-out split",
    "probe": "linear demographic probe on pooled encoder features",
    "export-embeddings": "write pooled embeddings (raw or 2-D) as CSV",
    "ablate": "lambda x embedding-space grid with a merged comparison table",
}

# (flag, help, required) per command, beyond --config and the config keys
_EXTRA = {
    "gen-data": [("--out", "manifest path to write", True)],
    "pretrain": [("--data", "corpus manifest", True), ("--out", "checkpoint directory", True)],
    "finetune": [("--data", "corpus manifest", True),
                 ("--pretrained", "pretrained checkpoint", True),
                 ("--out", "checkpoint directory", True)],
    "evaluate": [("--data", "corpus manifest", True), ("--checkpoint", "fine-tuned checkpoint", True),
                 ("--out", "report directory", True)],
    "probe": [("--data", "corpus manifest", True), ("--checkpoint", "encoder checkpoint", True),
              ("--out", "output directory", True)],
    "export-embeddings": [("--data", "corpus manifest", True),
                          ("--checkpoint", "encoder checkpoint", True),
                          ("--out", "CSV path", True)],
    "ablate": [("--data", "corpus manifest (default: generate from data.* keys)", False),
               ("--out", "output directory", True),
               ("--lambda", "comma-separated lambda values", True),
               ("--space", "comma-separated embedding spaces: shared, independent", True)],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _help_text(name: str) -> str:
    k = KEYS[name]
    default = k.default
    if isinstance(default, bool):
        default = "true" if default else "false"
    return f"{k.help} (default: {default!r})".replace("%", "%%")


def build_parser() -> _Parser:
    parser = _Parser(prog="faircl", allow_abbrev=False,
                     description="Fairness-aware contrastive pretraining and CTC fine-tuning.")
    parser.add_argument("--version", action="version", version=f"faircl {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for cmd, desc in COMMANDS.items():
        p = sub.add_parser(cmd, help=desc, description=desc, allow_abbrev=False)
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for flag, help, required in _EXTRA[cmd]:
            # required flags are checked after unknown ones so those are reported first
            p.add_argument(flag, help=help + (" (required)" if required else ""),
                           dest=flag.lstrip("-").replace("-", "_"))
        groups: dict[str, argparse._ArgumentGroup] = {}
        for name in KEYS:
            section = name.split(".", 1)[0] if "." in name else "general"
            if section not in groups:
                groups[section] = p.add_argument_group(f"{section} keys")
            groups[section].add_argument(f"--{name}", dest=f"key:{name}", metavar="VALUE",
                                         default=argparse.SUPPRESS, help=_help_text(name))
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    cli_values = {}
    for dest, raw in vars(args).items():
        if dest.startswith("key:"):
            name = dest[4:]
            cli_values[name] = coerce(name, raw, f"--{name}")
    return RunConfig.resolve(file_values, cli_values)


# -- helpers ----------------------------------------------------------------------------
def _attributes(rc: RunConfig, corpus: Sequence[Utterance]) -> list[str]:
    present = list(corpus[0].demographics) if corpus else []
    text = rc["eval.attributes"].strip()
    if not text:
        return present
    attrs = [a.strip() for a in text.split(",") if a.strip()]
    for a in attrs:
        if a not in present:
            raise ConfigValueError(f"eval.attributes: attribute '{a}' not in the data "
                                   f"(have {', '.join(present)})")
    return attrs


def _load(rc: RunConfig, path, n_mels: int) -> list[Utterance]:
    corpus = load_manifest(path, n_mels=n_mels)
    if not corpus:
        raise ManifestError(f"{path}: manifest has no utterances")
    for utt in corpus:
        if utt.spec.bins != n_mels:
            raise ConfigValueError(f"model.n_mels is {n_mels} but utterance {utt.id} in {path} "
                                   f"has {utt.spec.bins} mel bins")
    return corpus


def _split(rc: RunConfig, corpus):
    return stratified_split(corpus, rc["data.test_fraction"], _attributes(rc, corpus), rc["seed"])


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _space_label(shared: bool) -> str:
    return "shared" if shared else "independent"


# -- commands --------------------------------------------------------------------------------
def cmd_gen_data(rc: RunConfig, args) -> None:
    corpus = generate_synthetic_corpus(rc.corpus_config())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(corpus, out, feature_dir=f"{out.stem}_features")
    print(f"wrote {len(corpus)} utterances to {out}")


def _run_pretrain(rc: RunConfig, train, out: Path | None, **override):
    mcfg = rc.model_config()
    mcfg.validate()
    params, tlog = pretrain(train, rc.pretrain_config(**override), mcfg, checkpoint_dir=out)
    if out is not None:
        _write(out / "pretrain_log.jsonl", tlog.to_jsonl())
    return params, mcfg


def _run_finetune(rc: RunConfig, train, params: Params, mcfg: ModelConfig, out: Path | None):
    tuned, tlog = finetune(train, params, rc.finetune_config(), mcfg, checkpoint_dir=out)
    if out is not None:
        _write(out / "finetune_log.jsonl", tlog.to_jsonl())
    return tuned


def cmd_pretrain(rc: RunConfig, args) -> None:
    corpus = _load(rc, args.data, rc["model.n_mels"])
    train, _ = _split(rc, corpus)
    out = Path(args.out)
    _write(out / "config.txt", rc.dump())
    params, mcfg = _run_pretrain(rc, train, out)
    save_checkpoint(out / "pretrain_final.ckpt", params, mcfg)
    print(f"pretrained on {len(train)} utterances; checkpoints in {out}")


def cmd_finetune(rc: RunConfig, args) -> None:
    params, mcfg = load_checkpoint(args.pretrained)
    corpus = _load(rc, args.data, mcfg.n_mels)
    train, _ = _split(rc, corpus)
    out = Path(args.out)
    _write(out / "config.txt", rc.dump())
    tuned = _run_finetune(rc, train, params, mcfg, out)
    save_checkpoint(out / "finetune_final.ckpt", tuned, mcfg)
    print(f"fine-tuned on {len(train)} utterances; checkpoints in {out}")


def cmd_evaluate(rc: RunConfig, args) -> None:
    params, mcfg = load_checkpoint(args.checkpoint)
    if not any(k.startswith("decoder.") for k in params):
        raise ConfigValueError(f"{args.checkpoint}: checkpoint has no decoder; run finetune first")
    corpus = _load(rc, args.data, mcfg.n_mels)
    _, test = _split(rc, corpus)
    rep = evaluate(params, mcfg, test, _attributes(rc, corpus), rc["finetune.blank"])
    out = Path(args.out)
    _write(out / "report.txt", rep.to_text())
    _write(out / "report.csv", rep.to_csv())
    sys.stdout.write(rep.to_text())


def _probe_rows(rc: RunConfig, corpus, emb) -> list:
    rows = []
    for attr in _attributes(rc, corpus) + [COMPOSITE]:
        labels = [group_key(u.demographics, attr) for u in corpus]
        if len(set(labels)) < 2:
            log.warning("probe: attribute %s has a single class; skipped", attr)
            continue
        rows.append(demographic_probe(emb, labels, attr, rc["seed"], rc["eval.probe_steps"],
                                      rc["eval.probe_lr"]))
    return rows


def cmd_probe(rc: RunConfig, args) -> None:
    params, mcfg = load_checkpoint(args.checkpoint)
    corpus = _load(rc, args.data, mcfg.n_mels)
    emb = pooled_embeddings(corpus, params, mcfg)
    rows = _probe_rows(rc, corpus, emb)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute", "n_classes", "train_accuracy", "test_accuracy", "chance"])
    text = [f"{'attribute':<20}{'classes':>8}{'train':>8}{'test':>8}{'chance':>8}"]
    for r in rows:
        w.writerow([r.attribute, r.n_classes, f"{r.train_accuracy:.6f}", f"{r.test_accuracy:.6f}",
                    f"{r.chance:.6f}"])
        text.append(f"{r.attribute:<20}{r.n_classes:>8d}{r.train_accuracy:>8.3f}"
                    f"{r.test_accuracy:>8.3f}{r.chance:>8.3f}")
    out = Path(args.out)
    _write(out / "probe.csv", buf.getvalue())
    _write(out / "probe.txt", "\n".join(text) + "\n")
    print("\n".join(text))


def cmd_export(rc: RunConfig, args) -> None:
    mode = rc["eval.projection"]
    if mode not in ("2d", "raw"):
        raise ConfigValueError(f"eval.projection must be 2d or raw, got {mode!r}")
    params, mcfg = load_checkpoint(args.checkpoint)
    corpus = _load(rc, args.data, mcfg.n_mels)
    emb = pooled_embeddings(corpus, params, mcfg)
    values = project_2d(emb) if mode == "2d" else emb
    attrs = list(corpus[0].demographics)
    cols = ["x", "y"] if mode == "2d" else [f"h{j}" for j in range(emb.shape[1])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + attrs + cols)
    for utt, row in zip(corpus, values):
        w.writerow([utt.id] + [utt.demographics[a] for a in attrs] + [repr(float(v)) for v in row])
    _write(Path(args.out), buf.getvalue())
    print(f"wrote {len(corpus)} rows to {args.out}")


def _parse_list(flag: str, text: str, parse) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigValueError(f"{flag}: empty list")
    try:
        return [parse(t) for t in items]
    except ValueError as exc:
        raise ConfigValueError(f"{flag}: {exc}") from None


def _space(text: str) -> bool:
    if text in ("shared", "share"):
        return True
    if text in ("independent", "ind"):
        return False
    raise ValueError(f"unknown embedding space {text!r} (use shared or independent)")


def cmd_ablate(rc: RunConfig, args) -> None:
    lams = _parse_list("--lambda", args.__dict__["lambda"], float)
    spaces = _parse_list("--space", args.space, _space)
    for lam in lams:
        if lam < 0:
            raise ConfigValueError(f"--lambda: values must be >= 0, got {lam}")
    if args.data:
        corpus = _load(rc, args.data, rc["model.n_mels"])
    else:
        corpus = generate_synthetic_corpus(rc.corpus_config())
        if rc["data.n_mels"] != rc["model.n_mels"]:
            raise ConfigValueError(f"data.n_mels ({rc['data.n_mels']}) differs from model.n_mels "
                                   f"({rc['model.n_mels']})")
    train, test = _split(rc, corpus)
    attrs = _attributes(rc, corpus)
    out = Path(args.out)
    _write(out / "config.txt", rc.dump())
    columns = []
    for shared in spaces:
        for lam in lams:
            name = f"{_space_label(shared)}_lambda{lam:g}"
            log.info("ablation cell %s", name)
            params, mcfg = _run_pretrain(rc, train, None, objective="fairasr", lam=lam,
                                         shared_embedding_space=shared)
            tuned = _run_finetune(rc, train, params, mcfg, None)
            rep = evaluate(tuned, mcfg, test, attrs, rc["finetune.blank"])
            _write(out / name / "report.txt", rep.to_text())
            _write(out / name / "report.csv", rep.to_csv())
            columns.append(({"Embedding space": "Share" if shared else "Ind.",
                             "lambda": f"{lam:g}"}, rep))
    _write(out / "ablation.txt", comparison_text(columns))
    _write(out / "ablation.csv", comparison_csv(columns))
    sys.stdout.write(comparison_text(columns))


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "probe": cmd_probe, "export-embeddings": cmd_export,
            "ablate": cmd_ablate}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            raise UsageError(f"unknown flag: {extra[0]}")
        if args.command is None:
            raise UsageError(f"missing command (one of {', '.join(COMMANDS)})")
        missing = [f for f, _, req in _EXTRA[args.command]
                   if req and getattr(args, f.lstrip("-").replace("-", "_")) is None]
        if missing:
            raise UsageError(f"{args.command}: missing required flag {', '.join(missing)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        rc = _resolve(args)
        HANDLERS[args.command](rc, args)
    except UsageError as exc:
        print(f"faircl: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigValueError, ConfigError, ManifestError) as exc:
        print(f"faircl: error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"faircl: training failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"faircl: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"faircl: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
