"""Command line entry points: train, eval, predict, ablate.

Configuration values resolve in order: built-in defaults, then the
`--config` file (flat `key = value` lines or a previously written run
manifest), then `ASTETAG_<KEY>` environment variables, then command line
flags. Every training or prediction run writes a manifest beside its
outputs; rerunning with `--config <manifest>` reproduces the outputs
byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (
    LabeledSentence,
    ParseError,
    TagConflictError,
    Vocabulary,
    build_vocab,
    encode_tags,
    load_v2_file,
    serialize_v2_line,
)
from .decoder import decode_triplets, one_hot_logits
from .metrics import format_report, score, score_macro
from .model import Ablation, ModelConfig, TaggingModel
from .trainer import NumericError, TrainConfig, evaluate, predict_sentence, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ENV_PREFIX = "ASTETAG_"
MANIFEST_FORMAT = "astetag-manifest"
MANIFEST_VERSION = 1

CHECKPOINT_NAME = "model.ckpt"
VOCAB_NAME = "vocab.txt"
LOG_NAME = "train.log.jsonl"
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_mask_layers(spec: str) -> frozenset[int]:
    """`1-4` or `1,3` or `1-2,5`; empty means no masking."""
    spec = spec.strip()
    if not spec:
        return frozenset()
    layers: set[int] = set()
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, _, hi = part.partition("-")
            lo, hi = int(lo), int(hi)
            if lo > hi:
                raise ValueError(f"empty layer range {part!r}")
            layers.update(range(lo, hi + 1))
        else:
            layers.add(int(part))
    if any(layer < 1 for layer in layers):
        raise ValueError("layer indices are 1-based")
    return frozenset(layers)


def _format_mask_layers(layers: frozenset[int]) -> str:
    return ",".join(str(i) for i in sorted(layers))


# key -> (parser, default); mask_layers round-trips through its spec string
CONFIG_SPEC = {
    "layers": (int, 2),
    "heads": (int, 2),
    "width": (int, 32),
    "ffn_width": (int, 64),
    "relpos_dim": (int, 8),
    "conv_blocks": (int, 2),
    "max_len": (int, 64),
    "dropout": (float, 0.1),
    "learning_rate": (float, 5e-5),
    "grad_clip_norm": (float, 1.0),
    "batch_size": (int, 16),
    "epochs": (int, 500),
    "seed": (int, 0),
    "min_count": (int, 1),
    "no_token_branch_1d": (_parse_bool, False),
    "no_token_branch_2d": (_parse_bool, False),
    "no_attn_branch_1d": (_parse_bool, False),
    "no_attn_branch_2d": (_parse_bool, False),
    "no_conv": (_parse_bool, False),
    "no_relpos": (_parse_bool, False),
    "no_rotary": (_parse_bool, False),
    "mask_layers": (parse_mask_layers, frozenset()),
}

ABLATION_KEYS = (
    "no_token_branch_1d",
    "no_token_branch_2d",
    "no_attn_branch_1d",
    "no_attn_branch_2d",
    "no_conv",
    "no_relpos",
    "no_rotary",
    "mask_layers",
)

MODEL_KEYS = ("layers", "heads", "width", "ffn_width", "relpos_dim",
              "conv_blocks", "max_len", "dropout")

TRAIN_KEYS = ("learning_rate", "grad_clip_norm", "batch_size", "epochs",
              "seed", "min_count")


def _coerce(key: str, raw, where: str):
    if key not in CONFIG_SPEC:
        raise UsageError(f"unknown config key {key!r} in {where}")
    caster, _ = CONFIG_SPEC[key]
    if isinstance(raw, str):
        try:
            return caster(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r} in {where}: {exc}")
    if key == "mask_layers":
        return frozenset(int(i) for i in raw)
    if caster is _parse_bool:
        return bool(raw)
    return caster(raw)


def _read_config_file(path: Path) -> tuple[dict, dict]:
    """Returns (config values, data paths from a manifest if any)."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        blob = json.loads(text)
        if blob.get("format") == MANIFEST_FORMAT:
            config = {
                k: _coerce(k, v, str(path)) for k, v in blob["config"].items()
            }
            return config, blob.get("data", {})
        return {k: _coerce(k, v, str(path)) for k, v in blob.items()}, {}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, raw = line.partition("=")
        values[key.strip()] = _coerce(key.strip(), raw.strip(), f"{path}:{lineno}")
    return values, {}


def _env_overrides(environ) -> dict:
    values = {}
    for key in CONFIG_SPEC:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = _coerce(key, raw, f"environment ({ENV_PREFIX}{key.upper()})")
    return values


def resolve_config(args, environ) -> tuple[dict, dict]:
    """Merge defaults, config file, environment, and CLI flags."""
    values = {key: default for key, (_, default) in CONFIG_SPEC.items()}
    manifest_data = {}
    if getattr(args, "config", None):
        file_values, manifest_data = _read_config_file(Path(args.config))
        values.update(file_values)
    values.update(_env_overrides(environ))
    for key in CONFIG_SPEC:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = _coerce(key, flag, "command line") if isinstance(flag, str) else flag
    return values, manifest_data


def _split_config(values: dict, vocab_size: int) -> tuple[ModelConfig, TrainConfig]:
    ablation = Ablation(**{k: values[k] for k in ABLATION_KEYS})
    model_config = ModelConfig(
        vocab_size=vocab_size, **{k: values[k] for k in MODEL_KEYS}
    )
    train_config = TrainConfig(
        ablation=ablation, **{k: values[k] for k in TRAIN_KEYS}
    )
    return model_config, train_config


def _manifest_payload(command: str, values: dict | None, data_paths: dict,
                      outputs: dict) -> dict:
    config = dict(values) if values is not None else {}
    if config:
        config["mask_layers"] = _format_mask_layers(config["mask_layers"])
    body = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "command": command,
        "seed": config.get("seed", 0),
        "config": config,
        "data": {k: str(Path(v).resolve()) for k, v in data_paths.items()},
        "outputs": outputs,
    }
    digest = hashlib.sha256(
        json.dumps(
            {k: body[k] for k in ("command", "config", "data")},
            sort_keys=True,
        ).encode("utf-8")
    ).hexdigest()
    body["run_id"] = digest[:12]
    return body


def _write_manifest(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _load_sentences(path: str | None, what: str,
                    required: bool = True) -> list[LabeledSentence]:
    if path is None:
        if required:
            raise UsageError(f"missing --{what} file")
        return []
    try:
        sentences = load_v2_file(path)
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}")
    except ParseError as exc:
        raise DataError(f"{what} file {path}: {exc}")
    if not sentences:
        raise DataError(f"{what} file {path} contains no sentences")
    return sentences


def _out_dir(args) -> Path:
    if not getattr(args, "out", None):
        raise UsageError("missing --out directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_once(model_config: ModelConfig, train_config: TrainConfig,
                vocab: Vocabulary, train_sentences, dev_sentences,
                log=None) -> tuple[TaggingModel, object]:
    torch.manual_seed(train_config.seed)
    model = TaggingModel(model_config, train_config.ablation)
    result = train(model, vocab, train_sentences, dev_sentences, train_config, log=log)
    model.load_state_dict(result.best_state)
    return model, result


def cmd_train(args, environ) -> int:
    values, manifest_data = resolve_config(args, environ)
    train_path = args.train or manifest_data.get("train")
    dev_path = args.dev or manifest_data.get("dev") or train_path
    if train_path is None:
        raise UsageError("missing --train file")
    out = _out_dir(args)
    train_sentences = _load_sentences(train_path, "train")
    dev_sentences = _load_sentences(dev_path, "dev")
    vocab = build_vocab(train_sentences, min_count=values["min_count"])
    model_config, train_config = _split_config(values, len(vocab))

    log_lines = []

    def log(record):
        line = json.dumps({
            "epoch": record.epoch,
            "step": record.step,
            "loss": round(record.loss, 6),
            "dev_p": round(record.dev_precision, 6),
            "dev_r": round(record.dev_recall, 6),
            "dev_f1": round(record.dev_f1, 6),
        }, sort_keys=True)
        log_lines.append(line)
        print(f"epoch {record.epoch} loss {record.loss:.4f} "
              f"dev P {record.dev_precision:.4f} R {record.dev_recall:.4f} "
              f"F1 {record.dev_f1:.4f}")

    model, result = _train_once(
        model_config, train_config, vocab, train_sentences, dev_sentences, log=log
    )
    save_checkpoint(model, out / CHECKPOINT_NAME)
    vocab.save(out / VOCAB_NAME)
    (out / LOG_NAME).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    payload = _manifest_payload(
        "train", values, {"train": train_path, "dev": dev_path},
        {"checkpoint": CHECKPOINT_NAME, "vocab": VOCAB_NAME, "log": LOG_NAME},
    )
    _write_manifest(out / MANIFEST_NAME, payload)
    print(f"best dev F1 {result.best_f1:.4f} at epoch {result.best_epoch}; "
          f"checkpoint written to {out / CHECKPOINT_NAME}")
    return EXIT_OK


def _load_model_and_vocab(args) -> tuple[TaggingModel, Vocabulary]:
    if not getattr(args, "checkpoint", None):
        raise UsageError("missing --checkpoint")
    ckpt = Path(args.checkpoint)
    try:
        model = load_checkpoint(ckpt)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {ckpt}")
    except CheckpointError as exc:
        raise DataError(str(exc))
    vocab_path = Path(args.vocab) if getattr(args, "vocab", None) else ckpt.parent / VOCAB_NAME
    try:
        vocab = Vocabulary.load(vocab_path)
    except FileNotFoundError:
        raise DataError(f"vocabulary file not found: {vocab_path}")
    except ValueError as exc:
        raise DataError(str(exc))
    return model, vocab


def _identity_predictions(sentences):
    predictions = []
    for s in sentences:
        try:
            predictions.append(decode_triplets(*one_hot_logits(encode_tags(s))))
        except TagConflictError as exc:
            print(f"warning: {exc}; predicting nothing", file=sys.stderr)
            predictions.append(frozenset())
    return predictions


def cmd_eval(args, environ) -> int:
    sentences = _load_sentences(args.test, "test")
    if args.identity:
        predictions = _identity_predictions(sentences)
    else:
        model, vocab = _load_model_and_vocab(args)
        predictions = []
        for s in sentences:
            if len(s) > model.config.max_len:
                print(f"warning: {len(s)}-token sentence exceeds limit "
                      f"{model.config.max_len}; predicting nothing", file=sys.stderr)
                predictions.append(frozenset())
            else:
                predictions.append(predict_sentence(model, vocab, s.tokens))
    gold = [s.triplets for s in sentences]
    micro = score(predictions, gold)
    macro = score_macro(predictions, gold)
    report = (
        format_report(micro, "micro triplet exact match") + "\n"
        + format_report(macro, "macro triplet exact match (per sentence)") + "\n"
    )
    print(report, end="")
    if getattr(args, "out", None):
        out = Path(args.out)
        out.write_text(report, encoding="utf-8")
    return EXIT_OK


def cmd_predict(args, environ) -> int:
    model, vocab = _load_model_and_vocab(args)
    if not args.test:
        raise UsageError("missing --test input file")
    in_path = Path(args.test)
    if not getattr(args, "out", None):
        raise UsageError("missing --out predictions file")
    out_path = Path(args.out)
    try:
        lines = in_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read input file: {exc}")
    outputs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            outputs.append("")
            continue
        sentence_part = line.split("####")[0]
        tokens = tuple(sentence_part.split())
        if not tokens:
            raise DataError(f"{in_path}:{lineno}: no tokens before annotation")
        if len(tokens) > model.config.max_len:
            print(f"warning: {in_path}:{lineno}: {len(tokens)} tokens exceed "
                  f"limit {model.config.max_len}; predicting nothing",
                  file=sys.stderr)
            triplets = frozenset()
        else:
            triplets = predict_sentence(model, vocab, tokens)
        outputs.append(serialize_v2_line(LabeledSentence(tokens, triplets)))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(line + "\n" for line in outputs), encoding="utf-8")
    payload = _manifest_payload(
        "predict", None,
        {"checkpoint": str(Path(args.checkpoint)), "input": str(in_path)},
        {"predictions": out_path.name},
    )
    _write_manifest(out_path.with_suffix(out_path.suffix + ".manifest.json"), payload)
    print(f"wrote {len(outputs)} lines to {out_path}")
    return EXIT_OK


SWITCH_NAMES = {name.replace("_", "-"): name for name in ABLATION_KEYS
                if name != "mask_layers"}


def parse_variant(spec: str) -> Ablation:
    """`no-conv` or `no-attn-branch-1d,no-attn-branch-2d` or `mask-layers=1-2`."""
    kwargs = {}
    spec = spec.strip()
    if spec in ("", "full"):
        return Ablation()
    for token in spec.split(","):
        token = token.strip()
        if token.startswith("mask-layers="):
            kwargs["mask_layers"] = parse_mask_layers(token.split("=", 1)[1])
        elif token in SWITCH_NAMES:
            kwargs[SWITCH_NAMES[token]] = True
        else:
            raise UsageError(f"unknown ablation switch {token!r}")
    try:
        return Ablation(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_ablate(args, environ) -> int:
    values, manifest_data = resolve_config(args, environ)
    train_path = args.train or manifest_data.get("train")
    dev_path = args.dev or manifest_data.get("dev") or train_path
    test_path = args.test or dev_path
    if train_path is None:
        raise UsageError("missing --train file")
    train_sentences = _load_sentences(train_path, "train")
    dev_sentences = _load_sentences(dev_path, "dev")
    test_sentences = _load_sentences(test_path, "test")
    vocab = build_vocab(train_sentences, min_count=values["min_count"])

    variants = [("full", Ablation())]
    for spec in args.variant or []:
        ablation = parse_variant(spec)
        variants.append((ablation.describe(), ablation))

    rows = []
    full_f1 = None
    for name, ablation in variants:
        run_values = dict(values)
        for key in ABLATION_KEYS:
            run_values[key] = getattr(ablation, key)
        model_config, train_config = _split_config(run_values, len(vocab))
        model, _ = _train_once(
            model_config, train_config, vocab, train_sentences, dev_sentences
        )
        _, prf = evaluate(model, vocab, test_sentences)
        if full_f1 is None:
            full_f1 = prf.f1
        rows.append((name, prf))

    width = max(len(name) for name, _ in rows)
    lines = [f"{'variant'.ljust(width)}  {'P':>7} {'R':>7} {'F1':>7} {'dF1':>8}"]
    for name, prf in rows:
        delta = "-" if name == "full" else f"{prf.f1 - full_f1:+8.4f}"
        lines.append(
            f"{name.ljust(width)}  {prf.precision:7.4f} {prf.recall:7.4f} "
            f"{prf.f1:7.4f} {delta:>8}"
        )
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if getattr(args, "out", None):
        out = _out_dir(args)
        (out / "ablation_report.txt").write_text(report, encoding="utf-8")
        payload = _manifest_payload(
            "ablate", values,
            {"train": train_path, "dev": dev_path, "test": test_path},
            {"report": "ablation_report.txt"},
        )
        _write_manifest(out / MANIFEST_NAME, payload)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common_flags(parser: _Parser, *, config: bool = True) -> None:
    if config:
        parser.add_argument("--config", help="config file or run manifest")
        parser.add_argument("--seed", type=int, default=None)
        for key in ABLATION_KEYS:
            if key == "mask_layers":
                parser.add_argument("--mask-layers", dest="mask_layers",
                                    default=None, metavar="SPEC",
                                    help="1-based layers to zero, e.g. 1-2 or 1,3")
            else:
                parser.add_argument(f"--{key.replace('_', '-')}", dest=key,
                                    action="store_true", default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="astetag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    _add_common_flags(p_train)
    p_train.add_argument("--train", help="training sentences")
    p_train.add_argument("--dev", help="development sentences (defaults to --train)")
    p_train.add_argument("--out", help="output directory")

    p_eval = sub.add_parser("eval", help="score a checkpoint on a gold file")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--vocab")
    p_eval.add_argument("--test", required=False)
    p_eval.add_argument("--out", help="optional report file")
    p_eval.add_argument("--identity", action="store_true",
                        help="score the gold annotations against themselves "
                             "through the tag encoding and decoding path")

    p_pred = sub.add_parser("predict", help="write predictions for a file")
    p_pred.add_argument("--checkpoint")
    p_pred.add_argument("--vocab")
    p_pred.add_argument("--test", help="input sentences (annotations ignored)")
    p_pred.add_argument("--out", help="predictions file")

    p_abl = sub.add_parser("ablate", help="train and compare ablation variants")
    _add_common_flags(p_abl, config=True)
    p_abl.add_argument("--train")
    p_abl.add_argument("--dev")
    p_abl.add_argument("--test")
    p_abl.add_argument("--out", help="optional output directory")
    p_abl.add_argument("--variant", action="append",
                       help="comma-separated switches, repeatable")
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
}


def main(argv=None, environ=None) -> int:
    import os

    environ = environ if environ is not None else os.environ
    torch.set_num_threads(1)  # keep reruns bit-reproducible
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and not args.test:
            raise UsageError("missing --test file")
        return COMMANDS[args.command](args, environ)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
