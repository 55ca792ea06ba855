"""Command line: prepare, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure, 3 numeric failure.
Logs go to stderr; results go to stdout.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcheck
from .audio import (CacheFormatError, SpectrogramConfig, SpectrogramConfigError, load_spectrogram,
                    spectrogram_from_wav)
from .checkpoint import CheckpointError
from .data import ManifestError, read_manifest, read_split, stratified_artist_split, write_split
from .lyrics import EmbeddingFormatError, build_vocab, load_embeddings, segment_sentences
from .metrics import evaluate
from .pipeline import (InputError, check_paths, load_examples, lyric_corpus, prepare_track,
                       read_lyrics)
from .tensor import ContractError, DimensionError, NumericError
from .train import ConfigError, TrainConfig, Trainer, predict, rng_streams, write_history

log = logging.getLogger("genrefusion")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NUMERIC = 0, 1, 2, 3
CACHE_ENV = "GENRE_CACHE_DIR"

PATH_KEYS = ("manifest", "embeddings", "cache_dir", "out")
SPEC_KEYS = ("sample_rate", "n_fft", "hop", "fmin", "fmax", "floor_db")
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))
ALL_KEYS = TRAIN_KEYS + PATH_KEYS + SPEC_KEYS + ("skip_unreadable",)

_INVALID = (ConfigError, ManifestError, InputError, EmbeddingFormatError, CheckpointError,
            SpectrogramConfigError, CacheFormatError, DimensionError)


# --- run configuration --------------------------------------------------------

@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    manifest: str | None = None
    embeddings: str | None = None
    cache_dir: str | None = None
    out: str | None = None
    skip_unreadable: bool = False


def _decode(key: str, raw: str):
    raw = raw.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if key == "labels" and isinstance(value, str):
        value = [s.strip() for s in value.split(",") if s.strip()]
    return value


def _coerce(key: str, value, default):
    """Check ``value`` against the type of the field's default."""
    if isinstance(default, bool):
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "1", "0"):
            return value.lower() in ("true", "yes", "1")
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if default is None or isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def read_config_file(path) -> dict:
    """``key = value`` lines (``#`` comments). Values are JSON where they parse, else text."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = [s for s in parser.sections() if s != "run"]
    if extra:
        raise ConfigError(f"{path}: sections are not supported (found [{extra[0]}])")
    return {k: _decode(k, v) for k, v in parser["run"].items()}


def build_run_config(values: dict) -> RunConfig:
    unknown = sorted(set(values) - set(ALL_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    tdef, sdef, rdef = TrainConfig(), SpectrogramConfig(), RunConfig()
    train = {k: _coerce(k, v, getattr(tdef, k)) for k, v in values.items() if k in TRAIN_KEYS}
    cfg = TrainConfig(**train)
    spec = {k: _coerce(k, v, getattr(sdef, k)) for k, v in values.items() if k in SPEC_KEYS}
    spectrogram = SpectrogramConfig(n_mels=cfg.n_mels, frames=cfg.frames, **spec)
    run = RunConfig(cfg, spectrogram)
    for k in PATH_KEYS + ("skip_unreadable",):
        if k in values:
            setattr(run, k, _coerce(k, values[k], getattr(rdef, k)))
    return run


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _decode(key.strip(), raw)
    for key in ("seed", "epochs", "lr", "batch_size"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    for key in PATH_KEYS:
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    return out


def load_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    values.update(_overrides(args))
    run = build_run_config(values)
    if run.cache_dir is None:
        run.cache_dir = os.environ.get(CACHE_ENV)
    return run


def _require_file(path, what: str) -> Path:
    if path is None:
        raise InputError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} {p} not found")
    return p


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")
    sys.stdout.flush()


# --- commands -----------------------------------------------------------------

def cmd_prepare(args) -> int:
    run = load_run_config(args)
    manifest = _require_file(run.manifest, "manifest")
    out_cache = args.out_cache or run.cache_dir
    if out_cache is None:
        raise InputError(f"--out-cache or {CACHE_ENV} is required")
    records = read_manifest(manifest)
    check_paths(records, cache_dir=None, need_audio=False)
    if records:
        Path(out_cache).mkdir(parents=True, exist_ok=True)
    failed = 0
    counts = {"written": 0, "skipped": 0, "failed": 0}
    for r in records:
        st = prepare_track(r, out_cache, run.spectrogram)
        counts[st.status] += 1
        failed += st.status == "failed"
        line = f"{st.track_id}\t{st.status}" + (f"\t{st.detail}" if st.detail else "")
        print(line, flush=True)
        if st.status == "failed":
            log.error("track %s: %s", st.track_id, st.detail)
    summary = f"{len(records)} tracks" if records else "0 tracks"
    if records:
        summary += ", " + ", ".join(f"{v} {k}" for k, v in counts.items())
    print(summary)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args)
    cfg = run.train
    manifest = _require_file(run.manifest, "manifest")
    if run.embeddings is not None:
        _require_file(run.embeddings, "embeddings file")
    if run.out is None:
        raise InputError("--out is required")
    out = Path(run.out)
    if out.exists() and not out.is_dir():
        raise InputError(f"output path {out} exists and is not a directory")
    records = read_manifest(manifest, cfg.labels)
    if not records:
        raise InputError(f"{manifest}: no tracks")
    cache_dir = run.cache_dir or manifest.parent / "cache"
    check_paths(records, cache_dir)

    split = stratified_artist_split(records, seed=cfg.seed)
    for t in split.flagged:
        log.warning("%s", t)
    texts = {}
    for r in records:
        try:
            texts[r.track_id] = read_lyrics(r)
        except (OSError, UnicodeDecodeError) as exc:
            if not run.skip_unreadable:
                raise InputError(f"track {r.track_id}: unreadable lyrics: {exc}") from None
    train_ids = set(split.tracks("train"))
    vocab = build_vocab(lyric_corpus(texts[t] for t in sorted(train_ids) if t in texts),
                        cfg.min_count)
    kept = [r for r in records if r.track_id in texts]
    examples = load_examples(kept, cfg.labels, vocab, cache_dir, (cfg.n_mels, cfg.frames),
                             cfg.max_sentences, cfg.max_words, run.skip_unreadable, texts)
    parts = {s: [e for e in examples if split.assignment[e.track_id] == s]
             for s in ("train", "val", "test")}
    if not parts["train"]:
        raise InputError("the split left no training tracks")
    embeddings = load_embeddings(run.embeddings, vocab, rng_streams(cfg.seed)["embedding"],
                                 cfg.embed_dim)
    trainer = Trainer(cfg, vocab, embeddings=embeddings)
    trainer.extra = {"spectrogram": dataclasses.asdict(run.spectrogram)}

    # everything validated; from here on we write
    out.mkdir(parents=True, exist_ok=True)
    write_split(split, out / "split.csv")
    vocab.save(out / "vocab.tsv")
    write_history([], out / "history.csv")
    log.info("train %d / val %d / test %d tracks, vocab %d",
             len(parts["train"]), len(parts["val"]), len(parts["test"]), len(vocab))
    trainer.fit(parts["train"], parts["val"],
                on_epoch=lambda rec: write_history(trainer.history, out / "history.csv"))
    trainer.save(out / "final.gfck")
    trainer.save_best(out / "best.gfck")
    last = trainer.history[-1] if trainer.history else None
    _emit({
        "epochs": trainer.epoch,
        "tracks": {k: len(v) for k, v in parts.items()},
        "final": None if last is None else {
            "train_loss": last.train_loss, "val_loss": last.val_loss,
            "val_acc": last.val_acc, "val_f1": last.val_f1},
        "best": None if trainer.best_key is None else {
            "val_f1": trainer.best_key[0], "val_loss": -trainer.best_key[1]},
        "out": str(out),
    })
    return EXIT_OK


def _load_trainer(path) -> Trainer:
    return Trainer.load(_require_file(path, "checkpoint"))


def cmd_eval(args) -> int:
    trainer = _load_trainer(args.checkpoint)
    cfg = trainer.cfg
    manifest = _require_file(args.manifest, "manifest")
    labels = list(cfg.labels)
    if args.label_order:
        order = [s.strip() for s in args.label_order.split(",")]
        if sorted(order) != sorted(labels):
            raise InputError("--label-order must be a permutation of the checkpoint labels")
    else:
        order = labels
    records = read_manifest(manifest, cfg.labels)
    if args.split != "all":
        split_file = Path(args.split_file) if args.split_file else Path(args.checkpoint).parent / "split.csv"
        assignment = read_split(_require_file(split_file, "split file"))
        missing = [r.track_id for r in records if r.track_id not in assignment]
        if missing:
            raise InputError(f"track {missing[0]} is not in {split_file}")
        records = [r for r in records if assignment[r.track_id] == args.split]
    if not records:
        raise InputError(f"no tracks in split {args.split!r}")
    cache_dir = args.cache_dir or os.environ.get(CACHE_ENV) or manifest.parent / "cache"
    check_paths(records, cache_dir)
    examples = load_examples(records, labels, trainer.vocab, cache_dir, (cfg.n_mels, cfg.frames),
                             cfg.max_sentences, cfg.max_words, args.skip_unreadable)
    probs, _ = trainer.predict_proba(examples)
    perm = [labels.index(g) for g in order]
    truth = np.array([perm.index(e.label) for e in examples])
    report = evaluate(probs[:, perm], truth, order)
    sys.stdout.write(report.to_json() + "\n")
    sys.stderr.write(report.table() + "\n")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_text(report.to_json() + "\n")
        (Path(args.out) / "report.txt").write_text(report.table() + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.audio is None and args.spectrogram is None and args.lyrics is None:
        raise InputError("predict needs --audio or --spectrogram, and/or --lyrics")
    trainer = _load_trainer(args.checkpoint)
    cfg = trainer.cfg
    spec = None
    if args.audio is not None:
        sc = SpectrogramConfig(**trainer.extra.get("spectrogram", {})) if trainer.extra.get(
            "spectrogram") else SpectrogramConfig(n_mels=cfg.n_mels, frames=cfg.frames)
        spec = spectrogram_from_wav(_require_file(args.audio, "audio file").read_bytes(), sc)
    elif args.spectrogram is not None:
        spec = load_spectrogram(_require_file(args.spectrogram, "spectrogram cache"))
    if spec is not None and spec.shape != (cfg.n_mels, cfg.frames):
        raise InputError(f"spectrogram shape {spec.shape} != model input {(cfg.n_mels, cfg.frames)}")
    text = None
    if args.lyrics is not None:
        text = _require_file(args.lyrics, "lyrics file").read_text(encoding="utf-8")
    pred = predict(trainer, spec, text)

    sents = segment_sentences(text or "")[:cfg.max_sentences]
    att = pred.attention
    ranked = sorted(range(len(att.sentences)), key=lambda k: -float(att.sentence_weights[k]))
    top = []
    for k in ranked[:args.top_k]:
        i = att.sentences[k]
        words = sents[i][:cfg.max_words]
        ww = att.word_weights[k]
        wr = sorted(range(len(words)), key=lambda j: -float(ww[j]))[:args.top_k]
        top.append({"sentence": i, "weight": float(att.sentence_weights[k]), "text": " ".join(words),
                    "words": [{"word": words[j], "position": j, "weight": float(ww[j])} for j in wr]})
    _emit({
        "label": pred.label,
        "probabilities": [{"genre": g, "p": p} for g, p in pred.ranking],
        "inputs": {"audio": spec is not None, "lyrics": text is not None},
        "attention": top,
    })
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck.run_suite(seed=args.seed, op_seeds=args.op_seeds,
                                 model_seeds=args.model_seeds, model_coords=args.model_coords,
                                 scale=args.scale)
    for line in report.lines():
        print(line)
    name, err = report.worst
    print(f"checked {len(report.errors) - ('model' in report.errors)} ops"
          f" + model in {report.seconds:.1f}s")
    print(f"worst: {name} {err:.3e} ({'pass' if report.passed else 'FAIL'}, tolerance "
          f"{gradcheck.TOLERANCE:g})")
    if not report.passed:
        bad = [n for n, e in report.errors.items() if e >= gradcheck.TOLERANCE]
        print("failed: " + ", ".join(bad))
        log.error("gradient check failed for: %s", ", ".join(bad))
        return EXIT_NUMERIC
    return EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrefusion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", help="key = value run configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--manifest")

    sp = sub.add_parser("prepare", help="compute spectrogram caches for a manifest")
    run_flags(sp)
    sp.add_argument("--out-cache", help=f"cache directory (default ${CACHE_ENV})")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train the fused classifier")
    run_flags(sp)
    sp.add_argument("--embeddings")
    sp.add_argument("--out")
    sp.add_argument("--cache-dir", dest="cache_dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="metrics report for one split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--split-file", help="default: split.csv next to the checkpoint")
    sp.add_argument("--cache-dir", dest="cache_dir")
    sp.add_argument("--label-order", help="comma-separated order of report rows")
    sp.add_argument("--skip-unreadable", action="store_true")
    sp.add_argument("--out", help="also write report.json and report.txt here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="genre probabilities for one track")
    sp.add_argument("--checkpoint", required=True)
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--audio", help="WAV file")
    src.add_argument("--spectrogram", help="spectrogram cache file")
    sp.add_argument("--lyrics", help="lyrics text file")
    sp.add_argument("--top-k", dest="top_k", type=int, default=5)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scale", default="tiny", choices=("tiny", "small"))
    sp.add_argument("--op-seeds", dest="op_seeds", type=int, default=100)
    sp.add_argument("--model-seeds", dest="model_seeds", type=int, default=3)
    sp.add_argument("--model-coords", dest="model_coords", type=int, default=1000)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("genrefusion")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except _INVALID as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (ContractError, OSError, ValueError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
