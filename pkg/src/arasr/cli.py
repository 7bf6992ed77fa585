"""``arasr`` command line: prepare, train, decode, eval, lm-train.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audio as au
from . import lm as lmmod
from .acoustic import checkpoint as ckpt_io
from .acoustic.model import AcousticNet, ConfigurationError
from .acoustic.optim import OptimizerState, TrainingError
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .corpus import ManifestEntry, ManifestError, SplitError, load_features, load_manifest, write_manifest
from .ctc import InfeasibleTargetError, beam_search_decode, greedy_decode
from .features import EmptyFeatureError
from .metrics import DegenerateTestError, WerReport, paired_t_test, wer
from .text import (AlphabetConfigError, EncodingError, NormalizationPolicy, Rejection, encode, load_alphabet,
                   normalize, write_rejections)
from .train import TrainState, UtteranceSet, fit

log = logging.getLogger("arasr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
HYP_COLUMNS = ("id", "text", "acoustic", "lm", "score")


class UsageError(Exception):
    pass


class ConsistencyError(Exception):
    """Artifacts that must agree (checkpoint, LM, config) do not."""


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- shared helpers ----------------------------------------------------------

def _config(args) -> PipelineConfig:
    return load_config(args.config, args.set)


def _alphabet(cfg: PipelineConfig):
    return load_alphabet(cfg.resolve(cfg.alphabet))


def _bounds(cfg: PipelineConfig):
    return cfg.audio.min_duration, cfg.audio.max_duration


def _cache_dir(cfg: PipelineConfig, manifest: Path):
    if cfg.features.cache_dir is not None:
        return cfg.resolve(cfg.features.cache_dir)
    return manifest.parent / ".feature_cache"


def _utterances(cfg: PipelineConfig, manifest_path, alphabet) -> tuple[list[ManifestEntry], UtteranceSet]:
    path = Path(manifest_path)
    manifest = load_manifest(path, _bounds(cfg), alphabet)
    entries = list(manifest)
    if not entries:
        raise DataError(f"{path}: manifest has no entries")
    feats = load_features(entries, cfg.features.frame_length, cfg.features.frame_shift, _cache_dir(cfg, path))
    for e, f in zip(entries, feats):
        if f.F != cfg.architecture.input_bins:
            raise ConsistencyError(f"{e.utterance_id}: {f.F} feature bins, architecture expects "
                                   f"{cfg.architecture.input_bins}")
    data = UtteranceSet([e.utterance_id for e in entries], [f.frames for f in feats],
                        [encode(e.transcript, alphabet) for e in entries], [e.duration for e in entries])
    log.info("%s: %d utterances, %.2f h", path, len(entries), manifest.total_duration / 3600)
    return entries, data


def read_text_table(path) -> dict[str, str]:
    """id -> text from a two-column TSV, a hypothesis file, or a manifest."""
    path = Path(path)
    out: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    if not rows:
        return out
    col, first = 1, 1
    head = tuple(rows[0])
    if head[:1] == ("id",):
        for name in ("transcript", "text"):
            if name in head:
                col = head.index(name)
                break
        rows, first = rows[1:], 2
    for lineno, row in enumerate(rows, first):
        if not row:
            continue
        if len(row) <= col:
            raise DataError(f"{path}: line {lineno}: missing text column")
        if row[0] in out:
            raise DataError(f"{path}: line {lineno}: duplicate id {row[0]!r}")
        out[row[0]] = " ".join(row[col].split())
    return out


# --- prepare -----------------------------------------------------------------

def _prepare_one(wav: Path, raw_dir: Path, out_dir: Path, cfg: PipelineConfig, alphabet, policy):
    """Returns (entries, rejections) for one recording."""
    stem = wav.relative_to(raw_dir).with_suffix("").as_posix().replace("/", "_")
    txt = wav.with_suffix(".txt")
    dialect = wav.parent.name if wav.parent != raw_dir else None
    if not txt.is_file():
        return [], [(stem, "-", "missing transcript file")]
    try:
        lines = [ln for ln in txt.read_text(encoding="utf-8").split("\n") if ln.strip()]
    except UnicodeDecodeError:
        return [], [(stem, "-", "transcript is not valid UTF-8")]
    texts = []
    for raw in lines:
        norm = normalize(raw, policy, alphabet)
        if isinstance(norm, Rejection):
            return [], [(stem, norm.char, norm.reason)]
        if not norm:
            return [], [(stem, "-", "transcript is empty after normalization")]
        texts.append(norm)
    if not texts:
        return [], [(stem, "-", "transcript file is empty")]
    try:
        buf = au.read_wav(wav)
    except (au.AudioFormatError, au.UnsupportedAudioError, OSError) as exc:
        return [], [(stem, "-", f"unreadable audio: {exc}")]
    buf = au.highpass(au.resample(buf, cfg.audio.target_rate), cfg.audio.highpass_cutoff)
    spec = au.SegmentSpec(cfg.audio.min_duration, cfg.audio.max_duration, cfg.audio.silence_threshold,
                          cfg.audio.min_silence)
    seg = au.segment(buf, spec)
    rejections = [(stem, "-", f"segment {a:.2f}-{b:.2f}s: {why}") for a, b, why in seg.rejections]
    if len(seg.spans) != len(texts):
        rejections.append((stem, "-", f"{len(seg.spans)} audio segment(s) but {len(texts)} transcript line(s)"))
        return [], rejections
    entries = []
    for k, (span, text) in enumerate(zip(seg.spans, texts)):
        uid = f"{stem}_{k:03d}"
        piece = au.slice_span(buf, span)
        dest = out_dir / f"{uid}.wav"
        au.write_wav(dest, piece)
        entries.append(ManifestEntry(uid, dest, piece.duration, text, dialect))
    return entries, rejections


def cmd_prepare(args) -> int:
    cfg = _config(args)
    alphabet = _alphabet(cfg)
    raw_dir = Path(args.raw_dir)
    if not raw_dir.is_dir():
        raise UsageError(f"{raw_dir} is not a directory")
    out_manifest = Path(args.out_manifest)
    audio_dir = out_manifest.parent / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(raw_dir.rglob("*.wav"))
    orphans = sorted(t for t in raw_dir.rglob("*.txt") if not t.with_suffix(".wav").is_file())
    policy = NormalizationPolicy()
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lambda w: _prepare_one(w, raw_dir, audio_dir, cfg, alphabet, policy), wavs))
    entries = [e for es, _ in results for e in es]
    rejections = [r for _, rs in results for r in rs]
    rejections += [(t.relative_to(raw_dir).with_suffix("").as_posix(), "-", "transcript without audio")
                   for t in orphans]
    write_manifest(out_manifest, entries)
    rej_path = Path(args.rejections) if args.rejections else out_manifest.with_suffix(".rejections.tsv")
    write_rejections(rej_path, rejections)
    hours = math.fsum(e.duration for e in entries) / 3600
    print(f"accepted: {len(entries)}\nrejected: {len(rejections)}\ntotal hours: {hours:.4f}")
    if not entries:
        log.error("no utterances accepted from %s", raw_dir)
        return EXIT_DATA
    return EXIT_OK


# --- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    alphabet = _alphabet(cfg)
    _, train_set = _utterances(cfg, args.manifest, alphabet)
    dev_set = _utterances(cfg, args.dev, alphabet)[1] if args.dev else None
    if args.resume:
        ck = ckpt_io.load(args.resume, expect=cfg.architecture)
        if ck.alphabet_digest != alphabet.digest():
            raise ConsistencyError("checkpoint alphabet differs from the configured alphabet")
        net, opt = ck.net, ck.optimizer or OptimizerState.for_params(ck.net.params)
        state = TrainState.from_dict(ck.state.get("train"))
        state.stop_reason = None
        log.info("resuming from %s at epoch %d", args.resume, state.next_epoch)
    else:
        net = AcousticNet(cfg.architecture, alphabet.num_classes, seed=cfg.training.seed)
        opt = OptimizerState.for_params(net.params, cfg.training.initial_lr)
        state = TrainState()
    log.info("acoustic model: %d parameters", net.num_parameters())
    out = Path(args.checkpoint)

    def save(st: TrainState):
        ckpt_io.save(out, ckpt_io.Checkpoint(net, opt, alphabet.symbols, alphabet.digest(),
                                             {"train": st.to_dict(), "config": cfg.to_dict()}))

    state = fit(net, opt, train_set, dev_set, cfg.training, alphabet.blank_index, state, on_epoch=save)
    last = state.history[-1] if state.history else None
    if last is not None:
        dev = "n/a" if last["dev_loss"] is None else f"{last['dev_loss']:.4f}"
        print(f"epochs: {state.next_epoch}\ntrain_loss: {last['train_loss']:.4f}\ndev_loss: {dev}\n"
              f"stop: {state.stop_reason}")
    return EXIT_OK


# --- decode ------------------------------------------------------------------

def _load_lm(path: Path, digest: str):
    model = lmmod.load_arpa(path)
    lm_digest = model.header.get("alphabet")
    if lm_digest is None:
        raise ConsistencyError(f"{path}: LM header has no alphabet digest")
    if lm_digest != digest:
        raise ConsistencyError(f"alphabet mismatch: checkpoint {digest}, language model {lm_digest}")
    return model


def cmd_decode(args) -> int:
    cfg = _config(args)
    ck = ckpt_io.load(args.checkpoint)
    if ck.net.arch.canonical() != cfg.architecture.canonical():
        log.warning("config architecture differs from the checkpoint; using the checkpoint's")
    alphabet = _alphabet(cfg)
    if ck.alphabet_digest != alphabet.digest():
        raise ConsistencyError(f"alphabet mismatch: checkpoint {ck.alphabet_digest}, config {alphabet.digest()}")
    lm_path = Path(args.lm) if args.lm else cfg.resolve(cfg.lm.path)
    dcfg = cfg.decoder
    model = None
    if not args.greedy:
        if lm_path is not None:
            if not lm_path.is_file():
                raise ConsistencyError(f"language model {lm_path} not found")
            model = _load_lm(lm_path, ck.alphabet_digest)
        elif dcfg.alpha > 0:
            raise ConsistencyError(f"decoder.alpha={dcfg.alpha} needs a language model (--lm or lm.path)")
    entries, data = _utterances(replace(cfg, architecture=ck.net.arch), args.manifest, alphabet)
    net = ck.net

    def run(i):
        lp, out_len = net.forward(data.features[i], mode="infer")
        lp = lp[0, :out_len[0]].astype(np.float64)
        if args.greedy:
            text = greedy_decode(lp, alphabet)
            return " ".join(text.split()), float("nan"), 0.0
        best = beam_search_decode(lp, alphabet, model, dcfg)[0]
        return " ".join(best.prefix.split()), best.acoustic, best.lm_score

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run, range(len(entries))))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(HYP_COLUMNS) + "\n")
        for e, (text, ac, lmscore) in zip(entries, results):
            fh.write(f"{e.utterance_id}\t{text}\t{ac:.6f}\t{lmscore:.6f}\t{ac + lmscore:.6f}\n")
    log.info("wrote %d hypotheses to %s", len(results), args.out)
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def _score(ref: dict[str, str], hyp: dict[str, str], name: str):
    extra = sorted(set(hyp) - set(ref))
    if extra:
        raise DataError(f"{name}: {len(extra)} id(s) not in the reference, e.g. {extra[0]!r}")
    missing = [k for k in ref if k not in hyp]
    if missing:
        log.warning("%s: %d reference id(s) have no hypothesis; scored as empty", name, len(missing))
    per_utt, total = [], WerReport(0, 0, 0, 0)
    for k in sorted(ref):
        if not ref[k].split():
            raise DataError(f"reference for {k!r} is empty")
        rep = wer(ref[k], hyp.get(k, ""))
        per_utt.append(rep.wer)
        total = total + rep
    return total, per_utt


def cmd_eval(args) -> int:
    ref = read_text_table(args.ref)
    if not ref:
        raise DataError(f"{args.ref}: no reference utterances")
    total, per_a = _score(ref, read_text_table(args.hyp), str(args.hyp))
    rec = total.as_record()
    lines = [f"utterances: {len(ref)}",
             f"words: {rec['N']}  substitutions: {rec['S']}  deletions: {rec['D']}  insertions: {rec['I']}",
             f"WER: {rec['WER']} ({100 * rec['WER']:.2f}%)"]
    if args.compare:
        other, per_b = _score(ref, read_text_table(args.compare), str(args.compare))
        try:
            t, p, df = paired_t_test(per_a, per_b)
        except DegenerateTestError as exc:
            raise DataError(f"paired t-test undefined: {exc}") from None
        rec.update({"WER_B": other.wer, "t": t, "p": p, "df": df})
        lines.append(f"compare WER: {other.wer} ({100 * other.wer:.2f}%)")
        lines.append(f"paired t-test: t={t:.4f} df={df} p={p:.4g}")
    print("\n".join(lines))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for k, v in rec.items():
                fh.write(f"{k}\t{v!r}\n" if isinstance(v, float) else f"{k}\t{v}\n")
    return EXIT_OK


# --- lm-train ----------------------------------------------------------------

def cmd_lm_train(args) -> int:
    cfg = _config(args)
    alphabet = _alphabet(cfg)
    order = args.order or cfg.lm.order
    policy = NormalizationPolicy()
    sentences, rejected = [], 0
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            norm = normalize(line, policy, alphabet)
            if isinstance(norm, Rejection) or not norm:
                rejected += 1
                continue
            sentences.append(norm)
    if rejected:
        log.warning("%d corpus line(s) rejected by text normalization", rejected)
    model = lmmod.train(sentences, order=order)
    model.header = {"alphabet": alphabet.digest(), "order": str(order), "sentences": str(len(sentences)),
                    "discounts": " ".join(f"{d:.6f}" for d in model.discounts)}
    lmmod.save_arpa(model, args.out)
    print(f"sentences: {len(sentences)}\nrejected: {rejected}\norder: {order}\nvocabulary: {len(model.predictable())}")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arasr", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", "-c", help="pipeline YAML config (defaults if omitted)")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="override a config field, e.g. training.max_epochs=5")
        return sp

    sp = common(sub.add_parser("prepare", help="clean raw audio/transcript pairs into a manifest"))
    sp.add_argument("raw_dir")
    sp.add_argument("out_manifest")
    sp.add_argument("--rejections", help="rejection log path (default: next to the manifest)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_prepare)

    sp = common(sub.add_parser("train", help="train the acoustic model with CTC"))
    sp.add_argument("manifest")
    sp.add_argument("checkpoint", help="output checkpoint, rewritten after every epoch")
    sp.add_argument("--dev", help="dev manifest for early stopping")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--log", help="also write the training log to this file")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("decode", help="transcribe a manifest"))
    sp.add_argument("manifest")
    sp.add_argument("checkpoint")
    sp.add_argument("out", help="hypothesis TSV")
    sp.add_argument("--lm", help="ARPA language model (overrides lm.path)")
    sp.add_argument("--greedy", action="store_true", help="best-path decoding, no beam or LM")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="score hypotheses against references")
    sp.add_argument("ref", help="reference TSV (id, text) or manifest")
    sp.add_argument("hyp", help="hypothesis TSV")
    sp.add_argument("--compare", help="second hypothesis file for a paired t-test")
    sp.add_argument("--out", help="write key/value records here")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("lm-train", help="train a Kneser-Ney n-gram LM and write ARPA"))
    sp.add_argument("corpus", help="text file, one sentence per line")
    sp.add_argument("out", help="output ARPA file")
    sp.add_argument("--order", type=int, help="n-gram order (default: lm.order)")
    sp.set_defaults(func=cmd_lm_train)

    sp = common(sub.add_parser("config", help="print the canonical form of a config"))
    sp.set_defaults(func=cmd_config)
    return p


_DATA_ERRORS = (DataError, ManifestError, SplitError, EncodingError, InfeasibleTargetError, EmptyFeatureError,
                au.AudioFormatError, au.UnsupportedAudioError, lmmod.LmTrainingError, lmmod.ArpaFormatError,
                ckpt_io.CheckpointError)
_CONFIG_ERRORS = (UsageError, ConfigError, ConfigurationError, ConsistencyError, AlphabetConfigError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"arasr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    handler = None
    if getattr(args, "log", None):
        handler = logging.FileHandler(args.log, mode="a", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (TrainingError, ArithmeticError, MemoryError, OSError) as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        log.exception("unexpected failure: %s", exc)
        return EXIT_RUNTIME
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
