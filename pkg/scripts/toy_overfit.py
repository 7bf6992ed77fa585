"""Overfit the tone-sequence corpus and report per-utterance loss, greedy WER and determinism.

Usage: python scripts/toy_overfit.py [--config experiments/toy_overfit.yaml] [--work DIR] [--runs 2]
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from arasr import toy
from arasr.acoustic import checkpoint as ckpt_io
from arasr.acoustic.model import AcousticNet
from arasr.acoustic.optim import OptimizerState
from arasr.config import load_config
from arasr.corpus import load_features, load_manifest
from arasr.ctc import CtcTarget, ctc_loss, greedy_decode
from arasr.metrics import align
from arasr.text import encode, load_alphabet
from arasr.train import UtteranceSet, fit

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "experiments" / "toy_overfit.yaml"


@dataclass
class OverfitResult:
    epochs: int
    stop_reason: str
    losses: list[float]  # inference-mode CTC loss per utterance
    wer: float  # corpus greedy-decode WER on the training set
    checkpoint: bytes
    seconds: float

    @property
    def mean_loss(self) -> float:
        return math.fsum(self.losses) / len(self.losses)


def build_corpus(work: Path) -> Path:
    return toy.build(work, toy.ToySpec(n_utterances=20, min_duration=1.0, max_duration=3.0))


def run_once(work: Path, config=DEFAULT_CONFIG, overrides=()) -> OverfitResult:
    manifest_path = work / "manifest.tsv"
    if not manifest_path.is_file():
        build_corpus(work)
    cfg = load_config(config, overrides)
    cfg = dataclasses.replace(cfg, alphabet=str(work / "alphabet.txt"))
    alphabet = load_alphabet(work / "alphabet.txt")
    entries = list(load_manifest(manifest_path, (cfg.audio.min_duration, cfg.audio.max_duration), alphabet))
    feats = [f.frames for f in load_features(entries, cfg.features.frame_length, cfg.features.frame_shift)]
    data = UtteranceSet([e.utterance_id for e in entries], feats,
                        [encode(e.transcript, alphabet) for e in entries], [e.duration for e in entries])

    t0 = time.perf_counter()
    net = AcousticNet(cfg.architecture, alphabet.num_classes, seed=cfg.training.seed)
    opt = OptimizerState.for_params(net.params, cfg.training.initial_lr)
    state = fit(net, opt, data, None, cfg.training, alphabet.blank_index)
    seconds = time.perf_counter() - t0

    losses, errors, words = [], 0, 0
    for e, f, tgt in zip(entries, feats, data.targets):
        lp, out_len = net.forward(f, mode="infer")
        lp = lp[0, :out_len[0]].astype("float64")
        losses.append(ctc_loss(lp, CtcTarget(tgt.labels, alphabet.blank_index)))
        rep = align(e.transcript.split(), greedy_decode(lp, alphabet).split())
        errors += rep.errors
        words += rep.reference_words
    blob = ckpt_io.dumps(ckpt_io.Checkpoint(net, opt, alphabet.symbols, alphabet.digest(),
                                            {"train": state.to_dict(), "config": cfg.to_dict()}))
    return OverfitResult(state.next_epoch, state.stop_reason or "", losses, errors / words, blob, seconds)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(DEFAULT_CONFIG))
    ap.add_argument("--work", help="corpus directory (default: a temporary directory)")
    ap.add_argument("--runs", type=int, default=2)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(args.work) if args.work else Path(tmp)
        results = []
        for i in range(args.runs):
            r = run_once(work, args.config, args.set)
            results.append(r)
            print(f"run {i}: epochs={r.epochs} mean_loss={r.mean_loss:.4f} max_loss={max(r.losses):.4f} "
                  f"wer={r.wer:.2%} time={r.seconds:.0f}s stop='{r.stop_reason}'")
        if len(results) > 1:
            same = all(r.checkpoint == results[0].checkpoint for r in results)
            print(f"checkpoints identical across runs: {same}")


if __name__ == "__main__":
    main()
