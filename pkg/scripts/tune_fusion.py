"""Grid-search decoder alpha/beta on a dev manifest for a trained checkpoint and LM.

Usage: python scripts/tune_fusion.py DEV.tsv MODEL.ckpt LM.arpa [--config C.yaml]
"""

import argparse
from pathlib import Path

import numpy as np

from arasr import lm as lmmod
from arasr.acoustic import checkpoint as ckpt_io
from arasr.config import load_config
from arasr.corpus import load_features, load_manifest
from arasr.ctc import grid_search_fusion
from arasr.metrics import wer
from arasr.text import load_alphabet


def floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("manifest")
    ap.add_argument("checkpoint")
    ap.add_argument("lm")
    ap.add_argument("--config")
    ap.add_argument("--alphas", type=floats, default=floats("0,0.5,1,1.5,2,2.5"))
    ap.add_argument("--betas", type=floats, default=floats("0,0.5,1,1.5,2"))
    ap.add_argument("--beam", type=int, default=64)
    args = ap.parse_args()
    cfg = load_config(args.config)
    alphabet = load_alphabet(cfg.resolve(cfg.alphabet))
    ck = ckpt_io.load(args.checkpoint)
    model = lmmod.load_arpa(args.lm)
    entries = list(load_manifest(Path(args.manifest), (cfg.audio.min_duration, cfg.audio.max_duration), alphabet))
    feats = load_features(entries, cfg.features.frame_length, cfg.features.frame_shift)
    utts = []
    for e, f in zip(entries, feats):
        lp, n = ck.net.forward(f.frames, mode="infer")
        utts.append((lp[0, :n[0]].astype(np.float64), e.transcript))
    best_wer, alpha, beta = grid_search_fusion(utts, alphabet, model, args.alphas, args.betas, wer,
                                               beam_width=args.beam)
    print(f"best alpha={alpha:g} beta={beta:g} WER={best_wer:.4f}")


if __name__ == "__main__":
    main()
