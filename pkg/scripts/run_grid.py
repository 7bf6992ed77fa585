"""Train and decode every architecture in experiments/ and tabulate dev WER.

Usage: python scripts/run_grid.py TRAIN.tsv DEV.tsv OUT_DIR [--lm LM.arpa] [--alphabet A.txt]

Each run shells out to the ``arasr`` command line so results match manual runs.
"""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def arasr(*argv) -> str:
    proc = subprocess.run([sys.executable, "-m", "arasr.cli", *map(str, argv)], capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemExit(f"arasr {argv[0]} failed ({proc.returncode}):\n{proc.stderr}")
    return proc.stdout


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("train")
    ap.add_argument("dev")
    ap.add_argument("out_dir")
    ap.add_argument("--lm")
    ap.add_argument("--alphabet")
    ap.add_argument("--pattern", default="c*_r*_*.yaml")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for config in sorted((ROOT / "experiments").glob(args.pattern)):
        name = config.stem
        extra = ["--config", config] + (["--set", f"alphabet={Path(args.alphabet).resolve()}"] if args.alphabet else [])
        ckpt, hyp = out / f"{name}.ckpt", out / f"{name}.hyp.tsv"
        arasr("train", args.train, ckpt, "--dev", args.dev, "--log", out / f"{name}.log", *extra)
        decode = ["--lm", args.lm] if args.lm else ["--set", "decoder.alpha=0"]
        arasr("decode", args.dev, ckpt, hyp, *decode, *extra)
        report = out / f"{name}.wer.tsv"
        arasr("eval", args.dev, hyp, "--out", report)
        rec = dict(line.split("\t") for line in report.read_text(encoding="utf-8").splitlines())
        rows.append((name, float(rec["WER"])))
        print(f"{name}\t{float(rec['WER']):.4f}", flush=True)
    with open(out / "grid.tsv", "w", encoding="utf-8") as fh:
        fh.write("config\tWER\n")
        for name, w in rows:
            fh.write(f"{name}\t{w:.6f}\n")


if __name__ == "__main__":
    main()
