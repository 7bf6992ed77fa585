"""Write the synthetic tone-sequence corpus (wavs, manifest, alphabet, LM text)."""

import argparse

from arasr import toy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--n", type=int, default=20, help="number of utterances")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    manifest = toy.build(args.out_dir, toy.ToySpec(n_utterances=args.n, seed=args.seed))
    print(manifest)


if __name__ == "__main__":
    main()
