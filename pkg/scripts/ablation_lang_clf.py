#!/usr/bin/env python3
"""Train the same synthetic setup with and without the language head and
print the word-level F1 of both, mirroring the joint-vs-single comparison."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from run_synthetic_e2e import CONFIG  # noqa: E402

from slavtag import synth  # noqa: E402
from slavtag.cli import main as cli  # noqa: E402
from slavtag.synth import SynthSpec  # noqa: E402


def last_row(history_csv: Path) -> dict:
    header, *rows = history_csv.read_text().splitlines()
    return dict(zip(header.split(","), rows[-1].split(",")))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="ablation_run")
    parser.add_argument("--epochs", type=int, default=150)
    args = parser.parse_args()

    work = Path(args.workdir)
    spec = SynthSpec(docs_per_lang=5, sents_per_doc=4, seed=7, entity_width=2,
                     single_piece=True, balanced=True)
    synth.generate_corpus(work / "corpus", spec)
    (work / "run.cfg").write_text(CONFIG.format(epochs=args.epochs), encoding="utf-8")
    cli(["prepare", "--corpus", str(work / "corpus"),
         "--vocab", str(work / "corpus" / "vocab.txt"),
         "--out", str(work / "cache"), "--max-len", "16",
         "--languages", ",".join(spec.languages)])
    for name, extra in (("joint", []), ("single", ["--no-lang-clf"])):
        code = cli(["train", "--train", str(work / "cache"),
                    "--dev", str(work / "cache"), "--config", str(work / "run.cfg"),
                    "--out", str(work / name), "--synthetic-embeddings", "11,12,32",
                    *extra])
        if code != 0:
            sys.exit(code)
    joint = last_row(work / "joint" / "history.csv")
    single = last_row(work / "single" / "history.csv")
    print("\nconfiguration  word_f1  span_f1  lang_f1")
    for name, row in (("joint", joint), ("single", single)):
        print(f"{name:<13s} {float(row['dev_word_f1']):.4f}   "
              f"{float(row['dev_span_f1']):.4f}   {float(row['dev_lang_f1']):.4f}")
    gap = float(joint["dev_word_f1"]) - float(single["dev_word_f1"])
    print(f"\njoint-minus-single word F1 gap: {gap:+.4f} (data-dependent)")


if __name__ == "__main__":
    main()
