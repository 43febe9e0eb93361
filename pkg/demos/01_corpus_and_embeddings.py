"""Loading a corpus and pretrained embeddings.

Builds a small JSON-lines corpus and a matching text embedding file on the
fly, then walks through tokenization, vocabulary construction, class splits,
and per-sentence embedding matrices.

Run:  python3 demos/01_corpus_and_embeddings.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from metadapt import (embed_sentence, load_embeddings, load_jsonl_dataset,
                      split_classes, tokenize)

work = Path(tempfile.mkdtemp(prefix="metadapt_demo_"))

# --- a tiny news-style corpus -------------------------------------------
rows = [
    {"text": "Senate committee advances bill to protect Robert Mueller.", "label": "politics"},
    {"text": "Olympic committee CEO resigns, cites health issues.", "label": "sports"},
    {"text": "New trail mix recipes for the long weekend!", "label": "food"},
    {"text": "Goalkeeper saves penalty in stoppage time.", "label": "sports"},
    {"text": "House votes on the updated budget resolution.", "label": "politics"},
    {"text": "Sourdough starters: a beginner's guide.", "label": "food"},
]
corpus = work / "corpus.jsonl"
corpus.write_text("\n".join(json.dumps(r) for r in rows) + "\n")

print("tokenize('Senate committee advances bill.') ->",
      tokenize("Senate committee advances bill."))

dataset = load_jsonl_dataset(corpus)
print(f"\nloaded {len(dataset)} examples, {len(dataset.classes)} classes, "
      f"vocab size {len(dataset.vocab)}")
print("label names:", dataset.label_names)
print("first example ids:", dataset.examples[0].token_ids)

# --- embeddings: optional "V d" header, one token per line ---------------
rng = np.random.default_rng(0)
vec = work / "embeddings.vec"
with open(vec, "w") as fh:
    fh.write(f"{len(dataset.vocab)} 8\n")
    for tok in dataset.vocab.tokens[:-2]:   # leave two tokens out-of-vocabulary
        vals = " ".join(f"{v:.6f}" for v in rng.normal(size=8))
        fh.write(f"{tok} {vals}\n")

table = load_embeddings(vec, dataset.vocab)
print(f"\nembedding table: {table.matrix.shape}, "
      f"{table.oov_count} out-of-vocabulary tokens (zero rows)")

W = embed_sentence(dataset.examples[0], table)
print("sentence matrix for example 0:", W.shape, "(d x m, one column per token)")

# --- disjoint class split -------------------------------------------------
split = split_classes(dataset.classes, (1, 1, 1), np.random.default_rng(7))
print("\nclass split:", split)
