"""Episode sampling: support, query, and the adversarial source set.

Uses a synthetic keyword corpus so the episode structure is easy to see.
Every episode draws N classes, K support + L query examples per class, and
N*L source examples from classes outside the episode.

Run:  python3 demos/02_episode_sampling.py
"""

import numpy as np

from metadapt import EpisodeSpec, gen_synthetic_corpus, relabel, sample_episode

dataset, table, vocab = gen_synthetic_corpus(
    n_classes=8, examples_per_class=20, sentence_len=10,
    keywords_per_class=2, vocab_noise_size=8, d=16, seed=0)

spec = EpisodeSpec(n_way=3, k_shot=2, l_query=2)
rng = np.random.default_rng(42)

episode = sample_episode(dataset, dataset.classes, spec, rng)
print("episode classes (global ids):", episode.episode_classes)
print("local label map:", relabel(episode))
print(f"|support| = {len(episode.support)}  |query| = {len(episode.query)}  "
      f"|source| = {len(episode.source)}")

print("\nsupport sentences:")
for ex, local in episode.support:
    text = " ".join(vocab.tokens[t] for t in ex.token_ids)
    print(f"  [class {local}] {text}")

print("\nsource sentences come from classes outside the episode:")
for ex in episode.source[:3]:
    assert ex.label not in episode.episode_classes
    print(f"  [global class {ex.label}] "
          + " ".join(vocab.tokens[t] for t in ex.token_ids))

# determinism: the same seed reproduces the same episode byte for byte
again = sample_episode(dataset, dataset.classes, spec, np.random.default_rng(42))
first = sample_episode(dataset, dataset.classes, spec, np.random.default_rng(42))
print("\nsame seed, same episode:", first == again)

# evaluation episodes skip the source draw
eval_ep = sample_episode(dataset, dataset.classes, spec,
                         np.random.default_rng(1), with_source=False)
print("evaluation episode source size:", len(eval_ep.source))
