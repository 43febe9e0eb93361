"""Episodic meta-learning with an adversarial domain-adaptation network for
few-shot text classification."""

from .corpus import (ClassSplit, DataError, Dataset, EmbeddingTable, Example,
                     Vocab, embed_sentence, load_embeddings, load_jsonl_dataset,
                     split_classes, tokenize)
from .episodes import Episode, EpisodeSpec, relabel, sample_episode
from .harness import (EvalReport, MetricsRecord, TrainConfig, TrainResult,
                      dump_attention, dump_embeddings, gen_synthetic_corpus,
                      load_checkpoint, meta_test, run_gradient_checks,
                      save_checkpoint, train)
from .model import (DiscriminatorParams, EpisodeMetrics, GeneratorParams,
                    ModelConfig, RidgeClassifier, disc_loss, discriminate,
                    encode, episode_update, fuse, fuse_concat, gen_loss,
                    generate_attention, ridge_fit, ridge_predict)
from .nn import (AdamState, LstmParams, NumericalError, Param, adam_step,
                 bilstm_forward, cross_entropy, ffn_forward, grad_check,
                 lstm_cell, matmul, softmax)

__version__ = "0.1.0"
