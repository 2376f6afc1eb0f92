"""Objective label generators and finetuning datasets."""

from .acronyms import (
    ADExample, GenerationError, PADPair, gen_ad_finetune_example, gen_pad_example, has_accidental_match,
    initials, mutate,
)
from .boundary import E, LABEL_NAMES, NONE, S, SE, bracketize, decode_brackets, encode_boundary_labels, snap_spans
from .examples import (
    HEADS, OBJECTIVE_HEADS, OBJECTIVES, BucketSampler, PretrainData, TrainingExample, encode_ad, encode_ct,
    encode_task, read_jsonl, read_task_records, read_training_examples, write_jsonl,
)
from .lm import MaskResult, NSPIndex, make_nsp_pair, mask_weights, pack_pair, pack_single, weighted_mask
from .markup import WEB, WIKI, Chunk, Document, MarkupError, chunks, parse_corpus, parse_markup, read_corpus, write_corpus
from .synthetic import (
    STOPWORDS, CorpusParams, CTExample, Lexicon, SyntheticCorpus, check_disjoint_split, gen_ad_dataset,
    gen_ct_dataset, gen_synthetic_corpus, shared_unigrams,
)
