"""Python bindings for the nuner concept-annotation and pre-training toolkit."""

import json
import os

from . import _nuner
from ._nuner import (
    Checkpoint,
    CheckpointError,
    DatasetFormatError,
    InfeasibleSplit,
    concept_vocab,
    decode_spans,
    gradcheck_ops,
    parse_llm_output,
    prompt_template,
    render_prompt,
    run_cli,
    sample_k_2k,
    tokenize,
)

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "DatasetFormatError",
    "InfeasibleSplit",
    "checkpoint_config",
    "collect_batch_concepts",
    "concept_vocab",
    "decode_spans",
    "entity_micro_f1",
    "gradcheck_ops",
    "ingest_completion",
    "load_dataset",
    "parse_llm_output",
    "prompt_template",
    "render_prompt",
    "run_cli",
    "sample_k_2k",
    "save_dataset",
    "target_array",
    "token_macro_f1",
    "tokenize",
]


def ingest_completion(sentence_id, text, completion):
    """Aligns an LLM completion to its sentence; returns the sentence record and counters."""
    return json.loads(_nuner._ingest_completion(sentence_id, text, completion))


def load_dataset(path):
    """Reads a dataset file into {"entity_types": [...], "sentences": [...]}."""
    return json.loads(_nuner._load_dataset(os.fspath(path)))


def save_dataset(path, sentences, entity_types=()):
    _nuner._save_dataset(os.fspath(path), json.dumps(list(sentences)), list(entity_types))


def collect_batch_concepts(sentences):
    return _nuner._collect_batch_concepts(json.dumps(list(sentences)))


def target_array(sentences, concepts):
    """Binary (S, T, C) target array and (S, T) token mask as uint8 arrays."""
    return _nuner._target_array(json.dumps(list(sentences)), list(concepts))


def token_macro_f1(pred, gold, types):
    return json.loads(_nuner._token_macro_f1(pred, gold, list(types)))


def entity_micro_f1(pred, gold, types):
    return json.loads(_nuner._entity_micro_f1(pred, gold, list(types)))


def checkpoint_config(checkpoint):
    return json.loads(checkpoint._config)
