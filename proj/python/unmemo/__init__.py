"""Python front end for the unmemo C++ core.

Configs and reports are plain dicts; the extension takes and returns JSON.
"""

import json

from . import _unmemo
from ._unmemo import (
    Model,
    UnmemoError,
    Vocab,
    build_vocab,
    edit_distance_words,
    generate,
    generate_articles,
    greedy_match_length,
    init_model,
    lcs_contiguous_words,
    lcs_words,
    leading_sentences,
    load,
    maintain_loss,
    normalize_text,
    parameter_count,
    perplexity,
    rephrase,
    rouge2,
    save,
    split_words,
    stride_positions,
    tokenize_words,
)

__version__ = _unmemo.__version__


def _dump(cfg):
    return json.dumps(cfg or {})


def default_config():
    return json.loads(_unmemo.default_config())


def workspace(config=None):
    """Corpus, vocabulary and framed token ids exactly as the pipeline builds them."""
    return _unmemo.workspace(_dump(config))


def model_config(model):
    return json.loads(model.config)


def build_forget_target(logits, config=None):
    return _unmemo.build_forget_target(logits, _dump(config))


def forget_loss(live_logits, reference_logits, config=None):
    return _unmemo.forget_loss(live_logits, reference_logits, _dump(config))


def maintain_kl(live_logits, reference_logits, config=None):
    return _unmemo.maintain_loss(live_logits, reference_logits, _dump(config))


def pretrain(model, retain, config=None):
    return _unmemo.pretrain(model, retain, _dump(config))


def probe_sweep(model, vocab, framed_ids, protocol=None):
    return json.loads(_unmemo.probe_sweep(model, vocab, framed_ids, _dump(protocol)))


def unmemorize(live, reference, forget, config=None):
    """Runs unmemorization on `live` in place and returns the report."""
    return json.loads(_unmemo.unmemorize(live, reference, forget, _dump(config)))


def compress(model, target_ids, config=None):
    return json.loads(_unmemo.compress(model, target_ids, _dump(config)))


def run_pipeline(config=None):
    report, run_dir = _unmemo.run_pipeline(_dump(config))
    return json.loads(report), run_dir


def run_ablation(config, axis, checkpoint=""):
    report, run_dir = _unmemo.run_ablation(_dump(config), axis, str(checkpoint))
    return json.loads(report), run_dir


def validate_report(report):
    return _unmemo.validate_report(json.dumps(report))


def report_schema():
    return json.loads(_unmemo.report_schema())
