"""Language branch: vocabulary, QA templates, adapters, tiny causal LM."""

from dima.language.adapters import AdaptedScene, adapt, init_adapters, subsample_agents
from dima.language.lm import (
    edit_decode,
    ego_decode,
    ego_feature,
    future_decode,
    generate,
    init_lm,
    lm_hidden,
    logits_from_hidden,
    pack_qa,
    recon_decode,
    scene_hidden,
    vqa_loss,
)
from dima.language.templates import CATEGORIES, EDIT_CATEGORIES, QaPair, edit_qa_pair, qa_for
from dima.language.vocab import (
    BOS,
    EOS,
    PAD,
    SEP,
    Vocabulary,
    bucket_token,
    build_vocab,
)

__all__ = [
    "AdaptedScene",
    "BOS",
    "CATEGORIES",
    "EDIT_CATEGORIES",
    "EOS",
    "PAD",
    "QaPair",
    "SEP",
    "Vocabulary",
    "adapt",
    "bucket_token",
    "build_vocab",
    "edit_decode",
    "edit_qa_pair",
    "ego_decode",
    "ego_feature",
    "future_decode",
    "generate",
    "init_adapters",
    "init_lm",
    "lm_hidden",
    "logits_from_hidden",
    "pack_qa",
    "qa_for",
    "recon_decode",
    "scene_hidden",
    "subsample_agents",
    "vqa_loss",
]
