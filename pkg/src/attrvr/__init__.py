"""Attribute-guided visual reprogramming for dual-encoder image-text models."""

from .attributes import (
    AttributeBank,
    FixtureClient,
    GenerationSettings,
    build_prompt,
    generate_bank,
    load_bank,
    precompute_embeddings,
    save_bank,
)
from .encoders import (
    EncoderBackend,
    ToyDualEncoder,
    class_probabilities,
    embed_texts,
    load_backend,
    sim_clip,
)
from .harness import (
    FewShotSplit,
    StudySpec,
    export_embeddings,
    make_shapes7,
    make_splits,
    run_study,
    write_report,
)
from .reprogram import (
    ImageSample,
    VRPattern,
    load_pattern,
    make_pattern,
    overlay_apply,
    pad_and_apply,
    save_pattern,
)
from .scoring import ScoreConfig, attrzs_predict, knn_select, score_variant, sim_attr
from .separability import LemmaCheckConfig, attr_frequencies, cs, lemma_check, top_m_by
from .training import TrainConfig, ce_loss_and_grad, cosine_lr, evaluate, train

__version__ = "0.1.0"
