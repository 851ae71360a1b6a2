"""Retrieval-augmented VQA training with a compositional-generalization benchmark.

The package covers the full loop: corpus ingestion and synthetic generation,
primitive extraction on both modalities, primitive databases with exact
cosine retrieval, a small RNN-based VQA model trained with retrieval-augmented
features, benchmark split construction with an independent verifier, and an
evaluation/ablation harness exposed through the ``ragvqa`` CLI.
"""

from .config import PRESETS, ExperimentConfig, load_experiment_config
from .corpus import (
    Corpus,
    CorpusError,
    ObjectInstance,
    Question,
    Sample,
    SceneGraph,
    SynthConfig,
    build_corpus,
    generate_synthetic,
    load_corpus,
)
from .primitives import (
    Lexicon,
    Modality,
    PartOfSpeech,
    Primitive,
    default_lexicon,
    extract_linguistic,
    extract_visual,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusError",
    "ExperimentConfig",
    "Lexicon",
    "Modality",
    "ObjectInstance",
    "PRESETS",
    "PartOfSpeech",
    "Primitive",
    "Question",
    "Sample",
    "SceneGraph",
    "SynthConfig",
    "build_corpus",
    "default_lexicon",
    "extract_linguistic",
    "extract_visual",
    "generate_synthetic",
    "load_corpus",
    "load_experiment_config",
    "__version__",
]
