"""Causal mediation analysis of subject-verb agreement in a small numpy transformer."""
from .errors import SACMError
from .grammar import (ALL_KINDS, ANALYSIS_KINDS, Prompt, Structure, StructureKind, Vocabulary, build_lexicon,
                      generate_prompts)
from .model import HeadId, ModelConfig, ModelSnapshot, NeuronId, PatchSet, forward, forward_patched, init_model

__version__ = "0.1.0"

__all__ = ["SACMError", "ALL_KINDS", "ANALYSIS_KINDS", "Prompt", "Structure", "StructureKind", "Vocabulary",
           "build_lexicon", "generate_prompts", "HeadId", "ModelConfig", "ModelSnapshot", "NeuronId", "PatchSet",
           "forward", "forward_patched", "init_model"]
