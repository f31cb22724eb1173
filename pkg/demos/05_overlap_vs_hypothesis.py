# %% [markdown]
# # Do structures share agreement neurons?
#
# For each structure we take the top 5% of neurons per layer, compare the
# sets across structures, and score each layer by how close its overlap
# matrix is to a feature-based hypothesis of which structures should be alike.

# %%
import numpy as np

from sacm import analysis as an
from sacm import effects as fx
from sacm import plotting
from sacm.grammar import ANALYSIS_KINDS, Vocabulary, build_lexicon, generate_prompts, make_training_corpus
from sacm.model import ModelConfig, init_model
from sacm.training import TrainConfig, train

lex = build_lexicon(0)
vocab = Vocabulary.from_lexicon(lex)
enc = [vocab.encode(s) for s in make_training_corpus(lex, 20000, seed=1).sentences]
cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, vocab_size=len(vocab))
model = train(init_model(cfg, vocab.words), enc, TrainConfig(steps=400, warmup=40, checkpoint_every=0)).model

# %%
labels = [k.label for k in ANALYSIS_KINDS]
selected = {}
for kind in ANALYSIS_KINDS:
    table = fx.neuron_effects_table(model, generate_prompts(kind, 20, lex, 7), fx.PatchPolicy.SUBJECT_ONLY)
    selected[kind.label] = an.top_k_per_layer(fx.mediator_effects(table, fx.PatchPolicy.SUBJECT_ONLY), 0.05)

hyp = an.hypothesis_matrix(labels)
print(np.round(hyp.values, 1))

# %%
per_layer = {l: an.overlap_matrix(selected, l) for l in range(cfg.n_layers + 1)}
for l, m in per_layer.items():
    print(f"layer {l}: l1 distance to hypothesis = {an.l1_difference(m, hyp):.1f}")
layer, norm = an.best_layer(per_layer, hyp)
print("closest layer:", layer, norm)

plotting.heatmap_svg(hyp, "hypothesis.svg", "hypothesized similarity")
plotting.heatmap_svg(per_layer[layer], "overlap.svg", f"overlap, layer {layer}")
