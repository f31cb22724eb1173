# %% [markdown]
# # Training the toy language model
#
# A small pre-LN transformer written directly in numpy, trained with AdamW
# on the synthetic corpus. This demo uses a reduced budget (a few hundred
# steps) so it finishes in about a minute; the experiment default is 2500
# steps at width 128.

# %%
import numpy as np

from sacm import effects as fx
from sacm.grammar import (Structure, StructureKind, Vocabulary, build_lexicon, generate_prompts, is_heldout,
                          make_training_corpus)
from sacm.model import ModelConfig, init_model
from sacm.training import TrainConfig, train

lex = build_lexicon(0)
vocab = Vocabulary.from_lexicon(lex)
corpus = make_training_corpus(lex, 20000, seed=1)
encoded = [vocab.encode(s) for s in corpus.sentences]

model = init_model(ModelConfig(n_layers=2, d_model=64, n_heads=4, vocab_size=len(vocab)), vocab.words)
print("parameters:", model.n_parameters())

# %%
hp = TrainConfig(steps=400, batch_size=64, lr=3e-3, warmup=40, checkpoint_every=0)
result = train(model, encoded, hp)
print("first/last loss: %.3f -> %.3f, held-out sentences: %.3f"
      % (result.losses[0], np.mean(result.losses[-20:]), result.val_loss))

# %% [markdown]
# The grammaticality margin G = p(correct)/p(incorrect) on prompts whose
# subject/verb pair never appeared in training.

# %%
simple = StructureKind(Structure.SIMPLE_AGREEMENT)
prompts = [p for p in generate_prompts(simple, 320, lex, 0) if is_heldout(p, corpus.heldout_pairs)]
g = [fx.grammaticality(result.model, p) for p in prompts]
print(f"G > 1 on {sum(x > 1 for x in g)}/{len(g)} held-out prompts, median G = {np.median(g):.2f}")
