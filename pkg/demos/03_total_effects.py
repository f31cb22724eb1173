# %% [markdown]
# # Total effects and the random-weights control
#
# TE measures how much swapping the subject's number moves the ratio
# y = p(incorrect)/p(correct). A model that tracks agreement flips its
# preference, so TE is large; an untrained model barely reacts.

# %%
from sacm import effects as fx
from sacm.grammar import ALL_KINDS, Vocabulary, build_lexicon, generate_prompts, make_training_corpus
from sacm.model import ModelConfig, init_model
from sacm.training import TrainConfig, train

lex = build_lexicon(0)
vocab = Vocabulary.from_lexicon(lex)
enc = [vocab.encode(s) for s in make_training_corpus(lex, 20000, seed=1).sentences]
cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, vocab_size=len(vocab))
random_model = init_model(cfg, vocab.words)
trained = train(random_model, enc, TrainConfig(steps=400, warmup=40, checkpoint_every=0)).model

# %%
print(f"{'variant':28s} {'TE trained':>12s} {'TE random':>12s}")
for kind in ALL_KINDS:
    ps = generate_prompts(kind, 60, lex, 7)
    a = fx.average_total_effect(trained, ps).mean
    b = fx.average_total_effect(random_model, ps).mean
    print(f"{kind.label:28s} {a:12.2f} {b:12.4f}")

# %% [markdown]
# The reciprocal identity behind TE: y after the swap, read in the original
# orientation, is exactly 1 / y of the swapped prompt.

# %%
p = generate_prompts(ALL_KINDS[0], 1, lex, 7)[0]
rec = fx.effect_record(trained, p)
print(rec)
print("G by subject number:", fx.grammaticality_table(trained, generate_prompts(ALL_KINDS[0], 40, lex, 7)))
