# %% [markdown]
# # Stimuli: lexicon, structures and counterfactual prompts
#
# Everything downstream starts from a seeded lexicon. Prompts stop right
# before the verb slot, so the model's next-token distribution is what we
# read agreement from.

# %%
from sacm.grammar import (ALL_KINDS, apply_swap_number, build_lexicon, generate_prompts, make_training_corpus,
                          with_complementizer)

lex = build_lexicon(seed=0)
print(len(lex.nouns), "nouns,", len(lex.verbs), "verbs,", len(lex.adverbs), "adverbs,",
      len(lex.prepositions), "prepositions")
print("vocabulary size:", len(lex.vocabulary()))

# %% [markdown]
# One example per structure variant. The label encodes the attractor number
# and, for relative clauses, whether "that" was dropped.

# %%
for kind in ALL_KINDS:
    p = generate_prompts(kind, 1, lex, seed=7)[0]
    print(f"{kind.label:28s} {' '.join(p.tokens):40s} -> {p.correct_verb} / {p.incorrect_verb}")

# %% [markdown]
# The swap-number intervention changes only the subject token. Token count is
# preserved, which keeps positions aligned for activation patching later.

# %%
p = generate_prompts(ALL_KINDS[-2], 1, lex, seed=7)[0]
q = apply_swap_number(p)
print(p.tokens, p.subject_number)
print(q.tokens, q.subject_number)
print("without complementizer:", with_complementizer(p, False).tokens)

# %% [markdown]
# The training corpus mixes all six structures and keeps 10% of
# subject/verb pairs out, so generalization can be checked on unseen pairs.

# %%
corpus = make_training_corpus(lex, size=10, seed=1)
for s in corpus.sentences[:5]:
    print(" ".join(s))
print(len(corpus.heldout_pairs), "held-out subject/verb pairs, e.g.", sorted(corpus.heldout_pairs)[:3])
