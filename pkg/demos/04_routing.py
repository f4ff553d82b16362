"""Choosing a diffuser or voice expert from a text description."""

# %% Lexical routing: idf-weighted overlap with expert tags and descriptions
from guided_portraits.llm import FailingClient, StubClient
from guided_portraits.router import LLMSelector, default_registry, lexical_scores, select

diffusers = default_registry("diffuser")
for desc in ("a cute anime schoolgirl", "realistic photo of people", "pixar toy", ""):
    scores = dict(zip(diffusers.ids, (round(s, 3) for s in lexical_scores(diffusers, desc))))
    print(f"{desc!r:30s} -> {select(diffusers, desc).id:12s} {scores}")

# %% Voices are routed the same way
voices = default_registry("voice")
print("voice for 'an old wise grandfather':", select(voices, "an old wise grandfather").id)

# %% The language-model path validates the reply and falls back to lexical on any failure
for client in (StubClient("dreamshaper"), StubClient("nonexistent-id"), FailingClient(), None):
    res = select(diffusers, "a cute anime schoolgirl", LLMSelector(client))
    print(f"{type(client).__name__:13s} -> {res.id:12s} fallback={res.fallback} {res.reason}")
