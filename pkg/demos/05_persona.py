"""Initializing a persona: personality text, voice and a detectable portrait."""

# %% The personality prompt is a fixed template with the object substituted
import tempfile
from pathlib import Path

from guided_portraits.guidance import default_memory
from guided_portraits.llm import StubClient
from guided_portraits.persona import init_persona, render_personality_prompt
from guided_portraits.router import default_registry

print(render_personality_prompt("apple"))

# %% A stub client stands in for a language model
stub = StubClient(choice="game-icon", completion="You are Apple Buddy, crisp and cheerful.")
out = Path(tempfile.mkdtemp())
res = init_persona("apple", default_registry("diffuser"), default_registry("voice"), default_memory(), stub,
                   seed=1, out_dir=out)
print(res.spec.to_text())
print("files:", [p.name for p in res.files])
print(f"voice: {res.voice.duration:.2f} s at {res.voice.sample_rate} Hz")

# %% Without a client the personality falls back to a deterministic text
res = init_persona("teapot", default_registry("diffuser"), default_registry("voice"), default_memory(), None, seed=1)
print(res.spec.personality)
print("attempts:", res.spec.attempts)
