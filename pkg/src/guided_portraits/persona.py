"""Persona assembly: personality text, voice profile and a detectable portrait."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cfgfile
from .diffusion import NoiseSchedule, PosteriorMeanDenoiser, sample
from .errors import ContractViolation, InitializationError, ValidationError
from .evaluation import style_data_model
from .face import Detector, DetectorConfig, oval_bbox
from .guidance import GuidanceConfig, LandmarkMemory, make_hook
from .imageio import write_pgm, write_wav
from .llm import DEFAULT_TIMEOUT, SerializedCall
from .router import Expert, LLMSelector, Registry, select

TEMPLATE_PATH = Path(__file__).with_name("data") / "personality_prompt.txt"
TEMPLATE_SHA256 = "f7f35954a5b2fef755d29f02faf5b700d968b4e653435509fae47e9ea62e0da4"
PLACEHOLDER = "{object}"

MAX_ESCALATIONS = 3
ESCALATION_STEP = (0.2, 0.5)
ESCALATION_CAPS = (1.0, 3.0)


def load_template() -> str:
    data = TEMPLATE_PATH.read_bytes()
    if hashlib.sha256(data).hexdigest() != TEMPLATE_SHA256:
        raise ContractViolation(f"{TEMPLATE_PATH.name} does not match its pinned hash")
    return data.decode("utf-8")


def _object_name(object_text: str) -> str:
    if not isinstance(object_text, str) or not object_text.strip():
        raise ValidationError("object text must be non-empty")
    return object_text.strip()


def render_personality_prompt(object_text: str) -> str:
    """Template with every placeholder replaced by the trimmed object text.

    Replacement is a single pass, so placeholders inside ``object_text`` are
    left as literal text.
    """
    name = _object_name(object_text)
    return load_template().replace(PLACEHOLDER, name)


@dataclass(frozen=True)
class Personality:
    text: str
    fallback: bool = False
    reason: str = ""


def fallback_personality(object_text: str) -> str:
    """Deterministic second-person personality used when no model reply is available."""
    name = _object_name(object_text)
    title = " ".join(w.capitalize() for w in name.split())
    return (
        f"You are {title} Friend, a living {name}. "
        f"You speak to the user in your own voice and describe the world from the point of view of {name}. "
        f"You are curious and kind, and every answer you give carries a little of what makes you special."
    )


def generate_personality(object_text: str, client=None, timeout: float | None = DEFAULT_TIMEOUT) -> Personality:
    prompt = render_personality_prompt(object_text)
    if client is None:
        return Personality(fallback_personality(object_text), True, "no client configured")
    try:
        reply = SerializedCall(timeout)(lambda: client.complete(prompt))
    except Exception as exc:
        return Personality(fallback_personality(object_text), True, f"client error: {exc}")
    if not isinstance(reply, str) or not reply.strip():
        return Personality(fallback_personality(object_text), True, "empty reply")
    return Personality(reply.strip(), False, "")


@dataclass(frozen=True)
class VoiceProfile:
    id: str
    tone_description: str
    base_frequency: float
    rate: float

    def __post_init__(self):
        if not self.base_frequency > 0 or not self.rate > 0:
            raise ContractViolation("voice base_frequency and rate must be positive")

    @classmethod
    def from_expert(cls, expert: Expert) -> "VoiceProfile":
        if expert.kind != "voice":
            raise ContractViolation(f"{expert.id} is not a voice expert")
        try:
            return cls(expert.id, expert.description, float(expert.payload["base_frequency"]),
                       float(expert.payload["rate"]))
        except (KeyError, ValueError):
            raise ValidationError(f"voice {expert.id}: payload needs numeric base_frequency and rate") from None


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def sha256(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.samples, dtype="<f8").tobytes()).hexdigest()


def _token_offset(token: str) -> float:
    """Deterministic frequency offset in [-0.1, 0.1)."""
    u = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little") / 2.0**64
    return 0.2 * (u - 0.5)


def synthesize_voice_stub(text: str, profile: VoiceProfile, sample_rate: int = 16000) -> Waveform:
    """One sine burst per whitespace token, ``1 / rate`` seconds each, peak 0.9."""
    if sample_rate < 8000:
        raise ContractViolation("sample_rate must be at least 8000 Hz")
    tokens = text.split()
    if not tokens:
        return Waveform(np.zeros(0), sample_rate)
    edges = [round(i * sample_rate / profile.rate) for i in range(len(tokens) + 1)]
    out = np.zeros(edges[-1])
    fade = max(1, int(0.005 * sample_rate))
    for tok, a, b in zip(tokens, edges[:-1], edges[1:]):
        n = b - a
        if n <= 0:
            continue
        f = profile.base_frequency * (1.0 + _token_offset(tok))
        t = np.arange(n) / sample_rate
        env = np.ones(n)
        k = min(fade, n // 2)
        if k:
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
            env[:k] = ramp
            env[n - k:] = ramp[::-1]
        out[a:b] = np.sin(2 * np.pi * f * t) * env
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.9 / peak
    return Waveform(out, sample_rate)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class Attempt:
    injection_weight: float
    structural_weight: float
    confidence: float
    found: bool


@dataclass(frozen=True)
class PersonaSpec:
    object_text: str
    personality: str
    diffuser_id: str
    voice_id: str
    portrait_seed: int
    guidance: GuidanceConfig
    landmark_id: str
    portrait_path: str
    personality_fallback: bool = False
    attempts: tuple[Attempt, ...] = field(default_factory=tuple)

    def to_text(self) -> str:
        g = self.guidance
        sections = [
            cfgfile.Section("persona", {
                "object_text": _escape(self.object_text),
                "personality": _escape(self.personality),
                "personality_fallback": str(self.personality_fallback).lower(),
                "diffuser_id": self.diffuser_id,
                "voice_id": self.voice_id,
                "portrait_seed": str(self.portrait_seed),
                "landmark_id": self.landmark_id,
                "portrait_path": self.portrait_path,
            }),
            cfgfile.Section("guidance", {
                "injection_weight": repr(float(g.injection_weight)),
                "window_fraction": repr(float(g.window_fraction)),
                "structural_weight": repr(float(g.structural_weight)),
                "blur_std": repr(float(g.blur_std)),
            }),
        ]
        for a in self.attempts:
            sections.append(cfgfile.Section("attempt", {
                "injection_weight": repr(float(a.injection_weight)),
                "structural_weight": repr(float(a.structural_weight)),
                "confidence": repr(float(a.confidence)),
                "found": str(a.found).lower(),
            }))
        return cfgfile.dump(sections)

    @classmethod
    def from_text(cls, text: str) -> "PersonaSpec":
        secs = cfgfile.parse(text)
        p = cfgfile.sections_named(secs, "persona")
        g = cfgfile.sections_named(secs, "guidance")
        if len(p) != 1 or len(g) != 1:
            raise ValidationError("persona file needs exactly one [persona] and one [guidance] block")
        p, g = p[0], g[0]
        guidance = GuidanceConfig(g.get_float("injection_weight"), g.get_float("window_fraction"),
                                  g.get_float("structural_weight"), g.get_float("blur_std"),
                                  p.require("landmark_id"))
        attempts = tuple(
            Attempt(a.get_float("injection_weight"), a.get_float("structural_weight"), a.get_float("confidence"),
                    a.require("found") == "true")
            for a in cfgfile.sections_named(secs, "attempt")
        )
        return cls(_unescape(p.require("object_text")), _unescape(p.require("personality")),
                   p.require("diffuser_id"), p.require("voice_id"), int(p.require("portrait_seed")), guidance,
                   p.require("landmark_id"), p.require("portrait_path"),
                   p.require("personality_fallback") == "true", attempts)


def diffuser_guidance(expert: Expert) -> GuidanceConfig:
    base = GuidanceConfig()
    pl = expert.payload
    try:
        return GuidanceConfig(
            float(pl.get("injection_weight", base.injection_weight)),
            float(pl.get("window_fraction", base.window_fraction)),
            float(pl.get("structural_weight", base.structural_weight)),
            float(pl.get("blur_std", base.blur_std)),
            pl.get("landmark_id", base.landmark_id),
        )
    except (ValueError, ContractViolation) as exc:
        raise ValidationError(f"diffuser {expert.id}: bad guidance payload ({exc})") from None


def diffuser_abstractness(expert: Expert) -> float:
    try:
        return float(expert.payload.get("abstractness", 0.3))
    except ValueError:
        raise ValidationError(f"diffuser {expert.id}: abstractness must be a number") from None


@dataclass(frozen=True)
class PersonaResult:
    spec: PersonaSpec
    portrait: np.ndarray
    voice: Waveform
    files: tuple[Path, ...] = ()


def init_persona(object_text: str, diffusers: Registry, voices: Registry, memory: LandmarkMemory, llm_client=None,
                 seed: int = 0, *, out_dir=None, detector_cfg: DetectorConfig | None = None,
                 num_steps: int = 50, sample_rate: int = 16000,
                 max_escalations: int = MAX_ESCALATIONS, timeout: float | None = DEFAULT_TIMEOUT) -> PersonaResult:
    """Route, write the personality and sample a portrait the detector accepts.

    When the first portrait is not detected, the injection and structural
    weights are raised by (0.2, 0.5), up to (1.0, 3.0), at most
    ``max_escalations`` times.  Every attempt is recorded in the returned PersonaSpec.
    """
    name = _object_name(object_text)
    if diffusers.kind != "diffuser" or voices.kind != "voice":
        raise ContractViolation("need a diffuser registry and a voice registry")
    selector = LLMSelector(llm_client, timeout) if llm_client is not None else None
    diffuser = select(diffusers, name, selector).expert
    voice = select(voices, name, selector).expert
    personality = generate_personality(name, llm_client, timeout)

    cfg = diffuser_guidance(diffuser)
    tpl = memory.get(cfg.landmark_id)
    cfg = replace(cfg, landmark_id=tpl.id)
    face = tpl.raster
    crop = oval_bbox(tpl.keypoints, face.shape[1], face.shape[0])
    sched = NoiseSchedule.cosine(num_steps)
    denoiser = PosteriorMeanDenoiser(style_data_model(diffuser.id, diffuser_abstractness(diffuser), face, crop), sched)
    detector = Detector(memory, detector_cfg)

    attempts, best, portrait = [], None, None
    for k in range(max_escalations + 1):
        if k:
            nxt = cfg.escalated(*ESCALATION_STEP, ESCALATION_CAPS)
            if (nxt.injection_weight, nxt.structural_weight) == (cfg.injection_weight, cfg.structural_weight):
                break  # both weights at their caps
            cfg = nxt
        x = sample(denoiser, sched, seed, make_hook(cfg, memory, sched))
        det = detector.detect(x)
        attempts.append(Attempt(cfg.injection_weight, cfg.structural_weight, det.confidence, det.found))
        if best is None or det.confidence > best:
            best = det.confidence
        if det.found:
            portrait = x
            break
    if portrait is None:
        raise InitializationError(f"no detectable portrait for {name!r} after {len(attempts)} attempts "
                                  f"(best confidence {best:.3f})", best)

    profile = VoiceProfile.from_expert(voice)
    wave = synthesize_voice_stub(personality.text.split("\n")[0], profile, sample_rate)
    spec = PersonaSpec(name, personality.text, diffuser.id, voice.id, seed, cfg, tpl.id, "portrait.pgm",
                       personality.fallback, tuple(attempts))
    files: list[Path] = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "persona.cfg", out / "portrait.pgm", out / "voice.wav"]
        files[0].write_text(spec.to_text(), encoding="utf-8")
        write_pgm(files[1], portrait)
        write_wav(files[2], wave.samples, sample_rate)
    return PersonaResult(spec, portrait, wave, tuple(files))
