"""File formats: 8-bit PGM images, schedule CSV and 16-bit mono WAV."""

from __future__ import annotations

import csv
import io
import re
import wave
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ValidationError

_AFFINE_RE = re.compile(r"#\s*affine\s+lo=(\S+)\s+hi=(\S+)")


def encode_pgm(img: np.ndarray, lo: float | None = None, hi: float | None = None) -> bytes:
    """Binary (P5) PGM; ``[lo, hi]`` (default: the image range) maps to 0..255.

    The mapping is recorded as a ``# affine lo=.. hi=..`` header comment so
    :func:`decode_pgm` can undo it up to 8-bit quantization.  Values outside
    an explicit range are clipped.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("PGM images must be 2-D")
    if not np.all(np.isfinite(img)):
        raise ValidationError("PGM images must be finite")
    lo = float(img.min()) if lo is None else float(lo)
    hi = float(img.max()) if hi is None else float(hi)
    if hi == lo:
        hi = lo + 1.0
    if not hi > lo:
        raise ValidationError("PGM range needs hi > lo")
    q = np.rint((np.clip(img, lo, hi) - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = q.shape
    header = f"P5\n# affine lo={lo!r} hi={hi!r}\n{w} {h}\n255\n".encode("ascii")
    return header + q.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 or P2 PGM with maxval <= 255 back to floats."""
    fields: list[bytes] = []
    lo, hi = 0.0, 1.0
    pos = 0
    while len(fields) < 4:
        # skip whitespace
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValidationError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            m = _AFFINE_RE.match(data[pos:end].decode("ascii", "replace"))
            if m:
                lo, hi = float(m.group(1)), float(m.group(2))
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic = fields[0]
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ValidationError("malformed PGM header") from None
    if magic not in (b"P5", b"P2") or not 0 < maxval <= 255 or w < 1 or h < 1:
        raise ValidationError("only 8-bit P5/P2 PGM files are supported")
    if magic == b"P5":
        body = data[pos + 1:pos + 1 + w * h]
        if len(body) != w * h:
            raise ValidationError("truncated PGM pixel data")
        q = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    else:
        try:
            q = np.array([int(v) for v in data[pos:].split()], dtype=np.float64)
        except ValueError:
            raise ValidationError("malformed ASCII PGM data") from None
        if q.size != w * h:
            raise ValidationError("ASCII PGM pixel count mismatch")
    return lo + q.reshape(h, w) / maxval * (hi - lo)


def write_pgm(path, img: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    Path(path).write_bytes(encode_pgm(img, lo, hi))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def latent_csv(img: np.ndarray) -> str:
    """Row-major CSV, one image row per line, 9 significant digits."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("latent CSV needs a 2-D image")
    return "".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in img)


def parse_latent_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    try:
        data = [[float(v) for v in line.split(",")] for line in rows]
    except ValueError:
        raise ValidationError("latent CSV contains a non-numeric cell") from None
    if not data or len({len(r) for r in data}) != 1:
        raise ValidationError("latent CSV rows must be non-empty and equally long")
    return np.array(data)


def schedule_csv(sched: NoiseSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "alpha", "sigma"))
    for t, (a, s) in enumerate(zip(sched.alpha, sched.sigma)):
        w.writerow((t, f"{a:.17g}", f"{s:.17g}"))
    return buf.getvalue()


def parse_schedule_csv(text: str) -> NoiseSchedule:
    reader = csv.reader(io.StringIO(text))
    if next(reader, None) != ["t", "alpha", "sigma"]:
        raise ValidationError("schedule CSV header must be t,alpha,sigma")
    alpha, sigma = [], []
    for i, rec in enumerate(r for r in reader if r):
        if len(rec) != 3 or int(rec[0]) != i:
            raise ValidationError(f"schedule row {i} malformed: {rec!r}")
        alpha.append(float(rec[1]))
        sigma.append(float(rec[2]))
    return NoiseSchedule(np.array(alpha), np.array(sigma))


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """16-bit little-endian mono PCM; samples are floats in [-1, 1]."""
    pcm = np.rint(np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValidationError("expected 16-bit mono WAV")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0, rate
