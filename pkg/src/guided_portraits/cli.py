"""Command-line entry point: ``guided-portraits {gen,detect,route,persona,eval}``.

Exit codes: 0 success, 1 invalid input or usage, 2 file-system errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .diffusion import NoiseSchedule, PosteriorMeanDenoiser, sample
from .errors import GuidedPortraitsError
from .evaluation import SuiteConfig, build_suite, default_jobs, emit_report, run_eval, style_data_model, sweep_variants
from .face import DETECTION_CSV_HEADER, DetectorConfig, Detector, oval_bbox
from .guidance import GuidanceConfig, LandmarkMemory, default_memory, make_hook
from .imageio import parse_latent_csv, read_pgm, write_pgm
from .llm import DEFAULT_TIMEOUT, client_from_env
from .persona import diffuser_abstractness, diffuser_guidance, init_persona, render_personality_prompt
from .router import LLMSelector, Registry, default_registry, select

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (all randomness derives from it)")
    if out:
        p.add_argument("--out", default="out", help="output directory; nothing is written elsewhere")


def _detector_flags(p: argparse.ArgumentParser) -> None:
    d = DetectorConfig()
    p.add_argument("--landmarks", default=None, help="directory of landmark template CSVs (default: built-in memory)")
    p.add_argument("--threshold", type=float, default=d.threshold, help="detection threshold theta in (0, 1)")
    p.add_argument("--radius", type=int, default=d.search_radius, help="detector search radius in pixels")


def _guidance_flags(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    g = GuidanceConfig()
    p.add_argument("--lambda", dest="lam", type=float, default=g.injection_weight if defaults else None,
                   help="injection weight in [0, 1]")
    p.add_argument("--tf", type=float, default=g.window_fraction if defaults else None,
                   help="fraction of early steps conditioned, in [0, 1]")
    p.add_argument("--s", dest="structural", type=float, default=g.structural_weight if defaults else None,
                   help="structural-control weight, >= 0")
    p.add_argument("--landmark-id", default=g.landmark_id, help="template id from the landmark memory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="guided-portraits", description="Landmark-guided portrait generation toolkit.",
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="{gen,detect,route,persona,eval}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="sample a guided portrait", formatter_class=fmt)
    _common(p)
    p.add_argument("--desc", default="", help="style description used to route to a diffuser")
    p.add_argument("--diffuser", default=None, help="diffuser id (skips routing)")
    p.add_argument("--registry", default=None, help="diffuser registry file (default: built-in)")
    _guidance_flags(p)
    _detector_flags(p)
    p.add_argument("--steps", type=int, default=50, help="number of diffusion steps T")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--mode", choices=("deterministic", "ancestral"), default="deterministic", help="reverse update")

    p = sub.add_parser("detect", help="detect landmarks in a PGM image", formatter_class=fmt)
    p.add_argument("--image", required=True, help="input image: PGM, or latent CSV when the name ends in .csv")
    p.add_argument("--out", default=None, help="if given, also write detection.csv in this directory")
    _detector_flags(p)

    p = sub.add_parser("route", help="pick an expert for a description", formatter_class=fmt)
    p.add_argument("--desc", default="", help="user description")
    p.add_argument("--registry", default=None, help="registry file (default: built-in for --kind)")
    p.add_argument("--kind", choices=("diffuser", "voice"), default="diffuser", help="built-in registry kind")
    p.add_argument("--selector", choices=("lexical", "llm"), default="lexical", help="selection method")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="LLM call timeout in seconds")

    p = sub.add_parser("persona", help="initialize a persona for an object", formatter_class=fmt)
    _common(p)
    p.add_argument("--object", required=True, help="object description, e.g. 'apple'")
    p.add_argument("--prompt-only", action="store_true", help="print the personality prompt and exit")
    p.add_argument("--diffusers", default=None, help="diffuser registry file (default: built-in)")
    p.add_argument("--voices", default=None, help="voice registry file (default: built-in)")
    p.add_argument("--no-llm", action="store_true", help="ignore the LLM endpoint even if configured")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="LLM call timeout in seconds")
    p.add_argument("--steps", type=int, default=50, help="number of diffusion steps T")
    _detector_flags(p)

    p = sub.add_parser("eval", help="run the detection-rate benchmark", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=None, help="base seed (default: the config's seed, else 0)")
    p.add_argument("--out", default="out", help="output directory; nothing is written elsewhere")
    p.add_argument("--config", default=None, help="suite config file (default: built-in suite)")
    p.add_argument("--samples", type=int, default=None, help="samples per category (default: config, else 50)")
    p.add_argument("--sweep", action="store_true", help="run the injection-weight sweep instead of the variants")
    p.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")
    p.add_argument("--portraits", action="store_true", help="save every sample under OUT/portraits")
    _detector_flags(p)
    return parser


def _memory(args, size: int = 32) -> LandmarkMemory:
    if args.landmarks:
        return LandmarkMemory.load(args.landmarks, size, size)
    return default_memory(size, size)


def _detector_cfg(args) -> DetectorConfig:
    return replace(DetectorConfig(), threshold=args.threshold, search_radius=args.radius)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _registry(path, kind: str) -> Registry:
    return Registry.load(path, kind) if path else default_registry(kind)


def _cmd_gen(args, stdout) -> int:
    reg = _registry(args.registry, "diffuser")
    expert = reg.get(args.diffuser) if args.diffuser else select(reg, args.desc).expert
    base = diffuser_guidance(expert)
    cfg = GuidanceConfig(args.lam, args.tf, args.structural, base.blur_std, args.landmark_id)
    memory = _memory(args, args.size)
    tpl = memory.get(cfg.landmark_id)
    sched = NoiseSchedule.cosine(args.steps)
    crop = oval_bbox(tpl.keypoints, args.size, args.size)
    gm = style_data_model(expert.id, diffuser_abstractness(expert), tpl.raster, crop)
    x = sample(PosteriorMeanDenoiser(gm, sched), sched, args.seed, make_hook(cfg, memory, sched), mode=args.mode)
    det = Detector(memory, _detector_cfg(args)).detect(x)
    out = _outdir(args.out)
    write_pgm(out / "portrait.pgm", x)
    (out / "detection.csv").write_text(DETECTION_CSV_HEADER + "\n" + det.csv_row() + "\n", encoding="utf-8")
    print(f"{expert.id} found={str(det.found).lower()} confidence={det.confidence:.4f}", file=stdout)
    return EXIT_OK


def _cmd_detect(args, stdout) -> int:
    if str(args.image).lower().endswith(".csv"):
        img = parse_latent_csv(Path(args.image).read_text(encoding="utf-8"))
    else:
        img = read_pgm(args.image)
    memory = _memory(args, max(img.shape))
    det = Detector(memory, _detector_cfg(args)).detect(img)
    text = DETECTION_CSV_HEADER + "\n" + det.csv_row() + "\n"
    if args.out:
        (_outdir(args.out) / "detection.csv").write_text(text, encoding="utf-8")
    stdout.write(text)
    return EXIT_OK


def _cmd_route(args, stdout) -> int:
    reg = _registry(args.registry, args.kind)
    selector = None
    if args.selector == "llm":
        selector = LLMSelector(client_from_env(), args.timeout)
    result = select(reg, args.desc, selector)
    print(result.id, file=stdout)
    if result.fallback:
        print(f"fallback=true reason={result.reason}", file=sys.stderr)
    return EXIT_OK


def _cmd_persona(args, stdout) -> int:
    if args.prompt_only:
        stdout.write(render_personality_prompt(args.object))
        return EXIT_OK
    client = None if args.no_llm else client_from_env()
    memory = _memory(args)
    res = init_persona(args.object, _registry(args.diffusers, "diffuser"), _registry(args.voices, "voice"), memory,
                       client, args.seed, out_dir=_outdir(args.out), detector_cfg=_detector_cfg(args),
                       num_steps=args.steps, timeout=args.timeout)
    last = res.spec.attempts[-1]
    print(f"diffuser={res.spec.diffuser_id} voice={res.spec.voice_id} attempts={len(res.spec.attempts)} "
          f"confidence={last.confidence:.4f}", file=stdout)
    return EXIT_OK


def _cmd_eval(args, stdout) -> int:
    cfg = SuiteConfig.load(args.config) if args.config else SuiteConfig()
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.samples is not None:
        cfg.samples_per_category = args.samples
    if args.sweep:
        cfg.variants = sweep_variants()
    memory = _memory(args, cfg.image_size)
    out = _outdir(args.out)
    suite = build_suite(cfg, memory)
    report = run_eval(suite, memory, _detector_cfg(args), jobs=max(1, args.jobs), memory=memory,
                      portraits_dir=out / "portraits" if args.portraits else None, landmark_id=cfg.landmark_id)
    (out / "report.csv").write_text(emit_report(report, "csv"), encoding="utf-8")
    md = emit_report(report, "markdown")
    (out / "report.md").write_text(md, encoding="utf-8")
    stdout.write(md)
    return EXIT_OK


_COMMANDS = {"gen": _cmd_gen, "detect": _cmd_detect, "route": _cmd_route, "persona": _cmd_persona,
             "eval": _cmd_eval}


def run_cli(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return _COMMANDS[args.command](args, stdout)
    except (GuidedPortraitsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
