"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary (and on stdout with ``-s``)."""

import io
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from oracles import hand_tfidf_scores, quadrature_posterior_mean

from guided_portraits.cli import run_cli
from guided_portraits.diffusion import GaussianMixture, NoiseSchedule, PosteriorMeanDenoiser, posterior_mean_denoise, q_sample, sample
from guided_portraits.evaluation import CATEGORY_NAMES, SuiteConfig, build_suite, run_eval, sweep_variants
from guided_portraits.face import Detector, DetectorConfig
from guided_portraits.guidance import GuidanceConfig, default_memory, make_hook
from guided_portraits.llm import FailingClient, StubClient
from guided_portraits.persona import init_persona, render_personality_prompt
from guided_portraits.router import LLMSelector, default_registry, lexical_scores, select

SCHED = NoiseSchedule.cosine(50)
MEM = default_memory()


@contextmanager
def criterion(lines, num, name):
    info = {}
    try:
        yield info
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        line = f"[{num:02d}] FAIL {name}: {msg}"
        lines.append(line)
        print(line)
        raise
    line = f"[{num:02d}] PASS {name}: {info.get('msg', '')}"
    lines.append(line)
    print(line)


@pytest.fixture(scope="module")
def main_run():
    cfg = SuiteConfig()  # 8 categories x 50 samples, neutral and guided, 32x32, T = 50
    t0 = time.perf_counter()
    report = run_eval(build_suite(cfg), jobs=1)
    return report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sweep_run():
    cfg = SuiteConfig(variants=sweep_variants())
    return run_eval(build_suite(cfg), jobs=1)


def test_01_posterior_mean_matches_quadrature(acceptance_lines):
    with criterion(acceptance_lines, 1, "posterior mean vs quadrature") as info:
        t0 = time.perf_counter()
        worst = 0.0
        for case in range(24):
            rng = np.random.default_rng(1000 + case)
            k = 1 + case % 3
            w = rng.dirichlet(np.ones(k))
            w[-1] = 1.0 - w[:-1].sum()
            gm = GaussianMixture(w, rng.uniform(-1, 1, (k, 2, 2)), rng.uniform(0.15, 0.6, k))
            t = int(rng.integers(1, 51))
            c = rng.choice(k, p=gm.weights)
            x0 = gm.means[c] + gm.stds[c] * rng.standard_normal((2, 2))
            xt = SCHED.alpha[t] * x0 + SCHED.sigma[t] * rng.standard_normal((2, 2))
            got = posterior_mean_denoise(xt, t, gm, SCHED)
            ref = quadrature_posterior_mean(xt, SCHED.alpha[t], SCHED.sigma[t], gm.weights, gm.means, gm.stds)
            worst = max(worst, float(np.max(np.abs(got - ref))))
        elapsed = time.perf_counter() - t0
        info["msg"] = f"24 fixtures, max error {worst:.2e}, {elapsed:.1f} s"
        assert worst < 1e-6, f"max error {worst:.2e}"
        assert elapsed < 10, f"took {elapsed:.1f} s"


def test_02_forward_process_statistics(acceptance_lines):
    with criterion(acceptance_lines, 2, "forward process Monte Carlo") as info:
        parts = []
        for t in (1, 25, 50):
            rng = np.random.default_rng(7 + t)
            x0 = rng.uniform(-1, 1, (4, 4))
            noise = rng.standard_normal((10_000, 4, 4))
            xs = q_sample(np.broadcast_to(x0, noise.shape), t, SCHED, noise)
            se = SCHED.sigma[t] / math.sqrt(10_000)
            z = float(np.max(np.abs(xs.mean(0) - SCHED.alpha[t] * x0)) / se)
            rel = float(abs(xs.var(0, ddof=1).mean() / SCHED.sigma[t] ** 2 - 1))
            parts.append(f"t={t}: max |z|={z:.2f}, var rel err={100 * rel:.2f}%")
            assert z <= 3, f"t={t}: mean off by {z:.2f} standard errors"
            assert rel <= 0.02, f"t={t}: variance off by {100 * rel:.2f}%"
        info["msg"] = "; ".join(parts)


def test_03_sampler_distribution(acceptance_lines):
    with criterion(acceptance_lines, 3, "sampler distribution, 5000 seeds") as info:
        tau = 0.25
        mu = np.random.default_rng(3).uniform(0.2, 0.8, (4, 4))
        den = PosteriorMeanDenoiser(GaussianMixture.single(mu, tau), SCHED)
        t0 = time.perf_counter()
        xs = np.stack([sample(den, SCHED, seed) for seed in range(5000)])
        elapsed = time.perf_counter() - t0
        rms = math.sqrt(np.mean((xs.mean(0) - mu) ** 2)) / math.sqrt(np.mean(mu**2))
        std_err = float(np.max(np.abs(xs.std(0) / tau - 1)))
        info["msg"] = f"mean RMS {100 * rms:.2f}%, worst std error {100 * std_err:.1f}%, {elapsed:.1f} s"
        assert rms < 0.05 and std_err < 0.10 and elapsed < 60, info["msg"]


def test_04_neutral_guidance_equivalence(acceptance_lines):
    with criterion(acceptance_lines, 4, "neutral guidance is bit-identical") as info:
        face = MEM.get().raster
        gm = GaussianMixture.uniform(np.stack([face, 1 - face, np.full_like(face, 0.5)]), 0.25)
        den = PosteriorMeanDenoiser(gm, SCHED)
        hook = make_hook(GuidanceConfig.neutral(), MEM, SCHED)
        same = sum(sample(den, SCHED, s, hook).tobytes() == sample(den, SCHED, s).tobytes() for s in range(100))
        info["msg"] = f"{same}/100 seeds identical"
        assert same == 100, info["msg"]


def test_05_guidance_efficacy(acceptance_lines, main_run):
    report, elapsed = main_run
    with criterion(acceptance_lines, 5, "guidance efficacy") as info:
        neutral, guided = report.average("neutral"), report.average("guided")
        gap = 100 * (guided - neutral)
        worse = [c for c in CATEGORY_NAMES if report.rate(c, "guided") < report.rate(c, "neutral")]
        info["msg"] = (f"neutral {100 * neutral:.1f}, guided {100 * guided:.1f}, gap {gap:.1f} pp, "
                       f"suite {elapsed:.0f} s")
        assert gap >= 25, f"gap {gap:.1f} pp"
        assert not worse, f"guided below neutral in {worse}"
        assert elapsed < 300, f"suite took {elapsed:.0f} s"


def test_06_abstractness_ordering(acceptance_lines, main_run):
    report, _ = main_run
    with criterion(acceptance_lines, 6, "neutral ordering by abstractness") as info:
        cats = SuiteConfig().categories
        rate = {c.name: report.rate(c.name, "neutral") for c in cats}
        bad = [(a.name, b.name) for a in cats for b in cats
               if a.abstractness < b.abstractness and rate[a.name] < rate[b.name]]
        info["msg"] = ", ".join(f"{c.name} {100 * rate[c.name]:.0f}" for c in sorted(cats, key=lambda c: c.abstractness))
        assert not bad, f"order violated for {bad}"
        others = [rate[n] for n in rate if n not in ("Realistic", "Cartoons")]
        assert rate["Cartoons"] < min(others) and rate["Realistic"] > max(others)


def test_07_injection_sweep(acceptance_lines, sweep_run):
    with criterion(acceptance_lines, 7, "injection weight sweep") as info:
        avgs = [100 * sweep_run.average(label) for label, _ in sweep_variants()]
        info["msg"] = " -> ".join(f"{a:.1f}" for a in avgs)
        assert avgs[-1] > avgs[0], info["msg"]
        drops = [a - b for a, b in zip(avgs, avgs[1:])]
        assert max(drops) <= 3.0, f"drop of {max(drops):.1f} pp in {info['msg']}"


def test_08_detector_soundness(acceptance_lines):
    with criterion(acceptance_lines, 8, "detector soundness") as info:
        det = Detector(MEM, DetectorConfig(threshold=0.6))
        self_conf = [det.detect(t.raster).confidence for t in MEM.templates]
        hits = sum(det.detect(np.random.default_rng(s).standard_normal((32, 32))).found for s in range(100))
        info["msg"] = f"min self confidence {min(self_conf):.4f}, noise hits {hits}/100"
        assert min(self_conf) >= 0.99 and hits < 1, info["msg"]


def test_09_prompt_fidelity(acceptance_lines, golden_dir):
    with criterion(acceptance_lines, 9, "personality prompt fidelity") as info:
        out = render_personality_prompt("apple")
        lines = out.split("\n")
        assert lines[0] == ("You are an excellent scriptwriter. Now you need to provide the characteristics of "
                            "an apple and transforms them into personality traits.")
        assert "Now give the personality of apple:" in lines
        assert out.encode("utf-8") == (golden_dir / "personality_apple.txt").read_bytes()
        info["msg"] = f"{len(out.encode())} bytes match the golden rendering"


def test_10_router_oracle_and_fallback(acceptance_lines):
    with criterion(acceptance_lines, 10, "router oracle and LLM fallback") as info:
        reg = default_registry("diffuser")
        desc = "a cute anime schoolgirl"
        oracle = hand_tfidf_scores(desc.split())
        got = lexical_scores(reg, desc)
        err = max(abs(g - oracle[i]) for g, i in zip(got, reg.ids))
        assert err <= 1e-9, f"score error {err:.2e}"
        assert select(reg, desc).id == max(reg.ids, key=lambda i: (oracle[i], -reg.ids.index(i)))
        bad_replies = ["nonexistent-id", "", "  ", "anything-v5 or dreamshaper", None, 42, "game icon", "\n"]
        results = [select(reg, desc, LLMSelector(StubClient(r))) for r in bad_replies]
        results.append(select(reg, desc, LLMSelector(FailingClient())))
        assert all(r.fallback and r.id == "anything-v5" for r in results)
        info["msg"] = f"max score error {err:.1e}; {len(results)} invalid replies all fell back"


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_11_end_to_end_determinism(acceptance_lines, tmp_path, monkeypatch):
    with criterion(acceptance_lines, 11, "end-to-end determinism") as info:
        monkeypatch.delenv("GUIDED_PORTRAITS_LLM_URL", raising=False)
        (tmp_path / "suite.cfg").write_text("[suite]\nsamples = 3\n", encoding="utf-8")
        commands = {
            "gen": ["gen", "--seed", "9", "--desc", "anime"],
            "persona": ["persona", "--seed", "9", "--object", "apple"],
            "eval": ["eval", "--seed", "9", "--config", str(tmp_path / "suite.cfg"), "--jobs", "1"],
        }
        for name, argv in commands.items():
            trees = []
            for run in ("a", "b"):
                out = tmp_path / name / run
                assert run_cli(argv + ["--out", str(out)], stdout=io.StringIO()) == 0
                trees.append(_tree(out))
            assert trees[0] and trees[0] == trees[1], f"{name} artifacts differ"
        runs = []
        for run in ("a", "b"):
            stub = StubClient(choice="dreamshaper", completion="You are Apple Buddy.")
            res = init_persona("apple", default_registry("diffuser"), default_registry("voice"), MEM, stub, 9,
                               out_dir=tmp_path / "stub" / run)
            runs.append(_tree(tmp_path / "stub" / run))
            assert res.spec.diffuser_id == "dreamshaper"
        assert runs[0] == runs[1], "stub-client persona artifacts differ"
        info["msg"] = "gen, persona, eval and stub-client persona artifacts byte-identical"


def test_full_guidance_dominates_neutral_per_category(main_run):
    report, _ = main_run
    full = run_eval(build_suite(SuiteConfig(variants=[("full", GuidanceConfig(1.0, 1.0, 1.0))])), jobs=1)
    for c in CATEGORY_NAMES:
        assert full.rate(c, "full") >= report.rate(c, "neutral")
