import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guided_portraits import cfgfile
from guided_portraits.errors import ContractViolation, ValidationError
from guided_portraits.evaluation import (
    CATEGORY_NAMES,
    DEFAULT_ABSTRACTNESS,
    CategorySpec,
    EvalReport,
    ReportRow,
    SuiteConfig,
    build_suite,
    default_categories,
    distractor_texture,
    emit_report,
    parse_report_csv,
    run_eval,
    sample_seed,
    style_data_model,
    sweep_variants,
)
from guided_portraits.face import oval_bbox
from guided_portraits.guidance import GuidanceConfig, default_memory

MEM = default_memory()
FACE = MEM.get().raster
CROP = oval_bbox(MEM.get().keypoints, 32, 32)

FIXTURE_DETECTED = {
    "neutral": (45, 2, 25, 30, 20, 28, 26, 2),
    "guided": (50, 44, 47, 48, 46, 47, 47, 41),
}


def _fixture_report():
    rows = [ReportRow(c, v, 50, d) for v, hits in FIXTURE_DETECTED.items() for c, d in zip(CATEGORY_NAMES, hits)]
    return EvalReport(tuple(rows))


def _config(text):
    return SuiteConfig.from_sections(cfgfile.parse(text))


def test_categories_and_first_prompt():
    cats = default_categories()
    assert tuple(c.name for c in cats) == CATEGORY_NAMES
    assert {c.name: c.abstractness for c in cats} == DEFAULT_ABSTRACTNESS
    suite = build_suite(SuiteConfig(samples_per_category=12))
    real = suite.plan("Realistic")
    assert real.prompts[0] == "a portrait of a man, fine face."
    nouns = real.spec.prompt_nouns
    assert real.prompts[len(nouns)] == real.prompts[0]  # prompts cycle
    assert all(p.startswith("a portrait of a ") and p.endswith(", fine face.") for p in real.prompts)


def test_sample_seed_is_stable_hash():
    key = b"0/Realistic/0"
    assert sample_seed(0, "Realistic", 0) == int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    a = build_suite(SuiteConfig(samples_per_category=5))
    b = build_suite(SuiteConfig(samples_per_category=5))
    assert [p.seeds for p in a.plans] == [p.seeds for p in b.plans]
    c = build_suite(SuiteConfig(samples_per_category=5, base_seed=1))
    assert a.plans[0].seeds != c.plans[0].seeds
    all_seeds = [s for p in a.plans for s in p.seeds]
    assert len(set(all_seeds)) == len(all_seeds) and all(0 <= s < 2**64 for s in all_seeds)


def test_zero_abstractness_means_are_the_face():
    gm = style_data_model("Realistic", 0.0, FACE, CROP)
    for m in gm.means:
        assert np.array_equal(m, FACE)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(CATEGORY_NAMES), st.integers(0, 11))
def test_distractor_texture_properties(style, k):
    z = distractor_texture(style, k, FACE, CROP)
    assert z.mean() == pytest.approx(0.0, abs=1e-12) and z.std() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(z, distractor_texture(style, k, FACE, CROP))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0))
def test_means_are_convex_combinations(d):
    gm = style_data_model("Fruits", d, FACE, CROP)
    one = style_data_model("Fruits", 1.0, FACE, CROP)
    for m, far in zip(gm.means, one.means):
        assert np.allclose(m, (1 - d) * FACE + d * far, atol=1e-12)


def test_suite_validation():
    with pytest.raises(ValidationError):
        CategorySpec("Robots", 0.5, ("robot",))
    with pytest.raises(ValidationError):
        CategorySpec("Fruits", 1.5, ("apple",))
    with pytest.raises(ValidationError):
        CategorySpec("Fruits", 0.5, (" ",))
    with pytest.raises(ContractViolation):
        build_suite(SuiteConfig(samples_per_category=0))
    cfg = SuiteConfig(variants=[("a", GuidanceConfig()), ("a", GuidanceConfig.neutral())])
    with pytest.raises(ContractViolation):
        build_suite(cfg)


def _small(variants, d=None, samples=3, steps=20, seed=0):
    cfg = SuiteConfig(samples_per_category=samples, base_seed=seed, num_steps=steps, variants=list(variants))
    if d is not None:
        cfg.categories = [CategorySpec(c.name, d, c.prompt_nouns) for c in cfg.categories]
    return build_suite(cfg)


def test_full_guidance_on_face_data_detects_everything():
    suite = _small([("full", GuidanceConfig(1.0, 1.0, 2.0))], d=0.0)
    report = run_eval(suite)
    assert all(r.rate == 1.0 for r in report.rows)
    assert emit_report(report).splitlines()[-1].split(" | ")[1:] == ["100.0"] * 8 + ["100.0 |"]


def test_report_does_not_depend_on_jobs():
    suite = _small([("neutral", GuidanceConfig.neutral()), ("guided", GuidanceConfig())], samples=4)
    one = run_eval(suite, jobs=1, chunk_size=2)
    two = run_eval(suite, jobs=2, chunk_size=3)
    assert emit_report(one, "csv") == emit_report(two, "csv")
    assert one == run_eval(suite, jobs=1)


def test_portraits_are_written(tmp_path):
    suite = _small([("lambda=0.5", GuidanceConfig(0.5))], samples=1, steps=10)
    run_eval(suite, portraits_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(f"{c}_lambda_0.5_000.pgm" for c in CATEGORY_NAMES)


def test_report_golden_markdown(golden_dir):
    expect = (golden_dir / "report_fixture.md").read_text(encoding="utf-8")
    assert emit_report(_fixture_report(), "markdown") == expect


def test_report_averages_are_unweighted():
    r = _fixture_report()
    assert r.average("neutral") == pytest.approx(sum(FIXTURE_DETECTED["neutral"]) / 50 / 8, abs=1e-12)
    for row in r.rows:
        assert row.rate == pytest.approx(row.detected / row.n, abs=1e-12)
    with pytest.raises(ContractViolation):
        ReportRow("Fruits", "x", 5, 6)
    with pytest.raises(ValidationError):
        emit_report(r, "html")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 60), st.integers(0, 60)), min_size=8, max_size=8),
       st.lists(st.sampled_from(["neutral", "guided", "lambda=0.25", "x y"]), min_size=1, max_size=3, unique=True))
def test_csv_round_trip(counts, variants):
    rows = [ReportRow(c, v, n, min(d, n)) for v in variants for c, (n, d) in zip(CATEGORY_NAMES, counts)]
    report = EvalReport(tuple(rows))
    assert parse_report_csv(emit_report(report, "csv")) == report


def test_csv_parse_errors():
    with pytest.raises(ValidationError):
        parse_report_csv("a,b,c\n")
    with pytest.raises(ValidationError):
        parse_report_csv("category,variant,n,detected,rate\nFruits,x,5,2,41.0\n")
    with pytest.raises(ValidationError):
        parse_report_csv("category,variant,n,detected,rate\nFruits,x,5\n")


def test_config_file_parsing():
    cfg = _config("""
[suite]
samples = 7
seed = 3
steps = 25
sweep = 0, 0.5, 1

[variant]
label = strong
injection_weight = 0.9
structural_weight = 2

[category]
name = Fruits
d = 0.55
nouns = plum, fig
""")
    assert (cfg.samples_per_category, cfg.base_seed, cfg.num_steps) == (7, 3, 25)
    assert [v[0] for v in cfg.variants] == ["lambda=0", "lambda=0.5", "lambda=1", "strong"]
    assert cfg.variants[-1][1] == GuidanceConfig(0.9, 0.4, 2.0)
    fruits = [c for c in cfg.categories if c.name == "Fruits"][0]
    assert fruits.abstractness == 0.55 and fruits.prompt_nouns == ("plum", "fig")
    assert _config("").variants == SuiteConfig().variants
    assert [v[0] for v in sweep_variants()] == ["lambda=0", "lambda=0.25", "lambda=0.5", "lambda=0.75", "lambda=1"]


@pytest.mark.parametrize("text", [
    "[suite]\nsamples = many\n",
    "[suite]\ncolour = red\n",
    "[category]\nname = Robots\n",
    "[category]\nname = Fruits\nd = 2\n",
    "[variant]\nlabel = x\ninjection_weight = 3\n",
    "[suite]\nsweep = 0, a\n",
    "[other]\nx = 1\n",
    "[suite]\nsamples = 1\nsamples = 2\n",
])
def test_config_errors(text):
    with pytest.raises(ValidationError):
        _config(text)
