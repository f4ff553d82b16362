"""Detection-rate benchmark over eight categories, neutral vs guided."""

# %% A reduced suite: 10 samples per category instead of 50
from guided_portraits.evaluation import SuiteConfig, build_suite, emit_report, run_eval, sweep_variants

cfg = SuiteConfig(samples_per_category=10)
suite = build_suite(cfg)
print("first prompt:", suite.plan("Realistic").prompts[0])
report = run_eval(suite)
print(emit_report(report, "markdown"))

# %% Sweeping the injection weight at T_f = 0.4, s = 1
cfg = SuiteConfig(samples_per_category=10, variants=sweep_variants())
print(emit_report(run_eval(build_suite(cfg)), "markdown"))
