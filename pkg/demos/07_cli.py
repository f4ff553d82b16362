"""The command-line interface driven in-process; the same commands work as `guided-portraits ...`."""

# %% Every command writes only under --out
import io
import tempfile
from pathlib import Path

from guided_portraits.cli import run_cli

out = Path(tempfile.mkdtemp())


def run(*argv):
    buf = io.StringIO()
    code = run_cli(list(argv), buf)
    print(f"$ guided-portraits {' '.join(argv)}\n{buf.getvalue()}(exit {code})\n")


run("route", "--desc", "a cute anime schoolgirl")
run("gen", "--seed", "1", "--desc", "anime", "--out", str(out / "gen"))
run("detect", "--image", str(out / "gen" / "portrait.pgm"))
run("persona", "--seed", "1", "--object", "apple", "--out", str(out / "persona"))
(out / "suite.cfg").write_text("[suite]\nsamples = 3\n", encoding="utf-8")
run("eval", "--config", str(out / "suite.cfg"), "--seed", "7", "--out", str(out / "eval"), "--jobs", "1")
run("gen", "--lambda", "2")  # invalid value -> exit 1
