# %% [markdown]
# # The experiment pipeline
#
# The same stages the `sacm` command runs, driven from Python with a tiny
# config. Each stage writes into the run directory and records file hashes
# and timings in manifest.json.

# %%
import json
from pathlib import Path

from sacm import pipeline
from sacm.config import parse_config

config = parse_config("""
[prompts]
count = 20
structures = simple_agreement, within_obj_rc_sg, within_obj_rc_sg_nocomp, across_pp_pl
[corpus]
size = 5000
[model]
n_layers = 2
d_model = 32
[training]
steps = 150
[paths]
output_dir = demo_run
""")

pipeline.cmd_generate(config)
pipeline.cmd_train(config)
pipeline.cmd_effects(config)
pipeline.cmd_analyze(config)
report = pipeline.cmd_report(config)
print(Path(report).read_text()[:1200])

# %%
manifest = json.loads(Path("demo_run/manifest.json").read_text())
print({k: v["seconds"] for k, v in manifest["stages"].items()})
