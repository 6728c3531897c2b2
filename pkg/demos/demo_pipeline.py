"""Run the full pipeline end to end and read back its artifacts.

A short benign run: pretrain, optimize scores, binarize the mask,
fine-tune, evaluate, and write report.csv plus stage checkpoints. The
same run is available from the command line as
`robustprune run --config <file>`.
"""

import json
from pathlib import Path

from robustprune import PipelineConfig, run_pipeline
from robustprune.checkpoints import load_checkpoint

config = PipelineConfig.from_dict({
    "architecture": "mlp-2x256",
    "dataset": {"kind": "digits", "image_size": 8},
    "epochs": {"pretrain": 4, "prune": 3, "finetune": 4},
    "ratio": 90.0,
    "metrics": ["benign"],
    "batch_size": 256,
    "output_dir": "runs/demo_pipeline",
})

result = run_pipeline(config)
print(json.dumps(result.row, indent=1))

for stage, path in result.checkpoint_paths.items():
    ckpt = load_checkpoint(path)
    arrays = len(ckpt.theta) + len(ckpt.scores) + len(ckpt.mask)
    print(f"checkpoint {stage}: {arrays} arrays, {Path(path).stat().st_size} bytes")

report = Path(config.output_dir) / "report.csv"
print(f"\n{report}:")
print(report.read_text())
