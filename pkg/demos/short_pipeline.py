"""End-to-end run at reduced length: dataset, low level, high level, evaluation.

Uses the desk-scale network and batch sizes with fewer epochs, so it takes
about five minutes on one core. Pass an output directory as the only
argument (default: ./short_run).
"""
import json
import sys
from pathlib import Path

from locoskills import cli

SHORT = {
    "low": {"epochs": 80, "checkpoint_every": 40},
    "high": {"epochs": 100, "eval_every": 25, "checkpoint_every": 50},
}


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "short.json"
    cfg.write_text(json.dumps(SHORT, indent=2))
    common = ["--config", str(cfg)]
    steps = [
        [*common, "gen-dataset", "--output", str(out / "dataset.jsonl")],
        [*common, "--out", str(out / "low"), "train-low", "--dataset", str(out / "dataset.jsonl")],
        [*common, "--out", str(out / "high"), "train-high", "--low-checkpoint", str(out / "low" / "low_final.json")],
        [*common, "eval", str(out / "high" / "high_final.json"), "--episodes", "64"],
    ]
    for argv in steps:
        print("$ locoskills", " ".join(argv), flush=True)
        code = cli.main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main(Path(sys.argv[1] if len(sys.argv) > 1 else "short_run")))
