"""Build the e2e fixture study: 2 items x 4 conditions of tiny WAVs.

Usage: python3 make_fixture.py <out_dir>
Writes study.json plus one WAV per (item, condition).
"""
import json
import sys
from pathlib import Path

import numpy as np

from decrackle.audio import AudioClip, save_wav

CONDITIONS = ["original", "model_adv", "model_rec", "logmmse"]


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    items = []
    for i in range(2):
        audio = {}
        for cond in CONDITIONS:
            path = out / f"item{i}_{cond}.wav"
            save_wav(path, AudioClip(rng.uniform(-0.2, 0.2, 512), 8000))
            audio[cond] = str(path)
        items.append({"item_id": f"item_{i}", "audio": audio})
    study = {
        "study_id": "e2e",
        "seed": 11,
        "conditions": CONDITIONS,
        "include_clean_reference": False,
        "items": items,
    }
    (out / "study.json").write_text(json.dumps(study))
    print(out / "study.json")


if __name__ == "__main__":
    main()
