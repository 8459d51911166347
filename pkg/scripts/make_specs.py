"""Write the example channel specs and input laws used by the CLI examples."""

import json
from pathlib import Path

import numpy as np

from feedcap import channels
from feedcap.codefunctions import iid_input, random_input
from feedcap.kernels import save_spec

OUT = Path(__file__).resolve().parent.parent / "specs"


def main():
    OUT.mkdir(exist_ok=True)
    specs = {
        "bsc01": channels.bsc(0.1),
        "noiseless": channels.noiseless(),
        "csi_switching": channels.csi_switching(),
        "trapdoor": channels.trapdoor(),
        "io_memory": channels.io_memory(),
        "output_memory": channels.output_memory(),
        "gilbert_elliott": channels.gilbert_elliott(),
        "random2": channels.random_markov(np.random.default_rng(7), 2, 2, 2),
        # large alphabets: finite-horizon enumeration at T = 12 blows every cap
        "huge": channels.random_markov(np.random.default_rng(8), 2, 4, 4),
    }
    for name, spec in specs.items():
        save_spec(spec, OUT / f"{name}.json")
    (OUT / "uniform_T3.json").write_text(json.dumps(iid_input([0.5, 0.5], 3, 2).to_dict()) + "\n")
    fb = random_input(np.random.default_rng(3), 2, 2, 3)
    (OUT / "feedback_T3.json").write_text(json.dumps(fb.to_dict()) + "\n")


if __name__ == "__main__":
    main()
