"""Regenerate the embedder's standardization constants (``embedder_stats.npz``).

The calibration panel is 40 synthetic speakers (ids 40-79, disjoint from the
ids used in tests and demos), 3 s each, once dry and once with reverberation
and noise spread over the simulator's ranges. Run after changing any raw
feature::

    python3 tools/calibrate_embedder.py [--out PATH]
"""

import argparse
from pathlib import Path

import numpy as np

from css_inventory import embedder
from css_inventory.simulator import add_noise, apply_reverb, synth_speaker

SPEAKERS = range(40, 80)


def conditioned(w, c: int):
    w = apply_reverb(w, 0.1 + 0.4 * ((c * 7) % 10) / 10, c)
    w, _ = add_noise(w, 20 * ((c * 3) % 10) / 10, c)
    return w


def panel():
    dry = [synth_speaker(i, 3.0, 1000 + i) for i in SPEAKERS]
    return [conditioned(w, i) for i, w in zip(SPEAKERS, dry)] + dry


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=embedder._STATS_FILE)
    args = ap.parse_args(argv)
    mean, scale = embedder.fit_standardization(panel())
    np.savez(args.out, mean=mean, scale=scale)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
