"""The synthetic forgetting benchmark used by the acceptance suite.

10 classes, two 16-d modalities, 6 groups of 10 samples per class. Even
groups have 3x noise on modality 0, odd groups 3x noise on modality 1, so
each modality is unreliable for half the participants. Groups are split
80/20 inside each noise stratum, which puts one group of each kind in the
test split. Schedule: 4 initial classes, then 3 tasks of 2 classes.
"""

from __future__ import annotations

BENCH_GROUPS = 6
BAD_NOISE = 3.0


def scene_profiles(groups: int = BENCH_GROUPS, bad: float = BAD_NOISE) -> list[list[float]]:
    return [[bad, 1.0] if g % 2 == 0 else [1.0, bad] for g in range(groups)]


def synthetic_section(seed: int) -> dict:
    return {
        "classes": 10,
        "dims": [16, 16],
        "samples_per_class": 60,
        "groups": BENCH_GROUPS,
        "separation": 2.0,
        "noise": 0.35,
        "scene_profiles": scene_profiles(),
        "seed": seed,
    }


def config_doc(method: str = "catnet", mode: str = "two_stream", seed: int = 0, capacity_k: int = 10, **over) -> dict:
    """Run-config document (the parsed-TOML shape) for one benchmark run."""
    doc = {
        "seed": seed,
        "method": method,
        "mode": mode,
        "capacity_k": capacity_k,
        "data": {
            "synthetic": synthetic_section(seed),
            "split": {"train": 0.8, "test": 0.2, "seed": seed, "stratify": "profile"},
        },
        "schedule": {"initial_classes": 4, "increment": 2, "num_increments": 3},
        "train": {"initial": {}, "incremental": {}},
    }
    doc.update(over)
    return doc
