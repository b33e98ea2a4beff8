import hashlib
import json
from typing import Any, Dict, List

import numpy as np
from slugify import slugify


def make_rng(seed: int) -> np.random.Generator:
    """
    Counter-based generator, so streams depend on the seed alone.

    Args:
        seed (int): 64-bit seed

    Returns:
        np.random.Generator: Philox-backed generator
    """
    return np.random.Generator(np.random.Philox(seed % 2**64))


def spawn_seeds(seed: int, n: int) -> List[int]:
    children = np.random.SeedSequence(seed % 2**64).spawn(n)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def run_slug(*parts: Any) -> str:
    """
    Build a directory-safe run name from arbitrary labels.

    Args:
        *parts: labels such as the model name, case and scale

    Returns:
        str: slug such as ``case3-desk-seed-7``
    """
    return slugify("-".join(str(p) for p in parts if p is not None and p != ""))


def canonical_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
