import hashlib
from typing import Union

import numpy as np

Label = Union[str, int]


def _label_entropy(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed: int, *labels: Label) -> np.random.Generator:
    """
    Gerador derivado da semente mestre por rótulos.

    Cada módulo pede seu próprio fluxo (ex: `derive_rng(seed, "controller", "init")`),
    de modo que uma única semente reproduz a execução inteira e fluxos de
    rótulos diferentes nunca se sobrepõem.
    """
    entropy = [int(seed)] + [_label_entropy(label) for label in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
