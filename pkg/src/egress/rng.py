"""Named, independently seeded random streams.

Every stochastic subsystem draws from its own counter-based stream so that
parallel movement or hazard ordering can never perturb another subsystem's
draws. Stream state round-trips through plain JSON, which is what makes
save/restore and forking exactly resumable.
"""
from __future__ import annotations

import hashlib
from typing import Any, Iterable

import numpy as np

STREAM_NAMES = (
    "population",
    "deliberation",
    "hazards",
    "stampede",
    "shooter",
    "lightning",
    "police",
)


def _label_key(master_seed: int, label: str) -> list[int]:
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 16, 8)]


class RngStreams:
    """A bundle of named numpy Generators backed by Philox (counter-based)."""

    def __init__(self, master_seed: int, names: Iterable[str] = STREAM_NAMES):
        self.master_seed = master_seed
        self._streams: dict[str, np.random.Generator] = {}
        for name in names:
            self._streams[name] = np.random.Generator(np.random.Philox(key=_label_key(master_seed, name)))

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._streams[name]

    def names(self) -> list[str]:
        return sorted(self._streams)

    def get_states(self) -> dict[str, Any]:
        """JSON-serializable snapshot of every stream's exact position."""
        out: dict[str, Any] = {"master_seed": self.master_seed}
        for name, gen in self._streams.items():
            out[name] = _jsonable_state(gen.bit_generator.state)
        return out

    def set_states(self, states: dict[str, Any]) -> None:
        self.master_seed = states["master_seed"]
        for name, gen in self._streams.items():
            gen.bit_generator.state = _state_from_jsonable(states[name])


def _jsonable_state(state: dict[str, Any]) -> dict[str, Any]:
    def conv(obj: Any) -> Any:
        if isinstance(obj, dict):
            return {k: conv(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return conv(state)


def _state_from_jsonable(state: dict[str, Any]) -> dict[str, Any]:
    def conv(obj: Any) -> Any:
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: conv(v) for k, v in obj.items()}
        return obj

    return conv(state)
