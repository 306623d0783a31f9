from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger("novelty_engine")


@dataclass
class Diagnostics:
    """Warnings and fallback counters collected while a run progresses.

    Stage functions accept an optional instance so the orchestrator can copy
    everything into the run manifest afterwards.
    """

    warnings: list[str] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)

    def warn(self, message: str) -> None:
        log.warning(message)
        self.warnings.append(message)

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def merge(self, other: Diagnostics) -> None:
        self.warnings.extend(other.warnings)
        self.counters.update(other.counters)


def warn(diag: Diagnostics | None, message: str) -> None:
    if diag is None:
        log.warning(message)
    else:
        diag.warn(message)


def count(diag: Diagnostics | None, name: str, n: int = 1) -> None:
    if diag is not None:
        diag.count(name, n)
