"""Star-topology communication metering.

One event is one directed client/server message. An AGD iteration's gradient
upload and model download are folded into a single event per client, so the
iteration part of a sync costs ``N * J`` events; the ``delta_A`` upload and
final broadcast are metered on top of that and can be reported separately.
Symmetric matrices travel as full ``d*d`` scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NumericDomainError

KINDS = (
    "delta_A_up",
    "gradient_up",
    "model_down",
    "sync_down",
    "stats_up",
    "stats_down",
    "one_ucb_round",
)

# kinds that make up the N * sum(J_t) count
ITERATION_KINDS = ("gradient_up", "model_down")


@dataclass
class CommLedger:
    events: int = 0
    scalars: int = 0
    per_kind: dict = field(default_factory=lambda: {k: [0, 0] for k in KINDS})
    steps: list = field(default_factory=list)

    def record(self, kind: str, event_count: int, scalar_count: int, t: int = 0) -> None:
        if kind not in self.per_kind:
            raise NumericDomainError(f"unknown message kind {kind!r}")
        if event_count < 0 or scalar_count < 0:
            raise NumericDomainError("message counts must be non-negative")
        if event_count == 0 and scalar_count == 0:
            return
        ev, sc = int(event_count), int(scalar_count)
        self.events += ev
        self.scalars += sc
        slot = self.per_kind[kind]
        slot[0] += ev
        slot[1] += sc
        self.steps.append((t, kind, ev, sc))

    @property
    def iteration_events(self) -> int:
        """Events from AGD iterations only (the N * sum J_t figure)."""
        return sum(self.per_kind[k][0] for k in ITERATION_KINDS)

    def replay(self):
        """Totals recomputed from the step log."""
        return sum(s[2] for s in self.steps), sum(s[3] for s in self.steps)

    def summary(self) -> dict:
        return {
            "events": self.events,
            "scalars": self.scalars,
            "iteration_events": self.iteration_events,
            "per_kind": {k: {"events": v[0], "scalars": v[1]} for k, v in self.per_kind.items()},
        }


def agd_sync_cost(N: int, d: int, J: int):
    """(events, scalars) of one AGD-backed synchronization."""
    if J < 1:
        raise NumericDomainError("J must be >= 1")
    if N < 1 or d < 1:
        raise NumericDomainError("N and d must be >= 1")
    events = N + N * J + N
    scalars = N * d * d + J * 2 * N * d + N * (d * d + 2 * d)
    return events, scalars


def meter_agd_sync(ledger: CommLedger, N: int, d: int, J: int, t: int = 0):
    """Record one AGD sync on ``ledger`` and return its ``(events, scalars)``."""
    events, scalars = agd_sync_cost(N, d, J)
    ledger.record("delta_A_up", N, N * d * d, t)
    ledger.record("gradient_up", N * J, N * d * J, t)
    ledger.record("model_down", 0, N * d * J, t)
    ledger.record("sync_down", N, N * (d * d + 2 * d), t)
    return events, scalars
