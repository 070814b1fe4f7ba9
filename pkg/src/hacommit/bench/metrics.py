"""Run metrics: commit latencies, throughput series, retry accounting.

One Metrics instance per run, filled by the workload actors and
finalized by the experiment driver. Output is a CSV row with a fixed
column set so sweep outputs concatenate cleanly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

US_PER_S = 1_000_000

CSV_COLUMNS = (
    "protocol",
    "ops_per_txn",
    "seed",
    "commits",
    "aborts",
    "retries",
    "mean_latency_us",
    "p99_latency_us",
    "throughput_tps",
    "msg_delays_per_commit",
)


@dataclass
class Metrics:
    protocol: str
    ops_per_txn: int
    seed: int
    commits: list = field(default_factory=list)  # (tid, report_t_us, latency_us)
    issued: int = 0
    retries: int = 0
    in_doubt: int = 0
    horizon_us: Optional[int] = None
    elide_quarters: bool = False
    delay_counts: dict = field(default_factory=dict)  # tid -> message legs

    def add_issued(self) -> None:
        self.issued += 1

    def add_commit(self, tid: str, t_us: int, latency_us: int) -> None:
        self.commits.append((tid, t_us, latency_us))

    def add_retry(self) -> None:
        self.retries += 1

    def add_in_doubt(self, tid: str) -> None:
        self.in_doubt += 1

    @property
    def aborts_final(self) -> int:
        """Logical transactions that never reached a reported commit,
        whether given up (in doubt) or cut off by the horizon."""
        return max(0, self.issued - len(self.commits))

    def _window(self) -> tuple[int, int]:
        """Measurement window; optionally elides the warm-up and
        cool-down quarters of a fixed-duration run."""
        if self.horizon_us is None:
            hi = max((t for _, t, _ in self.commits), default=0)
            return (0, max(hi, 1))
        if not self.elide_quarters:
            return (0, self.horizon_us)
        q = self.horizon_us // 4
        return (q, self.horizon_us - q)

    def _windowed_latencies(self) -> list[int]:
        lo, hi = self._window()
        return [lat for _, t, lat in self.commits if lo <= t <= hi]

    def latencies(self) -> list[int]:
        return [lat for _, _, lat in self.commits]

    def mean_latency_us(self) -> float:
        lats = self._windowed_latencies()
        return sum(lats) / len(lats) if lats else 0.0

    def p99_latency_us(self) -> float:
        lats = sorted(self._windowed_latencies())
        if not lats:
            return 0.0
        idx = max(0, -(-99 * len(lats) // 100) - 1)  # ceil(0.99 n) - 1
        return float(lats[idx])

    def throughput_tps(self) -> float:
        lo, hi = self._window()
        n = sum(1 for _, t, _ in self.commits if lo <= t <= hi)
        span = (hi - lo) / US_PER_S
        return n / span if span > 0 else 0.0

    def throughput_series(self) -> dict[int, int]:
        """Committed transactions per whole simulated second."""
        series: dict[int, int] = {}
        for _, t, _ in self.commits:
            series[t // US_PER_S] = series.get(t // US_PER_S, 0) + 1
        return series

    def msg_delays_per_commit(self) -> float:
        counted = [self.delay_counts[tid] for tid, _, _ in self.commits if tid in self.delay_counts]
        return sum(counted) / len(counted) if counted else 0.0

    def csv_row(self) -> str:
        fields = (
            self.protocol,
            str(self.ops_per_txn),
            str(self.seed),
            str(len(self.commits)),
            str(self.aborts_final),
            str(self.retries),
            f"{self.mean_latency_us():.3f}",
            f"{self.p99_latency_us():.3f}",
            f"{self.throughput_tps():.3f}",
            f"{self.msg_delays_per_commit():.3f}",
        )
        return ",".join(fields)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)
