"""Metrics accounting: windows, percentiles, CSV shape."""
from hacommit.bench.metrics import CSV_COLUMNS, Metrics, csv_header


def filled(latencies, t_step=1000, **kw):
    m = Metrics(protocol="hacommit", ops_per_txn=4, seed=0, **kw)
    for i, lat in enumerate(latencies):
        m.add_issued()
        m.add_commit(f"t{i}", (i + 1) * t_step, lat)
    return m


def test_mean_and_p99_small_sample():
    m = filled([100, 200, 300, 400])
    assert m.mean_latency_us() == 250.0
    assert m.p99_latency_us() == 400.0  # ceil(0.99 * 4) - 1 = index 3


def test_p99_hits_the_99th_of_a_hundred():
    m = filled(list(range(1, 101)))  # 1..100, one per ms
    assert m.p99_latency_us() == 99.0
    m2 = filled(list(range(1, 102)))
    assert m2.p99_latency_us() == 100.0  # ceil(0.99 * 101) = 100


def test_empty_metrics_are_all_zero():
    m = filled([])
    assert m.mean_latency_us() == 0.0
    assert m.p99_latency_us() == 0.0
    assert m.throughput_tps() == 0.0
    assert m.msg_delays_per_commit() == 0.0
    assert m.aborts_final == 0


def test_aborts_are_issued_minus_commits():
    m = filled([100, 100])
    m.add_issued()
    m.add_issued()  # two issued transactions never committed
    m.add_in_doubt("t9")
    assert m.aborts_final == 2


def test_quarter_elision_drops_warmup_and_cooldown():
    # commits at 1..10s with latencies 1..10; window [2.5s, 7.5s]
    m = filled(list(range(1, 11)), t_step=1_000_000)
    m.horizon_us = 10_000_000
    m.elide_quarters = True
    assert m._windowed_latencies() == [3, 4, 5, 6, 7]
    assert m.mean_latency_us() == 5.0
    # 5 commits over the 5s window
    assert m.throughput_tps() == 1.0
    m.elide_quarters = False
    assert m.mean_latency_us() == 5.5


def test_throughput_without_horizon_uses_last_commit_time():
    m = filled([100, 100, 100, 100], t_step=500_000)  # last at 2s
    assert m.throughput_tps() == 2.0


def test_throughput_series_buckets_by_whole_second():
    m = filled([1, 1, 1], t_step=700_000)  # commits at 0.7s, 1.4s, 2.1s
    assert m.throughput_series() == {0: 1, 1: 1, 2: 1}


def test_msg_delays_averages_only_counted_commits():
    m = filled([100, 100, 100])
    m.delay_counts = {"t0": 2, "t1": 4}  # t2 never measured
    assert m.msg_delays_per_commit() == 3.0


def test_csv_row_matches_header_and_formats():
    m = filled([100, 250])
    m.retries = 1
    m.delay_counts = {"t0": 2, "t1": 2}
    header = csv_header()
    assert header == ",".join(CSV_COLUMNS)
    row = m.csv_row().split(",")
    assert len(row) == len(CSV_COLUMNS)
    assert row[:6] == ["hacommit", "4", "0", "2", "0", "1"]
    assert row[6] == "175.000"
    assert row[9] == "2.000"
