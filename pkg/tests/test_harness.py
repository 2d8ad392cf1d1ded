"""Simulator, stream/trace file formats, stream generators."""

import pytest

from fpmon.harness import (
    TRACE_HEADER,
    StreamEvent,
    TraceRow,
    exact_fp_of_events,
    gen_uniform_stream,
    gen_zipf_stream,
    params_provenance,
    read_stream,
    read_trace,
    run_simulation,
    simulate,
    validate_stream,
    write_stream,
    write_trace,
)
from fpmon.oracles import FreqVector, exact_fp
from fpmon.protocol import GlobalParams


def sim_params(**kw):
    base = dict(k=4, m=64, n=2000, p=2.0, eps=0.5, tau=3000.0, b=8.0, r=5,
                seed=1, a=1)
    base.update(kw)
    return GlobalParams(**base)


# -- stream files ------------------------------------------------------------


def test_stream_round_trip(tmp_path):
    path = str(tmp_path / "s.txt")
    events = gen_uniform_stream(64, 4, 200, seed=5)
    write_stream(path, events, m=64, k=4, n=200)
    m, k, n, back = read_stream(path)
    assert (m, k, n) == (64, 4, 200)
    assert back == events
    with open(path, "rb") as fh:
        data = fh.read()
    assert data.startswith(b"64 4 200\n")
    assert b"\r" not in data


def test_stream_rejects_malformed_lines(tmp_path):
    path = str(tmp_path / "bad.txt")

    def attempt(text):
        with open(path, "w") as fh:
            fh.write(text)
        with pytest.raises(ValueError) as err:
            read_stream(path)
        return str(err.value)

    assert "empty" in attempt("")
    assert "line 1" in attempt("64 4\n")
    assert "line 2" in attempt("64 4 10\n0 0\n")
    assert "line 3" in attempt("64 4 10\n0 0 1\n1 0 x\n")
    # semantic violations name the offending event
    assert "not strictly increasing" in attempt("64 4 10\n5 0 1\n5 0 2\n")
    assert "site" in attempt("64 4 10\n0 4 1\n")
    assert "coordinate" in attempt("64 4 10\n0 0 64\n")
    assert "exceed" in attempt("64 4 1\n0 0 1\n1 0 2\n")


def test_validate_stream_accepts_gaps_in_time():
    validate_stream(
        [StreamEvent(0, 0, 1), StreamEvent(7, 1, 2), StreamEvent(8, 0, 0)],
        m=4, k=2, n=5,
    )


# -- trace files -------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    path = str(tmp_path / "t.csv")
    rows = [
        TraceRow(0, 1.0, 0.0, 0, 0, 0),
        TraceRow(5, 123456.789012, 98765.4321, 17, 323, 2),
    ]
    prov = {"mode": "threshold", "seed": 3, "eps": 0.25}
    write_trace(path, rows, prov)
    back_prov, back_rows = read_trace(path)
    assert back_prov == {"mode": "threshold", "seed": "3", "eps": "0.25"}
    assert back_rows == rows
    with open(path) as fh:
        text = fh.read()
    # provenance lines sorted by key, then the fixed header
    assert text.splitlines()[3] == TRACE_HEADER
    assert "123456.789012" in text
    # floats are printed to 12 significant digits; extra digits are cut
    write_trace(path, [TraceRow(0, 123456.789012345, 0.0, 0, 0, 0)], {})
    assert read_trace(path)[1][0].true_fp == 123456.789012


def test_trace_missing_header_rejected(tmp_path):
    path = str(tmp_path / "t.csv")
    with open(path, "w") as fh:
        fh.write("# seed=1\n0,1,2\n")
    with pytest.raises(ValueError):
        read_trace(path)


# -- generators --------------------------------------------------------------


def test_uniform_stream_shape_and_determinism():
    a = gen_uniform_stream(100, 8, 500, seed=9)
    b = gen_uniform_stream(100, 8, 500, seed=9)
    c = gen_uniform_stream(100, 8, 500, seed=10)
    assert a == b
    assert a != c
    assert len(a) == 500
    assert all(ev.t == i for i, ev in enumerate(a))
    assert all(0 <= ev.site < 8 and 0 <= ev.j < 100 for ev in a)


def test_zipf_stream_is_skewed():
    events = gen_zipf_stream(1000, 4, 5000, seed=3, s=1.3)
    counts = {}
    for ev in events:
        counts[ev.j] = counts.get(ev.j, 0) + 1
    top = max(counts.values())
    assert top > 5 * (5000 / 1000)  # far above the uniform per-coordinate mean
    with pytest.raises(ValueError):
        gen_zipf_stream(10, 2, 10, seed=0, s=0.0)


# -- simulation --------------------------------------------------------------


def test_empty_stream_produces_empty_trace():
    assert run_simulation([], sim_params()) == []


def test_single_event_trace():
    rows = run_simulation([StreamEvent(0, 0, 7)], sim_params())
    assert len(rows) == 1
    assert rows[0].t == 0
    assert rows[0].true_fp == 1.0
    assert rows[0].cum_bits == rows[0].cum_messages * sim_params().message_bits()


def test_trace_true_fp_matches_oracle_at_checkpoints():
    g = sim_params()
    events = gen_uniform_stream(g.m, g.k, 1200, seed=11)
    rows = run_simulation(events, g, stride=100)
    by_t = {row.t: row for row in rows}
    v = FreqVector(m=g.m)
    for pos, ev in enumerate(events):
        v.add(ev.j)
        if ev.t in by_t:
            assert by_t[ev.t].true_fp == float(exact_fp(v, 2))
    # final event always recorded
    assert rows[-1].t == events[-1].t
    assert rows[-1].true_fp == float(exact_fp_of_events(events, 2))


def test_trace_monotonicity_invariants():
    g = sim_params()
    events = gen_uniform_stream(g.m, g.k, 1500, seed=13)
    rows = run_simulation(events, g)
    for a, b in zip(rows, rows[1:]):
        assert b.true_fp >= a.true_fp
        assert b.cum_messages >= a.cum_messages
        assert b.cum_bits >= a.cum_bits
        assert b.fired_instances >= a.fired_instances
    bits = g.message_bits()
    assert all(row.cum_bits == row.cum_messages * bits for row in rows)


def test_threshold_run_fires_and_freezes_traffic():
    g = sim_params(tau=500.0)
    events = gen_uniform_stream(g.m, g.k, 2000, seed=7)
    rows, inst = simulate(events, g)
    assert rows[-1].fired_instances == 1
    fire_pos = next(i for i, row in enumerate(rows) if row.fired_instances == 1)
    # after the firing event no further messages are ever sent
    tail = rows[fire_pos:]
    assert all(row.cum_messages == tail[0].cum_messages for row in tail)
    assert inst.out == 1 and inst.terminated


def test_monitor_mode_accounting():
    g = sim_params(a=1)
    events = gen_uniform_stream(g.m, g.k, 600, seed=19)
    rows, mon = simulate(events, g, mode="monitor")
    bits = mon.message_bits
    assert bits == g.message_bits(n_streams=len(mon.copies))
    assert all(row.cum_bits == row.cum_messages * bits for row in rows)
    assert rows[-1].fired_instances == mon.fired_count()
    assert rows[-1].estimate == mon.estimate()


def test_rerun_is_byte_identical(tmp_path):
    g1 = sim_params()
    g2 = sim_params()
    events = gen_uniform_stream(g1.m, g1.k, 800, seed=23)
    p1 = str(tmp_path / "a.csv")
    p2 = str(tmp_path / "b.csv")
    write_trace(p1, run_simulation(events, g1), params_provenance(g1, "threshold"))
    write_trace(p2, run_simulation(events, g2), params_provenance(g2, "threshold"))
    with open(p1, "rb") as fh:
        d1 = fh.read()
    with open(p2, "rb") as fh:
        d2 = fh.read()
    assert d1 == d2


def test_simulate_validates_inputs():
    g = sim_params()
    with pytest.raises(ValueError):
        simulate([], g, mode="blended")
    with pytest.raises(ValueError):
        simulate([], g, stride=0)
    with pytest.raises(ValueError):
        simulate([StreamEvent(0, 99, 0)], g)


def test_stride_records_every_kth_plus_final():
    g = sim_params()
    events = gen_uniform_stream(g.m, g.k, 100, seed=29)
    rows = run_simulation(events, g, stride=30)
    assert [row.t for row in rows] == [0, 30, 60, 90, 99]


def test_exact_fp_of_events_int_and_float():
    events = [StreamEvent(t, 0, j) for t, j in enumerate([1, 1, 2, 1, 3])]
    assert exact_fp_of_events(events, 2) == 9 + 1 + 1
    assert exact_fp_of_events(events, 2.5) == pytest.approx(3**2.5 + 2.0)


def test_provenance_contains_resolved_config():
    g = sim_params()
    prov = params_provenance(g, "monitor")
    for key in ("mode", "k", "m", "n", "p", "eps", "tau", "gamma", "b", "r",
                "c_fire", "a", "i_max", "seed"):
        assert key in prov
    assert prov["mode"] == "monitor"
    assert prov["b"] == 8.0
