import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snoopshield.trace import (
    TRACE_HEADER,
    ArchetypeKind,
    DeviceArchetype,
    Direction,
    PacketRecord,
    Protocol,
    RateScope,
    TraceFormatError,
    emit_trace,
    extract_dns,
    parse_trace,
    rate_series,
    split_flows,
    synth_device_trace,
)


def pkt(ts_us, size=100, src="10.0.0.1", dst="8.8.8.8", sp=1234, dp=443,
        proto=Protocol.TCP, direction=Direction.UPLOAD, dns=None, hw=None):
    return PacketRecord(ts_us, src, dst, sp, dp, proto, size, direction, dns, hw)


PLUG = DeviceArchetype(
    name=ArchetypeKind.SMART_PLUG,
    baseline_rate=50.0,
    packet_size=50,
    event_profile=(("toggle", 6000, 2.0),),
    noise_seed_salt=7,
    domains=("devs.tplinkcloud.com",),
    src_addr="10.0.0.15",
    dst_addr="198.51.100.5",
)


# ---------------------------------------------------------------------------
# parse / emit
# ---------------------------------------------------------------------------

class TestParseEmit:
    def test_header_only_is_empty(self):
        assert parse_trace(TRACE_HEADER + "\n") == []

    def test_single_tcp_line(self):
        doc = TRACE_HEADER + "\n1000,10.0.0.1,8.8.8.8,1234,443,TCP,60,UP,,\n"
        records = parse_trace(doc)
        assert len(records) == 1
        assert records[0].size == 60
        assert records[0].dns_query is None
        assert emit_trace(records) == doc

    def test_port_out_of_range_names_line(self):
        doc = TRACE_HEADER + "\n1000,a,b,70000,443,TCP,60,UP,,\n"
        with pytest.raises(TraceFormatError, match="line 2"):
            parse_trace(doc)

    def test_timestamp_regression(self):
        doc = (TRACE_HEADER + "\n"
               "1000,a,b,1,2,TCP,60,UP,,\n"
               "999,a,b,1,2,TCP,60,UP,,\n")
        with pytest.raises(TraceFormatError, match="regression"):
            parse_trace(doc)

    def test_bad_protocol_and_direction(self):
        with pytest.raises(TraceFormatError, match="protocol"):
            parse_trace(TRACE_HEADER + "\n1,a,b,1,2,ICMP,60,UP,,\n")
        with pytest.raises(TraceFormatError, match="direction"):
            parse_trace(TRACE_HEADER + "\n1,a,b,1,2,TCP,60,SIDEWAYS,,\n")

    def test_bad_header(self):
        with pytest.raises(TraceFormatError, match="header"):
            parse_trace("nope\n")

    def test_wrong_field_count(self):
        with pytest.raises(TraceFormatError, match="10 fields"):
            parse_trace(TRACE_HEADER + "\n1,a,b\n")

    def test_emit_empty(self):
        assert emit_trace([]) == TRACE_HEADER + "\n"

    def test_emit_unsorted_rejected(self):
        records = [pkt(1000), pkt(500)]
        with pytest.raises(ValueError, match="sorted"):
            emit_trace(records)

    def test_dns_on_tcp_rejected(self):
        bad = pkt(0, proto=Protocol.TCP, dp=53, dns="example.com")
        with pytest.raises(ValueError, match="dns_query"):
            emit_trace([bad])
        udp_wrong_port = pkt(0, proto=Protocol.UDP, dp=80, dns="example.com")
        with pytest.raises(ValueError, match="dns_query"):
            emit_trace([udp_wrong_port])

    def test_record_validation(self):
        with pytest.raises(ValueError):
            pkt(-1)
        with pytest.raises(ValueError):
            pkt(0, size=0)
        with pytest.raises(ValueError):
            pkt(0, hw="ZZ:00:00:00:00:00")


_addr = st.text(alphabet="abcdef0123456789.", min_size=1, max_size=12)


@st.composite
def record_lists(draw):
    count = draw(st.integers(0, 30))
    ts = 0
    records = []
    for _ in range(count):
        ts += draw(st.integers(0, 10_000_000))
        is_dns = draw(st.booleans())
        records.append(PacketRecord(
            timestamp=ts,
            src_addr=draw(_addr),
            dst_addr=draw(_addr),
            src_port=draw(st.integers(0, 65535)),
            dst_port=53 if is_dns else draw(st.integers(0, 65535)),
            protocol=Protocol.UDP if is_dns else draw(st.sampled_from(list(Protocol))),
            size=draw(st.integers(1, 65535)),
            direction=draw(st.sampled_from(list(Direction))),
            dns_query=draw(st.sampled_from(["a.example", "b.example"])) if is_dns else None,
            src_hw=draw(st.one_of(st.none(), st.just("02:A1:05:00:00:01"))),
        ))
    return records


@settings(max_examples=50, deadline=None)
@given(record_lists())
def test_round_trip(records):
    doc = emit_trace(records)
    assert parse_trace(doc) == records
    assert emit_trace(parse_trace(doc)) == doc


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

class TestSplitFlows:
    def test_same_tuple_within_timeout(self):
        records = [pkt(0), pkt(1_000_000)]
        flows = split_flows(records, timeout=60)
        assert len(flows) == 1
        assert len(flows[0].packets) == 2

    def test_different_port_two_flows(self):
        records = [pkt(0, dp=443), pkt(0, dp=8443)]
        assert len(split_flows(records, timeout=60)) == 2

    def test_gap_beyond_timeout_splits(self):
        records = [pkt(0), pkt(120_000_000)]
        flows = split_flows(records, timeout=60)
        assert len(flows) == 2

    def test_gap_exactly_timeout_does_not_split(self):
        records = [pkt(0), pkt(60_000_000)]
        assert len(split_flows(records, timeout=60)) == 1

    def test_partition_matches_naive_oracle(self):
        # oracle: per-key scan counting gaps > timeout
        rng = np.random.default_rng(42)
        records = []
        ts = 0
        for _ in range(400):
            ts += int(rng.integers(0, 30_000_000))
            records.append(pkt(ts, sp=int(rng.integers(1, 4)), dp=int(rng.integers(1, 3))))
        timeout = 20.0
        flows = split_flows(records, timeout=timeout)

        by_key = {}
        for r in records:
            by_key.setdefault((r.src_addr, r.dst_addr, r.src_port, r.dst_port,
                               r.protocol), []).append(r)
        expected_flows = 0
        for packets in by_key.values():
            expected_flows += 1
            for a, b in zip(packets, packets[1:]):
                if b.timestamp - a.timestamp > timeout * 1_000_000:
                    expected_flows += 1
        assert len(flows) == expected_flows
        # partition: every record in exactly one flow
        scattered = [p for f in flows for p in f.packets]
        assert sorted(scattered, key=id) == sorted(records, key=id)
        assert len(scattered) == len(records)


class TestExtractDns:
    def test_no_dns(self):
        assert extract_dns([pkt(0)]) == {}

    def test_groups_by_source(self):
        records = [pkt(0, src="10.0.0.12", dp=53, proto=Protocol.UDP,
                       dns="nexus.dropcam.com")]
        assert extract_dns(records) == {"10.0.0.12": {"nexus.dropcam.com"}}

    def test_deduplicates(self):
        records = [
            pkt(0, src="a", dp=53, proto=Protocol.UDP, dns="x.example"),
            pkt(10, src="a", dp=53, proto=Protocol.UDP, dns="x.example"),
        ]
        assert extract_dns(records) == {"a": {"x.example"}}


# ---------------------------------------------------------------------------
# synthetic traces
# ---------------------------------------------------------------------------

class TestSynth:
    def test_baseline_bytes_within_five_percent(self):
        records = synth_device_trace(PLUG, 600, [], seed=1)
        total = sum(r.size for r in records)
        assert total == pytest.approx(PLUG.baseline_rate * 600, rel=0.05)

    def test_toggle_spike_dominates_baseline(self):
        records = synth_device_trace(PLUG, 600, [(120.0, "toggle")], seed=1)
        series = rate_series(records, 1)
        idx = 120 - series.origin_ts // 1_000_000
        baseline_sample = PLUG.baseline_rate * 1.0
        assert series.samples[idx - 1: idx + 2].max() >= 5 * baseline_sample

    def test_deterministic_per_seed(self):
        a = synth_device_trace(PLUG, 300, [(10.0, "toggle")], seed=3)
        b = synth_device_trace(PLUG, 300, [(10.0, "toggle")], seed=3)
        assert emit_trace(a) == emit_trace(b)

    def test_seeds_differ(self):
        a = synth_device_trace(PLUG, 300, [], seed=3)
        b = synth_device_trace(PLUG, 300, [], seed=4)
        assert emit_trace(a) != emit_trace(b)

    def test_event_outside_duration_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            synth_device_trace(PLUG, 300, [(300.0, "toggle")], seed=1)

    def test_unknown_event_label_rejected(self):
        with pytest.raises(KeyError):
            synth_device_trace(PLUG, 300, [(10.0, "warp")], seed=1)

    def test_queries_domains_once_at_start(self):
        records = synth_device_trace(PLUG, 300, [], seed=1)
        dns = extract_dns(records)
        assert dns == {PLUG.src_addr: set(PLUG.domains)}
        assert sum(1 for r in records if r.dns_query) == len(PLUG.domains)


# ---------------------------------------------------------------------------
# rate series
# ---------------------------------------------------------------------------

class TestRateSeries:
    def test_two_samples(self):
        records = [pkt(500_000, size=100), pkt(1_500_000, size=100)]
        series = rate_series(records, 1)
        assert series.samples.tolist() == [100, 100]
        assert series.origin_ts == 500_000

    def test_empty(self):
        series = rate_series([], 1)
        assert len(series) == 0

    def test_upload_only_matches_brute_force(self):
        rng = np.random.default_rng(7)
        records = []
        ts = 0
        for _ in range(300):
            ts += int(rng.integers(0, 3_000_000))
            records.append(pkt(ts, size=int(rng.integers(1, 1500)),
                               direction=Direction.UPLOAD if rng.random() < 0.5
                               else Direction.DOWNLOAD))
        series = rate_series(records, 5, RateScope.UPLOAD_ONLY)
        manual = sum(r.size for r in records if r.direction is Direction.UPLOAD)
        assert series.samples.sum() == manual

    def test_scope_conservation(self):
        records = synth_device_trace(PLUG, 200, [(50.0, "toggle")], seed=9)
        combined = rate_series(records, 1)
        up = rate_series(records, 1, RateScope.UPLOAD_ONLY)
        down = rate_series(records, 1, RateScope.DOWNLOAD_ONLY)
        assert len(up) == len(down) == len(combined)
        assert np.array_equal(up.samples + down.samples, combined.samples)

    def test_length_covers_span(self):
        records = [pkt(0), pkt(10_400_000)]
        assert len(rate_series(records, 1)) == 11
        assert len(rate_series(records, 5)) == 3

    def test_samples_are_read_only(self):
        series = rate_series([pkt(0)], 1)
        with pytest.raises(ValueError):
            series.samples[0] = 5
