"""Communication accounting: exact counters, replay, gradient equivalents."""

from fractions import Fraction

import pytest

from marina_vi.compressors import CompressorSpec
from marina_vi.ledger import (FULL_VALUE_BITS, SERVER_DEVICE_ID, CommLedger,
                              gradient_equivalents, gradient_equivalents_exact)


def test_epoch_start_increments():
    led = CommLedger(10)
    led.record_epoch_start(10, 100)
    assert led.per_device_uplink_bits == [3200] * 10
    led.record_epoch_start(10, 100)
    assert led.per_device_uplink_bits == [6400] * 10
    assert led.server_downlink_bits == 0

    tiny = CommLedger(1)
    tiny.record_epoch_start(1, 1)
    assert tiny.per_device_uplink_bits == [32]


def test_inner_round_increments_per_kind():
    cases = [
        (CompressorSpec(kind="rand_k", d=100, k=10), 390),
        (CompressorSpec(kind="int8_quant", d=100), 832),
        (CompressorSpec(kind="identity", d=100), 3200),
    ]
    for spec, up in cases:
        led = CommLedger(4)
        led.record_inner_round(spec, 4, 100)
        assert led.per_device_uplink_bits == [up] * 4
        assert led.server_downlink_bits == 3200


def test_batched_rounds_equal_repeated_single_rounds():
    spec = CompressorSpec(kind="rand_k", d=20, k=3)
    a = CommLedger(3)
    b = CommLedger(3)
    a.record_epoch_start(3, 20)
    b.record_epoch_start(3, 20)
    for _ in range(7):
        a.record_inner_round(spec, 3, 20)
    b.record_inner_rounds(spec, 3, 20, 7)
    assert a.per_device_uplink_bits == b.per_device_uplink_bits
    assert a.server_downlink_bits == b.server_downlink_bits
    assert a.events == b.events


def test_counters_equal_event_sums_at_all_times():
    spec = CompressorSpec(kind="int8_quant", d=8)
    led = CommLedger(2)
    steps = [lambda: led.record_epoch_start(2, 8),
             lambda: led.record_inner_round(spec, 2, 8),
             lambda: led.record_inner_rounds(spec, 2, 8, 3),
             lambda: led.record_epoch_start(2, 8),
             lambda: led.record_inner_round(spec, 2, 8)]
    for step in steps:
        step()
        uplink, downlink = led.replay_from_events()
        assert uplink == led.per_device_uplink_bits
        assert downlink == led.server_downlink_bits


def test_event_positions_track_epoch_and_inner():
    spec = CompressorSpec(kind="identity", d=4)
    led = CommLedger(1)
    led.record_epoch_start(1, 4)
    led.record_inner_rounds(spec, 1, 4, 2)
    led.record_epoch_start(1, 4)
    led.record_inner_round(spec, 1, 4)
    positions = [(e, i, direction, dev) for e, i, direction, dev, _ in led.events]
    assert positions == [
        (1, 0, "uplink", 0),
        (1, 1, "uplink", 0), (1, 1, "downlink", SERVER_DEVICE_ID),
        (1, 2, "uplink", 0), (1, 2, "downlink", SERVER_DEVICE_ID),
        (2, 0, "uplink", 0),
        (2, 1, "uplink", 0), (2, 1, "downlink", SERVER_DEVICE_ID),
    ]


def test_conservation_formula_synthetic_run():
    spec = CompressorSpec(kind="rand_k", d=50, k=5)
    n, d, S, K = 6, 50, 4, 31
    led = CommLedger(n)
    for _ in range(S):
        led.record_epoch_start(n, d)
        led.record_inner_rounds(spec, n, d, K - 1)
    want = S * n * FULL_VALUE_BITS * d + S * (K - 1) * n * spec.payload_bits
    assert led.total_uplink_bits() == want
    assert led.server_downlink_bits == S * (K - 1) * FULL_VALUE_BITS * d


def test_gradient_equivalents_examples():
    ident = CompressorSpec(kind="identity", d=100)
    assert gradient_equivalents(ident, 150) == 150.0

    tenth = CompressorSpec(kind="rand_k", d=100, k=10)
    assert gradient_equivalents(tenth, 11) == pytest.approx(2.0, rel=1e-15)

    # delta = 1/11 (one-eleventh of coordinates kept) at K=5700 gives
    # 1 + 5699/11, about 519.1 full-gradient sends per device per epoch
    eleventh = CompressorSpec(kind="rand_k", d=99, k=9)
    val = gradient_equivalents(eleventh, 5700)
    assert val == pytest.approx(1 + 5699 / 11, rel=1e-14)
    assert val == pytest.approx(519.1, abs=0.05)
    assert gradient_equivalents_exact(eleventh, 5700) == Fraction(5710, 11)


def test_gradient_equivalent_totals_exact():
    spec = CompressorSpec(kind="rand_k", d=12, k=5)
    led = CommLedger(2)
    S, K = 3, 8
    for _ in range(S):
        led.record_epoch_start(2, 12)
        led.record_inner_rounds(spec, 2, 12, K - 1)
    want = S * gradient_equivalents_exact(spec, K)
    totals = led.gradient_equivalent_totals(spec)
    assert totals == [want, want]
    assert isinstance(totals[0], Fraction)


def test_events_optional_but_counters_exact():
    spec = CompressorSpec(kind="int8_quant", d=16)
    led = CommLedger(3, record_events=False)
    led.record_epoch_start(3, 16)
    led.record_inner_rounds(spec, 3, 16, 100)
    assert led.per_device_uplink_bits == [32 * 16 + 100 * spec.payload_bits] * 3
    with pytest.raises(ValueError):
        led.replay_from_events()
    with pytest.raises(ValueError):
        led.export_csv("/tmp/unused.csv")


def test_export_csv_round_trip(tmp_path):
    spec = CompressorSpec(kind="rand_k", d=6, k=2)
    led = CommLedger(2)
    led.record_epoch_start(2, 6)
    led.record_inner_round(spec, 2, 6)
    path = tmp_path / "events.csv"
    led.export_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,inner_iter,direction,device,bits"
    parsed = [tuple(line.split(",")) for line in lines[1:]]
    want = [(str(e), str(i), dr, str(dev), str(bits))
            for e, i, dr, dev, bits in led.events]
    assert parsed == want


def test_ledger_rejects_bad_usage():
    with pytest.raises(ValueError):
        CommLedger(0)
    led = CommLedger(2)
    with pytest.raises(ValueError):
        led.record_epoch_start(3, 5)
    with pytest.raises(ValueError):
        led.record_inner_rounds(CompressorSpec(kind="identity", d=5), 2, 5, -1)
    with pytest.raises(ValueError):
        gradient_equivalents(CompressorSpec(kind="identity", d=5), 0)
