import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nscgrid.codec import (INPUT_CURRENT, INPUT_VOLTAGE, OUTPUT, SIMULATION_THRESHOLDS, BenchmarkHold, Decoder,
                           EncoderConfig, EventCapture, EventRecord, EventThresholds, FeatureFilter,
                           UntrainedModelError, decode, detect, encode, input_error_signals, output_event_signal,
                           raster_rows, tuning_activation)
from nscgrid.grid import ConverterParams, ElectricalSystem, load_injections, tie_line_flows
from nscgrid.scenario.presets import case_preset
from nscgrid.scenario.runner import simulate

CONV = ConverterParams(48.0, 300.0, 1.5e-3, 700e-6, 2.0)
UNIT = EncoderConfig(np.tile([0.0, 1.0], (4, 1)))


# error signals

def test_steady_state_error_signals_vanish():
    assert input_error_signals(CONV, 48.0, 48.0, 3.0, 3.0, 0.0, 0.0) == (0.0, 0.0)
    assert output_event_signal(700e-6, 0.0, 0.0) == 0.0


def test_capacitor_current_example():
    om_v, om_i = input_error_signals(CONV, 48.0, 48.0, 3.0, 3.0, 100.0, 0.0)
    assert om_v == pytest.approx(0.07) and om_i == 0.0


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-2, 2), st.floats(-2, 2))
def test_error_signals_are_odd_in_dynamic_terms(dv, di, ev, ei):
    a = input_error_signals(CONV, 48.0, 48.0 + ev, 3.0, 3.0 + ei, dv, di)
    b = input_error_signals(CONV, 48.0, 48.0 - ev, 3.0, 3.0 - ei, -dv, -di)
    assert b == pytest.approx((-a[0], -a[1]), abs=1e-12)


def test_output_signal_is_linear_in_capacitance():
    base = output_event_signal(700e-6, 40.0, 0.0)
    assert output_event_signal(1400e-6, 40.0, 0.0) == pytest.approx(2 * base)


def test_remote_load_step_raises_output_signal_quickly():
    cfg = case_preset("I")
    g = cfg.graph()
    sysm = ElectricalSystem(g, cfg.dt_electrical, [0.384, 0.384])
    x = sysm.pack([48.0, 48.0], [0.0, 0.0], [0.0, 0.0], [0.0])
    sp = np.array([48.0, 48.0])
    loads = np.array([36.0, 0.0])  # only node 0 carries a load
    for n in range(300):
        x, _ = sysm.advance(x, [True], load_injections(g, 0.0, x[sysm.sv], loads), sp, 100)
    loads[0] = 14.4
    seen = []
    for _ in range(5):
        x_new, x_prev = sysm.advance(x, [True], load_injections(g, 0.0, x[sysm.sv], loads), sp, 1)
        # seen from node 1, the load bus is remote
        dv = (x_new[1] - x_prev[1]) / sysm.dt
        df = (tie_line_flows(g, sysm.line_currents(x_new, [True]))[1]
              - tie_line_flows(g, sysm.line_currents(x_prev, [True]))[1]) / sysm.dt
        seen.append(abs(output_event_signal(700e-6, dv, df)))
        x = x_new
    assert max(seen) > SIMULATION_THRESHOLDS.sigma_o


# detection

def test_detect_is_strict():
    th = EventThresholds(0.01, 0.002, 0.0039)
    assert detect(0.01, 0.0, 0.0, th) == frozenset()
    assert detect(0.02, 0.0, 0.0, th) == {INPUT_VOLTAGE}
    assert detect(0.0, -0.003, 0.004, th) == {INPUT_CURRENT, OUTPUT}
    assert detect(0.0, 0.0, 0.0, th) == frozenset()
    with pytest.raises(ValueError):
        EventThresholds(0.0, 1.0, 1.0)


@settings(max_examples=50)
@given(st.lists(st.tuples(*[st.floats(-0.5, 0.5)] * 3), min_size=1, max_size=200))
def test_sub_threshold_noise_opens_nothing(noise):
    th = SIMULATION_THRESHOLDS
    cap = EventCapture(0, BenchmarkHold([48.0, 3.0]))
    for n, (a, b, c) in enumerate(noise):
        cap.step(detect(a * th.sigma_v, b * th.sigma_i, c * th.sigma_o, th), n)
    assert cap.records == [] and cap.hold.values.tolist() == [48.0, 3.0]


# capture

def test_capture_open_extend_close():
    cap = EventCapture(3, BenchmarkHold([1.0, 2.0]))
    assert cap.step([], 0) == (False, False)
    assert cap.step([OUTPUT], 1) == (True, True)
    cap.update_benchmark([5.0, 6.0])
    assert cap.step([OUTPUT, INPUT_VOLTAGE], 2) == (True, False)
    cap.update_benchmark([7.0, 8.0])
    assert cap.step([INPUT_VOLTAGE], 3) == (True, False)
    assert cap.step([], 4) == (False, False)
    cap.update_benchmark([0.0, 0.0])
    assert cap.hold.values.tolist() == [7.0, 8.0] and not cap.hold.active
    spans = sorted((r.kind, r.start, r.end) for r in cap.records)
    assert spans == [(INPUT_VOLTAGE, 2, 3), (OUTPUT, 1, 2)]


def test_event_record_validation():
    with pytest.raises(ValueError):
        EventRecord(0, 5, 4, OUTPUT)
    with pytest.raises(ValueError):
        EventRecord(0, 5, 5, "thermal")


@pytest.fixture(scope="module")
def case_i_run():
    return simulate(case_preset("I"))


def test_case_i_event_opens_at_the_step(case_i_run):
    starts = sorted({r.start for r in case_i_run.events})
    assert starts and abs(starts[0] - 500) <= 1
    assert all(r.start >= 500 for r in case_i_run.events)


def test_case_i_quiet_windows_are_silent(case_i_run):
    t = case_i_run.t
    for lo, hi in ((0.0, 0.5), (2.0, 2.5)):
        sel = (t >= lo) & (t < hi - 1e-9)
        for k in (0, 1):
            assert not case_i_run.column(f"event_{k}")[sel].any()
            assert not case_i_run.column(f"spikes_{k}")[sel].any()


def test_constant_signals_produce_no_events():
    cfg = case_preset("I").with_changes(timeline=[], duration=0.3)
    res = simulate(cfg)
    assert res.events == []


# features and encoding

def test_feature_filter_derivatives():
    f = FeatureFilter(1e-3, tau=1e-9)
    f.reset(48.0, 2.0)
    out = f.step(48.1, 1.9)
    assert out == pytest.approx([48.1, 1.9, 100.0, -100.0])
    with pytest.raises(ValueError):
        FeatureFilter(0.0)


def test_encoder_fires_at_its_center():
    for c in (0, 17, 63):
        x = np.full(4, c / 63)
        assert encode(x, UNIT).reshape(4, 64)[:, c].all()


def test_encoder_midpoint_symmetry():
    fired = np.flatnonzero(encode(np.full(4, 0.5), UNIT)[:64])
    assert fired.tolist() == sorted(63 - fired)


def test_encoder_clamps_outside_range():
    below = encode(np.array([-3.0, 0.0, 0.0, 0.0]), UNIT)
    assert (below == encode(np.zeros(4), UNIT)).all()
    assert below[0] == 1
    above = encode(np.array([9.0, 1.0, 1.0, 1.0]), UNIT)
    assert above[63] == 1 and (above == encode(np.ones(4), UNIT)).all()


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig([[1.0, 1.0]])
    with pytest.raises(ValueError):
        EncoderConfig([[0.0, 1.0]], neurons_per_feature=1)
    cfg = EncoderConfig.fit(np.array([[0.0, 10.0], [1.0, 20.0]]), margin=0.0)
    assert cfg.ranges.tolist() == [[0.0, 1.0], [10.0, 20.0]]
    assert EncoderConfig.from_dict(cfg.to_dict()).ranges.tolist() == cfg.ranges.tolist()


@given(st.lists(st.floats(-0.2, 1.2), min_size=4, max_size=4), st.integers(0, 3), st.floats(-0.2, 1.2))
def test_encoder_determinism_and_locality(x, f, y):
    x = np.array(x)
    a = encode(x, UNIT)
    assert (a == encode(x.copy(), UNIT)).all()
    x2 = x.copy()
    x2[f] = y
    changed = np.flatnonzero(encode(x2, UNIT) != a)
    assert all(f * 64 <= n < (f + 1) * 64 for n in changed)


def test_tuning_activation_shape_and_peak():
    act = tuning_activation(np.zeros((5, 4)), UNIT)
    assert act.shape == (5, 4, 64) and act.max() == 1.0


# decoding

def _decoder():
    return Decoder(2, tau=0.02, dt=1e-3, scale=np.array([10.0, 2.0]), offset=np.array([40.0, 1.0]))


def test_decoder_constant_rate_is_affine():
    d = _decoder()
    d.rate = np.array([0.3, 0.5])
    assert d.value() == pytest.approx([43.0, 2.0])
    for _ in range(2000):
        d.step(np.ones(2))
    assert d.value() == pytest.approx([50.0, 3.0])


def test_decoder_seed_starts_from_held_value():
    d = _decoder()
    d.reset([48.0, 2.5])
    assert d.value() == pytest.approx([48.0, 2.5])
    d.step(np.zeros(2))
    assert d.value() == pytest.approx(np.array([40.0, 1.0]) + d.decay * np.array([8.0, 1.5]))


def test_decode_returns_hold_outside_events():
    d = _decoder()
    hold = BenchmarkHold([47.5, 3.0], active=False)
    for _ in range(5):
        assert decode(np.ones(2), hold, d).tolist() == [47.5, 3.0]
    assert d.rate.tolist() == [0.0, 0.0]
    hold.active = True
    assert decode(np.ones(2), hold, d) == pytest.approx([40.0 + 10 * (1 - d.decay), 1.0 + 2 * (1 - d.decay)])


def test_untrained_decoder_raises():
    d = Decoder(2)
    with pytest.raises(UntrainedModelError):
        d.value()
    with pytest.raises(UntrainedModelError):
        decode(None, BenchmarkHold([0.0, 0.0]), d)
    with pytest.raises(UntrainedModelError):
        d.reset([1.0, 2.0])


def test_raster_rows():
    r = np.zeros((3, 4), dtype=np.uint8)
    r[0, 2] = r[2, 0] = r[2, 3] = 1
    assert raster_rows(r, tick0=10) == [(10, 2), (12, 0), (12, 3)]
    assert raster_rows(np.zeros((2, 2))) == []


# hold correctness on a run with trained estimators in shadow

def test_estimates_are_constant_between_events(case_i_clc_run):
    res, _ = case_i_clc_run
    for k, j in ((0, 1), (1, 0)):
        ev = res.column(f"event_{k}") > 0.5
        for name in (f"vhat_{k}_{j}", f"ihat_{k}_{j}"):
            est = res.column(name)
            edges = np.flatnonzero(np.diff(ev.astype(int))) + 1
            for seg in np.split(np.arange(len(ev)), edges):
                if not ev[seg[0]]:
                    assert np.ptp(est[seg]) == 0.0
                    if seg[0] > 0:
                        assert est[seg[0]] == est[seg[0] - 1]
            assert np.ptp(est[ev]) > 0.0
