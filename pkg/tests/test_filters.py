import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from chanmdp.errors import InfeasibleSpecError, ShapeError
from chanmdp.filters import (
    FilterSpec, FirFilter, channel_responses, design_prototype, design_with_fallback,
    frequency_response, interleave, kaiser_num_taps, load_coefficients, measure,
    polyphase_decompose, save_coefficients,
)
from chanmdp.remez import remez_lowpass


@pytest.mark.parametrize("n,fp,fs,w", [
    (64, 1 / 16 - 0.03, 1 / 16 + 0.03, 30.0),
    (63, 0.1, 0.15, 10.0),
    (32, 0.05, 0.12, 1.0),
    (41, 0.2, 0.26, 5.0),
])
def test_remez_matches_scipy(n, fp, fs, w):
    h, _ = remez_lowpass(n, fp, fs, w)
    ref = signal.remez(n, [0, fp, fs, 0.5], [1, 0], weight=[1, w], fs=1.0)
    assert np.max(np.abs(h - ref)) < 1e-4 * np.max(np.abs(ref)) + 1e-6


def test_remez_equiripple_deviation():
    fp, fs, w = 0.05, 0.1, 10.0
    h, delta = remez_lowpass(48, fp, fs, w)
    resp = frequency_response(h, 16384)
    mag = np.real(resp.values * np.exp(2j * np.pi * resp.grid * (len(h) - 1) / 2))
    err_pass = np.max(np.abs(mag[resp.grid <= fp] - 1))
    err_stop = np.max(np.abs(mag[resp.grid >= fs]))
    # equiripple on the design grid; a finer check grid sees slightly more
    assert err_pass == pytest.approx(delta, rel=3e-2)
    assert err_stop == pytest.approx(delta / w, rel=3e-2)


def test_default_design_meets_spec():
    h = design_prototype()
    atten, ripple = measure(h)
    assert len(h) == 64
    assert atten >= 59.0
    assert ripple <= 1.0


def test_kaiser_design_with_feasible_edges():
    spec = FilterSpec(method="kaiser_window")
    h = design_prototype(spec)
    resp = frequency_response(h, 8192)
    stop = resp.magnitude_db[resp.grid >= spec.stopband_edge]
    assert stop.max() <= -59.0


def test_kaiser_narrow_transition_is_infeasible():
    spec = FilterSpec(passband_edge=1 / 16 - 0.01, stopband_edge=1 / 16 + 0.01,
                      method="kaiser_window")
    assert kaiser_num_taps(60, 0.02) > 64
    with pytest.raises(InfeasibleSpecError):
        design_prototype(spec)


def test_equiripple_narrow_transition_is_infeasible():
    spec = FilterSpec(passband_edge=1 / 16 - 0.01, stopband_edge=1 / 16 + 0.01)
    with pytest.raises(InfeasibleSpecError):
        design_prototype(spec)


def test_single_tap_infeasible():
    with pytest.raises(InfeasibleSpecError):
        design_prototype(FilterSpec(num_channels=1, num_taps=1))


def test_bad_spec_values():
    with pytest.raises(ShapeError):
        FilterSpec(num_taps=60)
    with pytest.raises(InfeasibleSpecError):
        FilterSpec(passband_edge=0.2, stopband_edge=0.1)
    with pytest.raises(ValueError):
        FilterSpec(method="bogus")


def test_fallback_returns_a_design():
    h = design_with_fallback(FilterSpec())
    assert len(h) == 64


def test_polyphase_examples():
    h = np.arange(64.0)
    br = polyphase_decompose(h, 8)
    assert np.array_equal(br[0], [0, 8, 16, 24, 32, 40, 48, 56])
    assert all(len(b) == 8 for b in br)
    with pytest.raises(ShapeError):
        polyphase_decompose(np.ones(63), 8)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_polyphase_roundtrip(M, L, seed):
    h = np.random.default_rng(seed).standard_normal(M * L)
    assert np.array_equal(interleave(polyphase_decompose(h, M)), h)


def test_coefficient_file_roundtrip(tmp_path):
    h = design_prototype()
    p = tmp_path / "c.txt"
    save_coefficients(h, p)
    text = p.read_text()
    assert len(text.splitlines()) == 64
    p.write_text("# header\n\n" + text)
    assert np.array_equal(load_coefficients(p).taps, h.taps)


def test_channel_responses_shape_and_peaks():
    h = design_prototype()
    freqs, mags = channel_responses(h, 8, 1024)
    assert mags.shape == (1024, 8)
    for m in range(8):
        centre = np.argmin(np.abs(freqs - m / 8))
        assert mags[centre, m] == pytest.approx(0.0, abs=1.0)


def test_prototype_is_linear_phase():
    h = design_prototype()
    assert np.allclose(h.taps, h.taps[::-1], atol=1e-15)
    assert isinstance(h, FirFilter)
