import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dvs_nullhop.histogram import EventHistogram
from dvs_nullhop.normalizer import (Degenerate, EmptyFrame, NormVariant, compute_stats,
                                    fixed_stats, norm_pipeline_cycles, normalize_fixed,
                                    normalize_float, read_normalized, write_normalized)

FIXTURE = [[0, 2], [4, 6]]


def literal_oracle(F):
    """Plain-Python evaluation of the formula as printed (zeros in the variance sum)."""
    flat = [v for row in F for v in row]
    S = sum(flat)
    c = sum(1 for v in flat if v != 0)
    mean = S / c
    sigma = math.sqrt(sum((v - mean) ** 2 for v in flat) / c)
    return S, c, mean, sigma, [[(v + 3 * sigma) / (6 * sigma) for v in row] for row in F]


def test_fixture_stats_and_values():
    S, c, mean, sigma, norm = literal_oracle(FIXTURE)
    assert (S, c, mean) == (12, 3, 4.0) and sigma == pytest.approx(math.sqrt(8))
    st_ = compute_stats(FIXTURE)
    assert (st_.S, st_.c, st_.mean) == (12, 3, 4.0)
    assert st_.sigma == pytest.approx(math.sqrt(8), abs=1e-12)
    nf = normalize_float(FIXTURE)
    assert nf.degenerate is Degenerate.NONE
    np.testing.assert_allclose(nf.values, norm, atol=1e-12)
    np.testing.assert_allclose(nf.values.ravel(), [0.5, 0.617851, 0.735702, 0.853553], atol=1e-6)
    assert nf.values[0, 0] == 0.5


def test_fixture_fixed_path():
    nf = normalize_fixed(FIXTURE)
    ref = normalize_float(FIXTURE).values
    assert np.abs(nf.values - ref).max() <= 2 ** -7
    assert nf.raw[0, 0] == 128
    assert nf.stats.mean_raw == 4 << 16 and nf.stats.variance_raw == 8 << 16
    assert abs(nf.stats.sigma_raw / 2 ** 16 - math.sqrt(8)) <= 2 ** -16
    again = normalize_fixed(FIXTURE)
    assert np.array_equal(nf.raw, again.raw)


def test_empty_and_zero_sigma():
    with pytest.raises(EmptyFrame):
        compute_stats(np.zeros((4, 4)))
    for fn in (normalize_float, normalize_fixed):
        nf = fn(np.zeros((4, 4), int))
        assert nf.degenerate is Degenerate.EMPTY and np.all(nf.values == 0.5)
    assert np.all(normalize_fixed(np.zeros((4, 4), int)).raw == 128)
    one = compute_stats([[7]])
    assert one.mean == 7 and one.sigma == 0
    for fn in (normalize_float, normalize_fixed):
        nf = fn([[7]])
        assert nf.degenerate is Degenerate.ZERO_SIGMA and np.all(nf.values == 0.5)


def test_zero_sigma_needs_no_zero_pixels():
    # with a zero pixel present the zeros add (0 - mean)^2, so sigma > 0
    assert compute_stats([[3, 3], [3, 0]]).sigma > 0
    nf = normalize_float([[3, 3], [3, 3]])
    assert nf.degenerate is Degenerate.ZERO_SIGMA


hist64 = arrays(np.int64, (64, 64), elements=st.integers(0, 255))


@settings(max_examples=40, deadline=None)
@given(hist64)
def test_properties_float(F):
    if not F.any():
        return
    nf = normalize_float(F)
    st_ = nf.stats
    assert st_.S == F.sum() and st_.c == np.count_nonzero(F)
    if nf.degenerate is Degenerate.NONE:
        np.testing.assert_allclose(nf.values, F / (6 * st_.sigma) + 0.5, rtol=0, atol=1e-12)
        assert np.all(nf.values[F == 0] == 0.5)
        order = np.argsort(F, axis=None, kind="stable")
        assert np.all(np.diff(nf.values.ravel()[order]) >= 0)
        assert nf.values.min() >= 0


@settings(max_examples=40, deadline=None)
@given(hist64)
def test_fixed_tracks_float(F):
    a, b = normalize_float(F), normalize_fixed(F)
    assert a.degenerate == b.degenerate
    err = np.abs(a.values - b.values).max()
    if a.degenerate is Degenerate.NONE:
        # sigma is held to 2^-16; near-flat frames amplify that by F/(6 sigma^2)
        sigma_term = F.max() / 6 * abs(65536 / b.stats.sigma_raw - 1 / a.stats.sigma)
        assert err <= sigma_term + 2 ** -8
        if sigma_term <= 2 ** -8:
            assert err <= 2 ** -7
    else:
        assert err == 0
    assert fixed_stats(F).c == a.stats.c if F.any() else True


def test_variants():
    F = np.array(FIXTURE)
    sm = normalize_float(F, NormVariant(subtract_mean=True))
    sigma = math.sqrt(8)
    np.testing.assert_allclose(sm.values, (F - 4 + 3 * sigma) / (6 * sigma))
    nzv = compute_stats(F, NormVariant(variance_over_nonzero_only=True))
    assert nzv.sigma == pytest.approx(math.sqrt(8 / 3))
    for v in (NormVariant(subtract_mean=True), NormVariant(variance_over_nonzero_only=True)):
        assert np.abs(normalize_fixed(F, v).values - normalize_float(F, v).values).max() <= 2 ** -7
    assert NormVariant.from_name("nz-variance").variance_over_nonzero_only
    with pytest.raises(ValueError):
        NormVariant.from_name("minmax")


def test_accepts_event_histogram():
    h = EventHistogram.from_counts(FIXTURE, frame_seq=4)
    nf = normalize_fixed(h)
    assert nf.frame_seq == 4 and nf.nz_mask.tolist() == [[False, True], [True, True]]


def test_variance_saturation_is_flagged():
    F = np.zeros((64, 64), int)
    F[0, 0] = 2000  # variance ~ 4095 * 2000^2 overflows Q24.16
    nf = normalize_fixed(F)
    assert nf.stats.saturated


@pytest.mark.parametrize("args, cycles", [((1, 47, 47), 47), ((4096, 47, 47), 4142),
                                          ((1, 1, 1), 1), ((4096, 47, 22, 22), 4142),
                                          ((0, 47, 22), 0)])
def test_norm_pipeline_cycles(args, cycles):
    assert norm_pipeline_cycles(*args) == cycles


def simulate_lanes(n, latency, lanes, interval):
    """Cycle-by-cycle issue model: at most one pixel per cycle, to a free lane."""
    free_at = [0] * lanes
    cycle, done, lane = 0, 0, 0
    for _ in range(n):
        while free_at[lane] > cycle:
            cycle += 1
        free_at[lane] = cycle + interval
        done = max(done, cycle + latency)
        lane = (lane + 1) % lanes
        cycle += 1
    return done


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 300), st.integers(1, 60), st.integers(1, 60), st.data())
def test_norm_pipeline_cycles_vs_cycle_model(n, latency, lanes, data):
    interval = data.draw(st.integers(1, latency))
    assert norm_pipeline_cycles(n, latency, lanes, interval) == simulate_lanes(n, latency, lanes, interval)


def test_norm_lane_latency_matches_footnote():
    assert norm_pipeline_cycles(1, 47, 22) / 100e6 == pytest.approx(470e-9)
    assert norm_pipeline_cycles(1, 47, 22) / 60e6 == pytest.approx(783e-9, abs=1e-9)
    with pytest.raises(ValueError):
        norm_pipeline_cycles(10, 0, 1)


def test_nrm1_roundtrip():
    nf = normalize_fixed(EventHistogram.from_counts(FIXTURE, frame_seq=3))
    buf = io.BytesIO()
    write_normalized(nf, buf)
    raw = buf.getvalue()
    assert raw[:4] == b"NRM1" and len(raw) == 13 + 16
    back = read_normalized(raw)
    assert back.frame_seq == 3 and back.degenerate is Degenerate.NONE
    assert np.array_equal(back.raw, nf.raw)
