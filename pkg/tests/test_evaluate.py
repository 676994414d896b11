import numpy as np
import pytest

from thermoresp.errors import AlignmentError, InsufficientDataError
from thermoresp.evaluate import agreement, macc_align, xcorr_lag
from thermoresp.rate import RateEntry, RateSeries
from thermoresp.respsig import RespirationSignal


def breathing_like(n, fs=256.0, seed=0, f0=0.25):
    """Breathing-ish trial: rate and depth wander (so the correlation peak
    is unambiguous), and the recording starts/ends quiet (tapered ends,
    zero mean) so a delayed copy's zero padding matches the continuation."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    f_inst = f0 * (1.0 + 0.25 * np.sin(2 * np.pi * 0.011 * t + rng.uniform(0, 6.28)))
    phase = 2 * np.pi * np.cumsum(f_inst) / fs
    envelope = 1.0 + 0.35 * np.sin(2 * np.pi * 0.017 * t + rng.uniform(0, 6.28))
    # inhale/exhale asymmetry (harmonics) and a small sensor floor keep the
    # autocorrelation peak sharp, like a real belt recording
    x = envelope * (np.sin(phase) + 0.35 * np.sin(2 * phase) + 0.2 * np.sin(3 * phase))
    x += rng.normal(0.0, 0.05, n)
    fade = min(n // 4, int(12 * fs))
    ramp = 0.5 * (1 - np.cos(np.pi * np.arange(fade) / fade))
    x[:fade] *= ramp
    x[-fade:] *= ramp[::-1]
    return x - x.mean()


def delayed_copy(x: np.ndarray, shift: int) -> np.ndarray:
    """x delayed by ``shift`` samples (zero-padded), same length."""
    out = np.zeros_like(x)
    if shift >= 0:
        out[shift:] = x[: len(x) - shift]
    else:
        out[:shift] = x[-shift:]
    return out


def series(bpms, rsqi=1.0, t0=10.0, hop=5.0, valid=None):
    entries = []
    for i, b in enumerate(bpms):
        ok = valid[i] if valid is not None else True
        entries.append(RateEntry(t0 + hop * i, float(b), rsqi, ok))
    return RateSeries(entries)


class TestMaccAlign:
    def test_identity_lag_zero(self):
        x = breathing_like(256 * 60)
        sig = RespirationSignal(x, fs=256.0)
        pair = macc_align(sig, RespirationSignal(x.copy(), fs=256.0))
        assert pair.lag == 0
        assert np.array_equal(pair.reference.samples, pair.estimate.samples)

    def test_constructed_delay_recovered_exactly(self):
        ref = breathing_like(256 * 60, seed=1)
        shift = 512  # 2.0 s
        est = delayed_copy(ref, shift)
        pair = macc_align(
            RespirationSignal(ref, fs=256.0), RespirationSignal(est, fs=256.0)
        )
        assert pair.lag == shift
        assert np.allclose(pair.reference.samples, pair.estimate.samples)

    def test_noisy_shift_within_two_samples(self):
        rng = np.random.default_rng(2)
        ref = breathing_like(256 * 60, seed=3)
        shift = 300
        est = delayed_copy(ref, shift)
        sigma = np.sqrt(np.var(ref) / 10.0)  # SNR 10 dB
        est = est + rng.normal(0, sigma, len(est))
        pair = macc_align(
            RespirationSignal(ref, fs=256.0), RespirationSignal(est, fs=256.0)
        )
        assert abs(pair.lag - shift) <= 2

    def test_rate_mismatch_rejected(self):
        a = RespirationSignal(breathing_like(2048), fs=256.0)
        b = RespirationSignal(breathing_like(2048), fs=128.0)
        with pytest.raises(ValueError, match="rates"):
            macc_align(a, b)

    def test_insufficient_overlap(self):
        x = breathing_like(256 * 21)
        # a shift of ~15 s on a 21 s signal leaves < 20 s of overlap
        ref = RespirationSignal(x, fs=256.0)
        est = RespirationSignal(delayed_copy(x, 256 * 15), fs=256.0)
        with pytest.raises(AlignmentError, match="overlap"):
            macc_align(ref, est)


def test_xcorr_lag_sign_convention():
    ref = np.zeros(100)
    ref[50] = 1.0
    est = np.zeros(100)
    est[57] = 1.0  # est delayed by 7: est[n] = ref[n - 7]
    assert xcorr_lag(ref, est) == 7


class TestAgreement:
    def test_identity(self):
        ref = series([12.0, 14.0, 16.0, 18.0])
        rep = agreement(ref, series([12.0, 14.0, 16.0, 18.0]), 0.5)
        assert rep.bias == 0.0
        assert rep.loa_lo == rep.loa_hi == 0.0
        assert rep.rmse == 0.0
        assert not rep.degenerate_r  # both sides vary

    def test_identity_constant_degenerate_r(self):
        rep = agreement(series([15.0] * 4), series([15.0] * 4), 0.5)
        assert rep.rmse == 0.0
        assert rep.degenerate_r
        assert np.isnan(rep.pearson_r)

    def test_alternating_differences_hand_computed(self):
        ref = series([15.0, 15.0, 15.0, 15.0])
        est = series([16.0, 14.0, 16.0, 14.0])  # diffs +1,-1,+1,-1
        rep = agreement(ref, est, 0.5)
        sd = 2.0 / np.sqrt(3.0)  # n-1 denominator
        assert rep.bias == pytest.approx(0.0)
        assert rep.loa_hi == pytest.approx(1.96 * sd)
        assert rep.loa_hi == pytest.approx(2.2632, abs=5e-4)
        assert rep.rmse == pytest.approx(1.0)

    def test_rsqi_cutoff_excludes(self):
        entries_ref = [
            RateEntry(10.0, 15.0, 0.99, True),
            RateEntry(15.0, 15.0, 0.90, True),  # below cutoff
            RateEntry(20.0, 15.0, 0.99, True),
            RateEntry(25.0, 15.0, 0.99, True),
        ]
        est = series([15.0, 99.0, 15.0, 15.0])
        rep = agreement(RateSeries(entries_ref), est, 0.98)
        assert rep.n_windows == 3
        assert rep.rmse == 0.0  # the wild window was excluded

    def test_invalid_windows_excluded(self):
        ref = series([15.0, 15.0, 15.0, 15.0])
        est = series([15.0, 15.0, 15.0, 40.0], valid=[True, True, True, False])
        rep = agreement(ref, est, 0.5)
        assert rep.n_windows == 3

    def test_insufficient_pairs(self):
        with pytest.raises(InsufficientDataError):
            agreement(series([15.0, 15.0]), series([15.0, 15.0]), 0.5)

    def test_mismatched_centers_rejected(self):
        a = series([15.0] * 4, t0=10.0)
        b = series([15.0] * 4, t0=12.0)
        with pytest.raises(ValueError, match="centers"):
            agreement(a, b, 0.5)

    def test_constant_offset_shifts_bias_only(self):
        rng = np.random.default_rng(4)
        base = 15.0 + rng.normal(0, 1.0, 8)
        est = base + rng.normal(0, 0.3, 8)
        r1 = agreement(series(base), series(est), 0.0)
        r2 = agreement(series(base), series(est + 2.5), 0.0)
        assert r2.bias == pytest.approx(r1.bias + 2.5)
        assert (r2.loa_hi - r2.loa_lo) == pytest.approx(r1.loa_hi - r1.loa_lo)
