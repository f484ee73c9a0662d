import itertools
import math

import numpy as np
import pytest

from isacsim.errors import AmbiguousAngle, ConfigError, InvalidArray
from isacsim.scene import Origin, PulseMatrix, RxArray
from isacsim.track import (
    MotionKind, MotionModel, Measurement, TrackState, TrackStatus, Tracker, TrackerConfig, associate,
    azimuth_std_deg, estimate_azimuth, imm_step, mahalanobis_matrix, measure, measure_jacobian,
    measurement_cov, sticky_transition,
)

DT = 0.64
R_COV = measurement_cov(2.0, 0.1, 0.1)


def cv(q=0.5):
    return MotionModel(MotionKind.CONSTANT_VELOCITY, q)


def array_cell(az_deg, snr_db, rng, array=RxArray(4), n=32):
    """Compressed 3-range-bin matrix with a DC tone at (1, n // 2) of the given per-channel map SNR."""
    w = np.hanning(n + 1)[:-1]
    amp = math.sqrt(10 ** (snr_db / 10) * np.sum(w ** 2)) / w.sum()
    x = (rng.standard_normal((3, n, array.num_channels)) + 1j * rng.standard_normal((3, n, array.num_channels)))
    x /= math.sqrt(2)
    x[1] += amp * array.steering([az_deg])[0][None, :]
    return PulseMatrix(x, 122.88e6, np.arange(n) * 2.5e-3, origin=Origin.COMPRESSED)


def test_azimuth_broadside(rng):
    est, snr = estimate_azimuth(array_cell(0.0, 20.0, rng), (1, 16), RxArray(4))
    assert est == pytest.approx(0.0, abs=0.5)
    assert 10 * math.log10(snr) == pytest.approx(20.0, abs=3.0)


def test_azimuth_twenty_degrees_monte_carlo(rng):
    est = [estimate_azimuth(array_cell(20.0, 20.0, rng), (1, 16), RxArray(4))[0] for _ in range(200)]
    assert np.mean(est) == pytest.approx(20.0, abs=1.0)
    # Spread consistent with the phase-ramp bound at 20 dB.
    assert np.std(est) < 3 * azimuth_std_deg(100.0, RxArray(4), 20.0)


def test_azimuth_contract_errors(rng):
    with pytest.raises(InvalidArray):
        estimate_azimuth(array_cell(0.0, 20.0, rng, RxArray(1)), (1, 16), RxArray(1))
    with pytest.raises(AmbiguousAngle):
        estimate_azimuth(array_cell(0.0, 20.0, rng, RxArray(4, 0.8)), (1, 16), RxArray(4, 0.8))


def test_measure_jacobian_matches_finite_differences(rng):
    x = np.array([120.0, 900.0, 3.0, -7.0])
    h = measure_jacobian(x)
    eps = 1e-6
    num = np.column_stack([(measure(x + eps * e) - measure(x - eps * e)) / (2 * eps) for e in np.eye(4)])
    assert np.allclose(h, num, rtol=1e-6, atol=1e-8)


def ekf_reference(z0, zs, q, dt):
    """Plain single-model EKF written independently of the IMM machinery."""
    first = TrackState.from_measurement(Measurement(*z0, R_COV), [cv(q)])
    x, p = first.means[0].copy(), first.covariances[0].copy()
    f = np.kron(np.array([[1.0, dt], [0.0, 1.0]]), np.eye(2))
    qm = q * np.kron(np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]]), np.eye(2))
    out = []
    for z in zs:
        x = f @ x
        p = f @ p @ f.T + qm
        r = math.hypot(x[0], x[1])
        hx = np.array([r, (x[0] * x[2] + x[1] * x[3]) / r, math.degrees(math.atan2(x[0], x[1]))])
        h = measure_jacobian(x)
        s = h @ p @ h.T + R_COV
        k = p @ h.T @ np.linalg.inv(s)
        y = np.asarray(z) - hx
        y[2] = (y[2] + 180) % 360 - 180
        x = x + k @ y
        a = np.eye(4) - k @ h
        p = a @ p @ a.T + k @ R_COV @ k.T
        out.append(x.copy())
    return out


def straight_track(n, rng, noise=True):
    x = np.array([-50.0, 800.0, 6.0, 2.0])
    zs = []
    for _ in range(n):
        z = measure(x)
        if noise:
            z = z + rng.multivariate_normal(np.zeros(3), R_COV)
        zs.append(z)
        x = x.copy()
        x[:2] += DT * x[2:]
    return zs


def test_identical_models_reduce_to_single_ekf(rng):
    zs = straight_track(30, rng)
    ref = ekf_reference(zs[0], zs[1:], 0.5, DT)
    trk = TrackState.from_measurement(Measurement(*zs[0], R_COV), [cv(), cv()], np.full((2, 2), 0.5))
    for z, expected in zip(zs[1:], ref):
        trk = imm_step(trk, Measurement(*z, R_COV), DT)
        assert np.max(np.abs(trk.state - expected)) < 1e-9
        assert np.allclose(trk.model_probabilities, 0.5, atol=1e-12)


def test_noiseless_cv_converges_monotonically(rng):
    truth = np.array([-50.0, 800.0, 6.0, 2.0])
    tiny = measurement_cov(1e-4, 1e-5, 1e-5)
    zs = [measure(truth + k * DT * np.r_[truth[2:], 0, 0]) for k in range(40)]
    trk = TrackState.from_measurement(Measurement(*zs[0], tiny), [cv(1e-6)])
    err = []
    for k, z in enumerate(zs[1:], start=1):
        trk = imm_step(trk, Measurement(*z, tiny), DT)
        pos = truth[:2] + k * DT * truth[2:]
        err.append(np.hypot(*(trk.state[:2] - pos)))
    tail = np.array(err[9:])
    assert np.all(np.diff(tail) <= 1e-9 + 1e-6 * tail[:-1])
    assert err[-1] < 1e-2
    assert err[19] < 0.01 * 800


def turn_truth(n_cv=20, n_turn=25, n_after=15, w=0.1, speed=10.0):
    x = np.array([-150.0, 1000.0, speed, 0.0])
    out, turning = [], []
    for k in range(n_cv + n_turn + n_after):
        out.append(x.copy())
        on = n_cv <= k < n_cv + n_turn
        turning.append(on)
        f, _ = MotionModel(MotionKind.COORDINATED_TURN, 1e-9, w if on else 0.0).transition(DT)
        x = f @ x
    return np.array(out), np.array(turning)


def run_turn(seed):
    rng = np.random.default_rng(seed)
    truth, turning = turn_truth()
    zs = [measure(x) + rng.multivariate_normal(np.zeros(3), R_COV) for x in truth]
    trk = TrackState.from_measurement(Measurement(*zs[0], R_COV, 0.0))
    err, ct = [], []
    for k in range(1, len(truth)):
        trk = imm_step(trk, Measurement(*zs[k], R_COV, k * DT), DT)
        err.append(np.hypot(*(trk.state[:2] - truth[k, :2])))
        ct.append(sum(p for m, p in zip(trk.models, trk.model_probabilities)
                      if m.kind is MotionKind.COORDINATED_TURN))
    ct = np.array(ct)
    return math.sqrt(np.mean(np.square(err[5:]))), ct[turning[1:]].mean()


def test_turn_favours_coordinated_turn_models():
    results = np.array([run_turn(s) for s in range(100)])
    assert np.mean(results[:, 1] > 0.5) > 0.5
    assert results[:, 0].mean() <= 3 * 2.0


def test_simplex_and_positive_definite_over_random_steps():
    rng = np.random.default_rng(99)
    models = [cv(), MotionModel(MotionKind.CONSTANT_ACCELERATION, 0.2),
              MotionModel(MotionKind.COORDINATED_TURN, 0.5, 0.2)]
    steps = 0
    while steps < 10_000:
        truth = np.array([rng.uniform(-500, 500), rng.uniform(200, 1500), *rng.normal(0, 5, 2)])
        trk = TrackState.from_measurement(Measurement(*measure(truth), R_COV), models)
        for _ in range(200):
            dt = rng.uniform(0.05, 2.0)
            truth[:2] += dt * truth[2:]
            truth[2:] += rng.normal(0, 0.5, 2)
            meas = None if rng.random() < 0.2 else Measurement(
                *(measure(truth) + rng.multivariate_normal(np.zeros(3), R_COV)), R_COV)
            trk = imm_step(trk, meas, dt)
            steps += 1
            assert abs(trk.model_probabilities.sum() - 1) < 1e-9
            assert np.all(trk.model_probabilities >= 0)
            for p in trk.covariances:
                assert np.allclose(p, p.T)
                assert np.linalg.eigvalsh(p).min() > 0


def make_track(pos, vel, track_id):
    x = np.array([*pos, *vel])
    trk = TrackState.from_measurement(Measurement(*measure(x), R_COV), [cv()], track_id=track_id)
    trk.means[0] = x.copy()
    trk.covariances[0] = np.diag([4.0, 4.0, 1.0, 1.0])
    return trk


def test_single_track_single_detection_assigned():
    trk = make_track((0, 1000), (0, 5), 1)
    z = measure(np.array([0.0, 1000 + 5 * DT, 0.0, 5.0]))
    a = associate([Measurement(*z, R_COV)], [trk], dt=DT)
    assert a.pairs == [(0, 0)] and a.unassigned_measurements == []


def test_global_assignment_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(50):
        tracks = [make_track((rng.uniform(-30, 30), 1000 + rng.uniform(-30, 30)), rng.normal(0, 3, 2), i)
                  for i in range(2)]
        meas = [Measurement(*(measure(np.array([rng.uniform(-30, 30), 1000 + rng.uniform(-30, 30), 0, 0]))), R_COV)
                for _ in range(2)]
        d2 = mahalanobis_matrix(meas, tracks, DT)
        a = associate(meas, tracks, gate=math.inf, dt=DT)
        best = min(itertools.permutations(range(2)), key=lambda p: d2[0, p[0]] + d2[1, p[1]])
        assert a.cost == pytest.approx(d2[0, best[0]] + d2[1, best[1]], rel=1e-12)
        assert sorted(a.pairs) == [(0, best[0]), (1, best[1])]


def test_detection_outside_gate_spawns_tentative_track():
    tracker = Tracker(TrackerConfig())
    tracker.step([Measurement(1000.0, 0.0, 0.0, R_COV)], 0.0)
    tracks = tracker.step([Measurement(1000.0, 0.0, 0.0, R_COV), Measurement(400.0, 1.0, -30.0, R_COV)], DT)
    assert len(tracks) == 2
    assert tracks[0].status is TrackStatus.CONFIRMED
    assert tracks[1].status is TrackStatus.TENTATIVE and tracks[1].id == 2


def test_track_dropped_after_misses():
    tracker = Tracker(TrackerConfig(max_misses=5))
    tracker.step([Measurement(1000.0, 0.0, 0.0, R_COV)], 0.0)
    tracker.step([Measurement(1000.0, 0.0, 0.0, R_COV)], DT)
    for k in range(2, 6):
        tracker.step([], k * DT)
        assert tracker.tracks[0].status is TrackStatus.COASTING
    tracker.step([], 6 * DT)
    assert tracker.tracks == []
    header = tracker.history_csv().splitlines()[0]
    assert header.endswith("dominant_model,p_constant_velocity,p_coordinated_turn_+0.1,p_coordinated_turn_-0.1")


def test_validation():
    with pytest.raises(ConfigError):
        MotionModel(MotionKind.CONSTANT_VELOCITY, 0.0)
    with pytest.raises(ConfigError):
        Measurement(1.0, 0.0, 0.0, -np.eye(3))
    with pytest.raises(ConfigError):
        imm_step(make_track((0, 100), (0, 0), 1), None, 0.0)
    with pytest.raises(ConfigError):
        TrackerConfig(confirm_hits=4, confirm_window=3)
    assert np.allclose(sticky_transition(3).sum(axis=1), 1.0)
    tracker = Tracker()
    tracker.step([], 1.0)
    with pytest.raises(ConfigError):
        tracker.step([], 0.5)
