"""Angle estimation, IMM-EKF filtering and global-nearest-neighbour track management.

Tracks live in a 2-D ground plane: x east, y north, azimuth measured from the
y axis towards x (``az = atan2(x, y)``), matching the array steering
convention. Measurements are (range, radial velocity, azimuth in degrees),
radial velocity positive when receding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .detect.cfar import Detection
from .errors import AmbiguousAngle, ConfigError, InvalidArray, NonPsdCovariance
from .rdproc import doppler_spectrum
from .scene import PulseMatrix, RxArray

POS_VEL = 4  # x, y, vx, vy
FULL = 6  # plus ax, ay
ACCEL_PAD_VAR = 25.0  # (m/s^2)^2 assigned to acceleration when a 4-state model feeds a CA model
DEG = 180.0 / math.pi


# ---------------------------------------------------------------- angle


def estimate_azimuth(
    matrix: PulseMatrix,
    cell: tuple[int, int],
    array: RxArray,
    window: str = "hann",
    spectrum: np.ndarray | None = None,
) -> tuple[float, float]:
    """Azimuth (deg) and per-channel SNR (linear) of one range-Doppler cell.

    The inter-channel phase of the cell's Doppler bin is unwrapped by
    accumulating adjacent-element phase differences and fitted with a
    straight line; its slope is ``2 pi d sin(az)``. The quality is the cell
    power over a median-based noise estimate from the same range-Doppler
    plane, averaged over channels. ``spectrum`` may carry a precomputed
    :func:`doppler_spectrum` of ``matrix`` to avoid recomputing it per cell.
    """
    if array.num_channels < 2 or matrix.num_channels < 2:
        raise InvalidArray("angle estimation needs at least two channels")
    if array.num_channels != matrix.num_channels:
        raise InvalidArray("array does not match the channel count")
    if array.element_spacing > 0.5 + 1e-12:
        raise AmbiguousAngle(f"element spacing {array.element_spacing} wavelengths admits grating lobes")
    spec = doppler_spectrum(matrix, window) if spectrum is None else spectrum
    r, d = cell
    if not (0 <= r < spec.shape[0] and 0 <= d < spec.shape[1]):
        raise ConfigError(f"cell {cell} outside the map")
    a = spec[r, d, :]
    steps = np.angle(a[1:] * np.conj(a[:-1]))
    phase = np.concatenate([[0.0], np.cumsum(steps)])
    m = np.arange(array.num_channels, dtype=float)
    slope = np.polyfit(m, phase, 1)[0]
    s = np.clip(slope / (2.0 * np.pi * array.element_spacing), -1.0, 1.0)
    power = np.abs(spec) ** 2
    noise = np.median(power, axis=(0, 1)) / math.log(2.0)
    snr = float(np.mean(np.abs(a) ** 2 / np.maximum(noise, np.finfo(float).tiny)))
    return float(np.degrees(np.arcsin(s))), snr


def azimuth_std_deg(snr: float, array: RxArray, azimuth_deg: float = 0.0) -> float:
    """Cramer-Rao-style standard deviation of the phase-ramp azimuth estimate."""
    m = array.num_channels
    if m < 2 or snr <= 0:
        return 180.0
    slope_var = 6.0 / (m * (m * m - 1) * snr)
    cos_az = max(math.cos(math.radians(azimuth_deg)), 1e-3)
    return math.degrees(math.sqrt(slope_var) / (2.0 * math.pi * array.element_spacing * cos_az))


# ---------------------------------------------------------------- models


class MotionKind(enum.Enum):
    CONSTANT_VELOCITY = "constant_velocity"
    CONSTANT_ACCELERATION = "constant_acceleration"
    COORDINATED_TURN = "coordinated_turn"


@dataclass(frozen=True)
class MotionModel:
    kind: MotionKind
    process_noise: float  # white acceleration (CV/CT) or jerk (CA) spectral density
    turn_rate: float = 0.0  # rad/s, positive = counter-clockwise

    def __post_init__(self):
        if not self.process_noise > 0:
            raise ConfigError("process_noise must be positive")
        if not math.isfinite(self.turn_rate):
            raise ConfigError("turn_rate must be finite")

    @property
    def label(self) -> str:
        if self.kind is MotionKind.COORDINATED_TURN:
            return f"{self.kind.value}_{self.turn_rate:+g}"
        return self.kind.value

    @property
    def dim(self) -> int:
        return FULL if self.kind is MotionKind.CONSTANT_ACCELERATION else POS_VEL

    def transition(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        q = self.process_noise
        i2 = np.eye(2)
        if self.kind is MotionKind.CONSTANT_ACCELERATION:
            f1 = np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
            q1 = q * np.array([
                [dt ** 5 / 20, dt ** 4 / 8, dt ** 3 / 6],
                [dt ** 4 / 8, dt ** 3 / 3, dt ** 2 / 2],
                [dt ** 3 / 6, dt ** 2 / 2, dt],
            ])
            return np.kron(f1, i2), np.kron(q1, i2)
        q1 = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
        qm = np.kron(q1, i2)
        w = self.turn_rate if self.kind is MotionKind.COORDINATED_TURN else 0.0
        if abs(w * dt) < 1e-9:
            return np.kron(np.array([[1.0, dt], [0.0, 1.0]]), i2), qm
        s, c = math.sin(w * dt), math.cos(w * dt)
        f = np.array([
            [1.0, 0.0, s / w, -(1 - c) / w],
            [0.0, 1.0, (1 - c) / w, s / w],
            [0.0, 0.0, c, -s],
            [0.0, 0.0, s, c],
        ])
        return f, qm


def default_models(process_noise: float = 0.5, turn_rate: float = 0.1) -> list[MotionModel]:
    """CV plus left- and right-hand coordinated turns."""
    return [
        MotionModel(MotionKind.CONSTANT_VELOCITY, process_noise),
        MotionModel(MotionKind.COORDINATED_TURN, process_noise, turn_rate),
        MotionModel(MotionKind.COORDINATED_TURN, process_noise, -turn_rate),
    ]


def sticky_transition(n: int, stay: float = 0.95) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    t = np.full((n, n), (1.0 - stay) / (n - 1))
    np.fill_diagonal(t, stay)
    return t


# ---------------------------------------------------------------- measurements


@dataclass(frozen=True)
class Measurement:
    range: float
    radial_velocity: float
    azimuth: float  # deg
    noise_cov: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.noise_cov, dtype=float)
        if r.shape != (3, 3) or not np.allclose(r, r.T) or np.any(np.linalg.eigvalsh(r) <= 0):
            raise ConfigError("noise_cov must be a symmetric positive definite 3x3 matrix")
        object.__setattr__(self, "noise_cov", r)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.range, self.radial_velocity, self.azimuth])


def measurement_cov(range_std: float, velocity_std: float, azimuth_std_deg: float) -> np.ndarray:
    return np.diag([range_std ** 2, velocity_std ** 2, azimuth_std_deg ** 2])


def measurement_from_detection(det: Detection, azimuth: float, noise_cov: np.ndarray,
                               timestamp: float = 0.0) -> Measurement:
    return Measurement(det.range_m, det.velocity_mps, azimuth, noise_cov, timestamp)


def measure(state: np.ndarray) -> np.ndarray:
    """h(state) = (range, radial velocity, azimuth deg)."""
    x, y, vx, vy = state[:4]
    r = math.hypot(x, y)
    return np.array([r, (x * vx + y * vy) / r, math.atan2(x, y) * DEG])


def measure_jacobian(state: np.ndarray) -> np.ndarray:
    x, y, vx, vy = state[:4]
    r2 = x * x + y * y
    r = math.sqrt(r2)
    if r < 1e-9:
        raise NonPsdCovariance("measurement map is singular at the sensor origin")
    r3 = r2 * r
    cross = vx * y - vy * x
    h = np.zeros((3, len(state)))
    h[0, :2] = [x / r, y / r]
    h[1, :4] = [y * cross / r3, -x * cross / r3, x / r, y / r]
    h[2, :2] = [y / r2 * DEG, -x / r2 * DEG]
    return h


def _wrap_deg(a: np.ndarray) -> np.ndarray:
    return (a + 180.0) % 360.0 - 180.0


def _innovation(z: np.ndarray, zp: np.ndarray) -> np.ndarray:
    y = z - zp
    y[2] = _wrap_deg(y[2])
    return y


def state_from_measurement(meas: Measurement, speed_std: float = 15.0) -> tuple[np.ndarray, np.ndarray]:
    """Single-point initialisation: radial velocity along the line of sight, broad cross-range velocity."""
    r, vr, az = meas.vector
    a = math.radians(az)
    u = np.array([math.sin(a), math.cos(a)])  # line of sight
    n = np.array([math.cos(a), -math.sin(a)])  # cross-range direction
    pos = r * u
    vel = vr * u
    jp = np.column_stack([u, r * n / DEG])  # d(pos)/d(range, az_deg)
    rp = np.array([[meas.noise_cov[0, 0], meas.noise_cov[0, 2]], [meas.noise_cov[2, 0], meas.noise_cov[2, 2]]])
    p = np.zeros((POS_VEL, POS_VEL))
    p[:2, :2] = jp @ rp @ jp.T
    p[2:, 2:] = meas.noise_cov[1, 1] * np.outer(u, u) + speed_std ** 2 * np.outer(n, n)
    return np.concatenate([pos, vel]), p


# ---------------------------------------------------------------- IMM


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    COASTING = "coasting"
    DROPPED = "dropped"


@dataclass
class TrackState:
    models: list[MotionModel]
    means: list[np.ndarray]  # per model, length model.dim
    covariances: list[np.ndarray]
    model_probabilities: np.ndarray
    transition_matrix: np.ndarray
    id: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    timestamp: float = 0.0
    hits: list[bool] = field(default_factory=list)
    misses: int = 0

    def __post_init__(self):
        n = len(self.models)
        if not (len(self.means) == len(self.covariances) == n == len(self.model_probabilities)):
            raise ConfigError("per-model arrays must match the model list")
        t = np.asarray(self.transition_matrix, dtype=float)
        if t.shape != (n, n) or np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0):
            raise ConfigError("transition_matrix must be row-stochastic")
        self.transition_matrix = t

    @classmethod
    def from_measurement(cls, meas: Measurement, models: list[MotionModel] | None = None,
                         transition: np.ndarray | None = None, track_id: int = 0,
                         speed_std: float = 15.0) -> "TrackState":
        models = default_models() if models is None else list(models)
        x4, p4 = state_from_measurement(meas, speed_std)
        means = [_resize_mean(x4, m.dim) for m in models]
        covs = [_resize_cov(p4, m.dim) for m in models]
        probs = np.full(len(models), 1.0 / len(models))
        t = sticky_transition(len(models)) if transition is None else transition
        return cls(models, means, covs, probs, t, track_id, TrackStatus.TENTATIVE, meas.timestamp, [True], 0)

    @property
    def state(self) -> np.ndarray:
        """Moment-matched (x, y, vx, vy)."""
        return sum(p * m[:POS_VEL] for p, m in zip(self.model_probabilities, self.means))

    @property
    def covariance(self) -> np.ndarray:
        x = self.state
        out = np.zeros((POS_VEL, POS_VEL))
        for p, m, c in zip(self.model_probabilities, self.means, self.covariances):
            d = m[:POS_VEL] - x
            out += p * (c[:POS_VEL, :POS_VEL] + np.outer(d, d))
        return out

    @property
    def dominant_model(self) -> int:
        return int(np.argmax(self.model_probabilities))


def _resize_mean(x: np.ndarray, dim: int) -> np.ndarray:
    if len(x) >= dim:
        return x[:dim].copy()
    return np.concatenate([x, np.zeros(dim - len(x))])


def _resize_cov(p: np.ndarray, dim: int) -> np.ndarray:
    if len(p) >= dim:
        return p[:dim, :dim].copy()
    out = np.zeros((dim, dim))
    out[:len(p), :len(p)] = p
    idx = np.arange(len(p), dim)
    out[idx, idx] = ACCEL_PAD_VAR
    return out


def _checked(p: np.ndarray) -> np.ndarray:
    """Symmetrise and verify positive definiteness (one retry after symmetrising)."""
    try:
        np.linalg.cholesky(p)
        if np.allclose(p, p.T, rtol=1e-9, atol=1e-12):
            return 0.5 * (p + p.T)
    except np.linalg.LinAlgError:
        pass
    q = 0.5 * (p + p.T)
    try:
        np.linalg.cholesky(q)
    except np.linalg.LinAlgError as exc:
        raise NonPsdCovariance("covariance lost positive definiteness") from exc
    return q


def _mix(track: TrackState) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    mu = np.asarray(track.model_probabilities, dtype=float)
    t = track.transition_matrix
    c = mu @ t  # predicted model probabilities
    w = (t * mu[:, None]) / np.where(c > 0, c, 1.0)[None, :]  # w[i, j] = P(i | j)
    means, covs = [], []
    for j, model in enumerate(track.models):
        xs = [_resize_mean(m, model.dim) for m in track.means]
        ps = [_resize_cov(p, model.dim) for p in track.covariances]
        x0 = sum(w[i, j] * xs[i] for i in range(len(xs)))
        p0 = sum(w[i, j] * (ps[i] + np.outer(xs[i] - x0, xs[i] - x0)) for i in range(len(xs)))
        means.append(x0)
        covs.append(p0)
    return means, covs, c


def _predict(track: TrackState, dt: float):
    means, covs, c = _mix(track)
    out_m, out_p = [], []
    for model, x, p in zip(track.models, means, covs):
        f, q = model.transition(dt)
        out_m.append(f @ x)
        out_p.append(_checked(f @ p @ f.T + q))
    return out_m, out_p, c


def _combine(means, covs, probs) -> tuple[np.ndarray, np.ndarray]:
    x = sum(p * m[:POS_VEL] for p, m in zip(probs, means))
    out = np.zeros((POS_VEL, POS_VEL))
    for p, m, c in zip(probs, means, covs):
        d = m[:POS_VEL] - x
        out += p * (c[:POS_VEL, :POS_VEL] + np.outer(d, d))
    return x, out


def predicted_measurement(track: TrackState, dt: float, noise_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """IMM-predicted measurement and innovation covariance (used for gating)."""
    means, covs, c = _predict(track, dt)
    x, p = _combine(means, covs, c)
    h = measure_jacobian(x)
    return measure(x), h @ p @ h.T + noise_cov


def imm_step(track: TrackState, measurement: Measurement | None, dt: float) -> TrackState:
    """One IMM-EKF cycle. Without a measurement the track is predicted only and marked coasting."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    means, covs, c = _predict(track, dt)
    if measurement is None:
        status = TrackStatus.COASTING if track.status in (TrackStatus.CONFIRMED, TrackStatus.COASTING) else track.status
        return replace(track, means=means, covariances=covs, model_probabilities=c,
                       timestamp=track.timestamp + dt, status=status)

    z = measurement.vector
    r = measurement.noise_cov
    logl = np.empty(len(track.models))
    new_m, new_p = [], []
    for j, (x, p) in enumerate(zip(means, covs)):
        h = measure_jacobian(x)
        s = _checked(h @ p @ h.T + r)
        y = _innovation(z, measure(x))
        k = np.linalg.solve(s, h @ p).T  # P H^T S^-1 (S symmetric)
        ikh = np.eye(len(x)) - k @ h
        new_m.append(x + k @ y)
        new_p.append(_checked(ikh @ p @ ikh.T + k @ r @ k.T))
        _, logdet = np.linalg.slogdet(s)
        logl[j] = -0.5 * (y @ np.linalg.solve(s, y) + logdet + 3.0 * math.log(2.0 * math.pi))
    with np.errstate(divide="ignore"):
        logpost = logl + np.log(c)
    probs = np.exp(logpost - logsumexp(logpost))
    probs /= probs.sum()
    return replace(track, means=new_m, covariances=new_p, model_probabilities=probs,
                   timestamp=measurement.timestamp if measurement.timestamp else track.timestamp + dt)


# ---------------------------------------------------------------- association and management


@dataclass
class Association:
    pairs: list[tuple[int, int]]  # (track index, measurement index)
    unassigned_tracks: list[int]
    unassigned_measurements: list[int]
    cost: float = 0.0


def mahalanobis_matrix(measurements: list[Measurement], tracks: list[TrackState], dt: float) -> np.ndarray:
    """Squared Mahalanobis distance of every measurement to every track's IMM prediction."""
    d2 = np.full((len(tracks), len(measurements)), np.inf)
    if not measurements:
        return d2
    z = np.array([m.vector for m in measurements])
    r = np.array([m.noise_cov for m in measurements])
    for i, trk in enumerate(tracks):
        zp, s0 = predicted_measurement(trk, dt, np.zeros((3, 3)))
        y = z - zp
        y[:, 2] = _wrap_deg(y[:, 2])
        s = s0[None] + r
        d2[i] = np.einsum("mi,mi->m", y, np.linalg.solve(s, y[..., None])[..., 0])
    return d2


def associate(measurements: list[Measurement], tracks: list[TrackState], gate: float = 16.27,
              dt: float = 1.0) -> Association:
    """Global nearest neighbour on squared Mahalanobis distance; pairs beyond ``gate`` are rejected.

    The default gate is the chi-square 99.9 % point for three degrees of freedom.
    """
    nt, nm = len(tracks), len(measurements)
    if nt == 0 or nm == 0:
        return Association([], list(range(nt)), list(range(nm)))
    d2 = mahalanobis_matrix(measurements, tracks, dt)
    big = 1e12
    cost = np.where(d2 <= gate, d2, big)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if d2[i, j] <= gate]
    used_t = {i for i, _ in pairs}
    used_m = {j for _, j in pairs}
    total = float(sum(d2[i, j] for i, j in pairs))
    return Association(pairs, [i for i in range(nt) if i not in used_t],
                       [j for j in range(nm) if j not in used_m], total)


@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 16.27
    confirm_hits: int = 2
    confirm_window: int = 3
    max_misses: int = 5
    process_noise: float = 0.5
    turn_rate: float = 0.1
    stay_probability: float = 0.95
    init_speed_std: float = 15.0

    def __post_init__(self):
        if not 1 <= self.confirm_hits <= self.confirm_window:
            raise ConfigError("confirm_hits must lie in [1, confirm_window]")
        if self.max_misses < 1:
            raise ConfigError("max_misses must be at least 1")
        if not 0 < self.stay_probability <= 1:
            raise ConfigError("stay_probability must lie in (0, 1]")


@dataclass
class TrackRecord:
    timestamp: float
    id: int
    state: np.ndarray
    status: TrackStatus
    dominant: int
    probabilities: np.ndarray


class Tracker:
    """Per-scan track management: associate, update, confirm M-of-N, drop after repeated misses."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), models: list[MotionModel] | None = None):
        self.cfg = cfg
        self.models = default_models(cfg.process_noise, cfg.turn_rate) if models is None else list(models)
        self.transition = sticky_transition(len(self.models), cfg.stay_probability)
        self.tracks: list[TrackState] = []
        self.history: list[TrackRecord] = []
        self._next_id = 1
        self._time: float | None = None

    def _bookkeep(self, trk: TrackState, hit: bool) -> TrackState:
        hits = (trk.hits + [hit])[-self.cfg.confirm_window:]
        misses = 0 if hit else trk.misses + 1
        status = trk.status
        if hit and sum(hits) >= self.cfg.confirm_hits:
            status = TrackStatus.CONFIRMED
        elif not hit and status in (TrackStatus.CONFIRMED, TrackStatus.COASTING):
            status = TrackStatus.COASTING
        elif hit and status is TrackStatus.COASTING:
            status = TrackStatus.CONFIRMED
        if misses >= self.cfg.max_misses:
            status = TrackStatus.DROPPED
        elif status is TrackStatus.TENTATIVE and len(hits) >= self.cfg.confirm_window \
                and sum(hits) < self.cfg.confirm_hits:
            status = TrackStatus.DROPPED
        return replace(trk, hits=hits, misses=misses, status=status)

    def step(self, measurements: list[Measurement], timestamp: float) -> list[TrackState]:
        dt = 1.0 if self._time is None else timestamp - self._time
        if self._time is not None and not dt > 0:
            raise ConfigError("scan timestamps must increase")
        self._time = timestamp
        assoc = associate(measurements, self.tracks, self.cfg.gate, dt)
        updated = []
        matched = dict(assoc.pairs)
        for i, trk in enumerate(self.tracks):
            if i in matched:
                new = imm_step(trk, measurements[matched[i]], dt)
                new = self._bookkeep(new, True)
            else:
                new = self._bookkeep(imm_step(trk, None, dt), False)
            new.timestamp = timestamp
            if new.status is not TrackStatus.DROPPED:
                updated.append(new)
        for j in assoc.unassigned_measurements:
            trk = TrackState.from_measurement(measurements[j], self.models, self.transition,
                                              self._next_id, self.cfg.init_speed_std)
            trk.timestamp = timestamp
            self._next_id += 1
            updated.append(trk)
        self.tracks = updated
        for trk in updated:
            self.history.append(TrackRecord(timestamp, trk.id, trk.state.copy(), trk.status,
                                            trk.dominant_model, trk.model_probabilities.copy()))
        return updated

    def confirmed(self) -> list[TrackState]:
        return [t for t in self.tracks if t.status in (TrackStatus.CONFIRMED, TrackStatus.COASTING)]

    def history_csv(self) -> str:
        names = [f"p_{m.label}" for m in self.models]
        lines = ["timestamp,id,status,x,y,vx,vy,dominant_model," + ",".join(names)]
        for rec in self.history:
            x, y, vx, vy = rec.state
            probs = ",".join(f"{p:.6f}" for p in rec.probabilities)
            lines.append(f"{rec.timestamp:.6f},{rec.id},{rec.status.value},{x:.6f},{y:.6f},{vx:.6f},{vy:.6f},"
                         f"{self.models[rec.dominant].label},{probs}")
        return "\n".join(lines) + "\n"
