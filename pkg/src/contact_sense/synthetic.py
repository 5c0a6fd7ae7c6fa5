"""Synthetic 7-joint recordings with spring-damper contact transients.

The robot is reduced to a point mass moving along the contact normal under
an impedance controller that tracks a desired approach/press/retract profile.
On contact the object pushes back with a Kelvin-Voigt force
``max(0, k*p + c*dp)`` for penetration ``p > 0``. The normal-direction
tracking error and contact force are mapped to joint space through
per-setup direction vectors and laid over a smooth base joint trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import NUM_JOINTS, PERIOD_MS, ClassLabel, Recording

STIFFNESS_RATIOS = {ClassLabel.HUMAN: 1.0, ClassLabel.PVC: 34.0, ClassLabel.ALUMINUM: 680.0}

# Contacts per class in the training / validation split.
TRAIN_CONTACTS = {ClassLabel.HUMAN: 84, ClassLabel.ALUMINUM: 81, ClassLabel.PVC: 90}
VAL_CONTACTS = {ClassLabel.HUMAN: 54, ClassLabel.ALUMINUM: 27, ClassLabel.PVC: 39}


def _default_stiffness() -> dict:
    base = 400.0
    return {label: base * ratio for label, ratio in STIFFNESS_RATIOS.items()}


def _default_damping() -> dict:
    # damping ratio 0.9 against the effective mass of 4 kg
    return {label: 2.0 * 0.9 * math.sqrt(k * 4.0) for label, k in _default_stiffness().items()}


@dataclass(frozen=True)
class SyntheticConfig:
    stiffness: dict = field(default_factory=_default_stiffness)  # N/m per class
    damping: dict = field(default_factory=_default_damping)  # N*s/m per class
    noise_std: float = 0.01  # fraction of the nominal channel range (NOMINAL_RANGE)
    num_recordings: int = 85
    class_counts: dict | None = None  # recordings per class; default follows the reported class proportions
    contacts_per_recording: int = 3
    num_motions: int = 5
    setups_per_motion: tuple[int, int] = (2, 3)
    approach_speed: tuple[float, float] = (0.08, 0.16)  # m/s
    stiffness_jitter: float = 0.1  # relative per-recording spread of k and c
    effective_mass: float = 4.0  # kg
    robot_stiffness: float = 1500.0  # N/m, impedance controller
    robot_damping: float = 110.0  # N*s/m
    press_ms: int = 150  # desired motion continues past the surface for this long
    press_jitter: float = 0.5  # relative per-recording spread of the press duration
    hold_ms: int = 100
    first_contact_ms: int = 600
    contact_spacing_ms: int = 900
    tail_ms: int = 500
    substeps: int = 20  # integrator steps per 5 ms sample
    seed: int = 0
    library_seed: int = 0  # motions and setups, shared between train and validation sets
    id_prefix: str = "rec"

    def __post_init__(self):
        ks = [self.stiffness[c] for c in (ClassLabel.HUMAN, ClassLabel.PVC, ClassLabel.ALUMINUM)]
        if not ks[0] < ks[1] < ks[2]:
            raise ValueError("stiffness must satisfy Human < PVC < Aluminum")
        if self.contact_spacing_ms < 500:
            raise ValueError(f"contacts must be at least 500 ms apart, got {self.contact_spacing_ms}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.class_counts is not None and sum(self.class_counts.values()) != self.num_recordings:
            raise ValueError("class_counts must sum to num_recordings")

    def counts(self) -> dict:
        if self.class_counts is not None:
            return dict(self.class_counts)
        # proportional to the training contact distribution, largest remainder
        total = sum(TRAIN_CONTACTS.values())
        raw = {c: self.num_recordings * n / total for c, n in TRAIN_CONTACTS.items()}
        counts = {c: int(math.floor(v)) for c, v in raw.items()}
        rest = self.num_recordings - sum(counts.values())
        for c in sorted(raw, key=lambda c: (counts[c] - raw[c], c.index))[:rest]:
            counts[c] += 1
        return counts


def train_config(seed: int = 0, **overrides) -> SyntheticConfig:
    """85 recordings, 28 Human / 27 Aluminum / 30 PVC (84/81/90 contacts)."""
    counts = {c: n // 3 for c, n in TRAIN_CONTACTS.items()}
    return SyntheticConfig(num_recordings=85, class_counts=counts, seed=seed, id_prefix="train", **overrides)


def val_config(seed: int = 1, **overrides) -> SyntheticConfig:
    """40 recordings, 18 Human / 9 Aluminum / 13 PVC (54/27/39 contacts)."""
    counts = {c: n // 3 for c, n in VAL_CONTACTS.items()}
    return SyntheticConfig(num_recordings=40, class_counts=counts, seed=seed, id_prefix="val", **overrides)


@dataclass(frozen=True)
class _Motion:
    q0: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    speed: float


def _motion_library(num_motions: int, setups: tuple[int, int], rng: np.random.Generator):
    motions = []
    for _ in range(num_motions):
        motions.append(_Motion(
            q0=rng.uniform(-1.0, 1.0, NUM_JOINTS),
            amp=rng.uniform(0.05, 0.3, NUM_JOINTS),
            freq=rng.uniform(0.1, 0.4, NUM_JOINTS),
            phase=rng.uniform(0, 2 * np.pi, NUM_JOINTS),
            speed=float(rng.uniform(0.0, 1.0)),
        ))
    setup_table = []
    lever_sign = rng.choice([-1.0, 1.0], NUM_JOINTS)
    for m in range(num_motions):
        n = int(rng.integers(setups[0], setups[1] + 1))
        for s in range(n):
            # joint-space direction of the normal error (rad/m) and torque lever arms (m)
            a = rng.normal(0.0, 1.0, NUM_JOINTS)
            a *= 1.5 / np.linalg.norm(a)
            b = rng.uniform(0.1, 0.6, NUM_JOINTS) * lever_sign
            setup_table.append((m, s, a, b))
    return motions, setup_table


# Peak-to-peak signal ranges the noise level is expressed against.
NOMINAL_RANGE = {"q": 0.1, "qdot": 1.0, "tau": 100.0}

_GRAVITY = np.array([0.0, 4.0, 0.3, -3.0, 0.2, 1.0, 0.0])


def contact_force_peak(k: float, c: float, m: float, v: float) -> float:
    """Peak of max(0, k*x + c*dx) for a free mass m hitting a Kelvin-Voigt wall at speed v.

    Uses the closed-form underdamped/overdamped solution of m*x'' = -k*x - c*x'.
    """
    omega = math.sqrt(k / m)
    zeta = c / (2.0 * math.sqrt(k * m))
    t = np.linspace(0.0, 10.0 / omega, 200001)
    if zeta < 1.0:
        wd = omega * math.sqrt(1.0 - zeta * zeta)
        x = v / wd * np.exp(-zeta * omega * t) * np.sin(wd * t)
        dx = v * np.exp(-zeta * omega * t) * (np.cos(wd * t) - zeta * omega / wd * np.sin(wd * t))
    elif zeta == 1.0:
        x = v * t * np.exp(-omega * t)
        dx = v * (1 - omega * t) * np.exp(-omega * t)
    else:
        s = omega * math.sqrt(zeta * zeta - 1.0)
        r1, r2 = -zeta * omega + s, -zeta * omega - s
        x = v / (r1 - r2) * (np.exp(r1 * t) - np.exp(r2 * t))
        dx = v / (r1 - r2) * (r1 * np.exp(r1 * t) - r2 * np.exp(r2 * t))
    return float(np.max(np.maximum(0.0, k * x + c * dx)))


def _desired_profile(t: np.ndarray, contact_times: list[float], v: float, press_s: float, hold_s: float):
    """Desired normal position (wall at 0) and velocity; seconds in, metres out."""
    approach = 0.25  # s of approach before nominal surface arrival
    rest = -v * approach
    xd = np.full_like(t, rest)
    vd = np.zeros_like(t)
    for tc in contact_times:
        t0 = tc - approach
        t1 = tc + press_s
        t2 = t1 + hold_s
        t3 = t2 + (press_s + approach)
        seg = (t >= t0) & (t < t1)
        xd[seg] = rest + v * (t[seg] - t0)
        vd[seg] = v
        seg = (t >= t1) & (t < t2)
        xd[seg] = v * press_s
        seg = (t >= t2) & (t < t3)
        xd[seg] = v * press_s - v * (t[seg] - t2)
        vd[seg] = -v
    return xd, vd


def _simulate_normal(n_samples: int, contact_times: list[float], v: float, k: float, c: float,
                     press_s: float, cfg: SyntheticConfig):
    """Integrate the normal-direction dynamics; returns per-sample x, dx, xd, vd, force."""
    dt_s = PERIOD_MS / 1000.0
    h = dt_s / cfg.substeps
    t_fine = np.arange(n_samples * cfg.substeps) * h
    xd_f, vd_f = _desired_profile(t_fine, contact_times, v, press_s, cfg.hold_ms / 1000.0)
    m, kr, dr = cfg.effective_mass, cfg.robot_stiffness, cfg.robot_damping
    x = float(xd_f[0])
    dx = float(vd_f[0])
    xs = np.empty(n_samples)
    dxs = np.empty(n_samples)
    fs = np.empty(n_samples)
    for i in range(n_samples):
        base = i * cfg.substeps
        xs[i], dxs[i] = x, dx
        fs[i] = max(0.0, k * x + c * dx) if x > 0.0 else 0.0
        for j in range(base, base + cfg.substeps):
            f = max(0.0, k * x + c * dx) if x > 0.0 else 0.0
            acc = (kr * (xd_f[j] - x) + dr * (vd_f[j] - dx) - f) / m
            dx += h * acc
            x += h * dx
    idx = np.arange(n_samples) * cfg.substeps
    return xs, dxs, xd_f[idx], vd_f[idx], fs


def generate_one(recording_id: str, label: ClassLabel, motion: _Motion, setup, cfg: SyntheticConfig,
                 rng: np.random.Generator) -> Recording:
    m_idx, s_idx, a, b = setup
    nc = cfg.contacts_per_recording
    duration = cfg.first_contact_ms + max(nc - 1, 0) * cfg.contact_spacing_ms + cfg.tail_ms
    n = duration // PERIOD_MS
    t_ms = np.arange(n, dtype=np.int64) * PERIOD_MS
    t_s = t_ms / 1000.0

    lo, hi = cfg.approach_speed
    v = (lo + (hi - lo) * motion.speed) * rng.uniform(0.9, 1.1)
    jit = cfg.stiffness_jitter
    k = cfg.stiffness[label] * rng.uniform(1 - jit, 1 + jit)
    c = cfg.damping[label] * rng.uniform(1 - jit, 1 + jit)
    contact_times = [
        (cfg.first_contact_ms + i * cfg.contact_spacing_ms) / 1000.0 + rng.uniform(-0.02, 0.02)
        for i in range(nc)
    ]
    press_s = cfg.press_ms / 1000.0 * rng.uniform(1 - cfg.press_jitter, 1 + cfg.press_jitter)
    x, dx, xd, vd, force = _simulate_normal(n, contact_times, v, k, c, press_s, cfg)

    phase = 2 * np.pi * motion.freq[None, :] * t_s[:, None] + motion.phase[None, :]
    q0 = motion.q0 + 0.05 * s_idx
    q_des = q0[None, :] + motion.amp[None, :] * np.sin(phase)
    qd_des = motion.amp[None, :] * 2 * np.pi * motion.freq[None, :] * np.cos(phase)
    q_act = q_des - (xd - x)[:, None] * a[None, :]
    qd_act = qd_des - (vd - dx)[:, None] * a[None, :]
    tau = _GRAVITY[None, :] * np.cos(q_act) + force[:, None] * b[None, :]
    contact = x > 0.0

    if cfg.noise_std > 0:
        # sensor noise does not depend on the contacted object: scale by nominal channel ranges
        q_act = q_act + rng.normal(0.0, cfg.noise_std * NOMINAL_RANGE["q"], q_act.shape)
        qd_act = qd_act + rng.normal(0.0, cfg.noise_std * NOMINAL_RANGE["qdot"], qd_act.shape)
        tau = tau + rng.normal(0.0, cfg.noise_std * NOMINAL_RANGE["tau"], tau.shape)

    return Recording(
        recording_id=recording_id,
        t_ms=t_ms,
        q_desired=q_des,
        q_actual=q_act,
        qdot_desired=qd_des,
        qdot_actual=qd_act,
        tau_J=tau,
        contact=contact,
        label=label,
        motion_id=f"m{m_idx}",
        setup_id=f"m{m_idx}s{s_idx}",
    )


def generate(cfg: SyntheticConfig) -> list[Recording]:
    """Deterministic list of recordings, class blocks in label-index order."""
    lib_rng = np.random.default_rng([cfg.library_seed, 0])
    motions, setups = _motion_library(cfg.num_motions, cfg.setups_per_motion, lib_rng)
    out = []
    i = 0
    for label in sorted(cfg.counts(), key=lambda c: c.index):
        for _ in range(cfg.counts()[label]):
            rng = np.random.default_rng([cfg.seed, 1, i])
            setup = setups[int(rng.integers(len(setups)))]
            motion = motions[setup[0]]
            out.append(generate_one(f"{cfg.id_prefix}-{i:04d}", label, motion, setup, cfg, rng))
            i += 1
    return out
