"""Diffusion-process arithmetic: forward noising, the image-blended process,
v-prediction targets and deterministic DDIM stepping.

No networks live here. A denoiser is any callable
``denoiser(current_grid, t) -> predicted_clean_grid``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_STEPS = 40


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", a)
        if a.ndim != 1 or len(a) < 2:
            raise ValueError("alpha_bar needs at least two entries (t = 0 and t = T)")
        if a[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("alpha_bar entries must lie in [0, 1]")
        if np.any(np.diff(a) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def __getitem__(self, t) -> float:
        return float(self.alpha_bar[t])

    def to_dict(self) -> dict:
        return {"T": self.T, "alpha_bar": self.alpha_bar.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NoiseSchedule":
        return cls(np.asarray(d["alpha_bar"], dtype=np.float64))


def cosine_schedule(T=DEFAULT_STEPS, s=0.008) -> NoiseSchedule:
    """Squared-cosine alpha_bar with alpha_bar[0] = 1 and alpha_bar[T] = 0 exactly."""
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
    a = f / f[0]
    a[0] = 1.0
    a[-1] = 0.0
    return NoiseSchedule(a)


def linear_schedule(T=DEFAULT_STEPS) -> NoiseSchedule:
    return NoiseSchedule(1.0 - np.arange(T + 1) / T)


def _check(a, b, t, sched):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if not 0 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [0, {sched.T}]")
    return a, b


def forward_noise(y, eps, t, sched: NoiseSchedule) -> np.ndarray:
    y, eps = _check(y, eps, t, sched)
    a = sched[t]
    return math.sqrt(a) * y + math.sqrt(1.0 - a) * eps


def blend(n, x, t, sched: NoiseSchedule) -> np.ndarray:
    """Blended state at t: the image latent x plays the role of the noise."""
    n, x = _check(n, x, t, sched)
    a = sched[t]
    return math.sqrt(a) * n + math.sqrt(1.0 - a) * x


def v_target(y, eps, t, sched: NoiseSchedule) -> np.ndarray:
    y, eps = _check(y, eps, t, sched)
    a = sched[t]
    return math.sqrt(a) * eps - math.sqrt(1.0 - a) * y


def clean_from_v(current, v, t, sched: NoiseSchedule) -> np.ndarray:
    """Recover the clean grid from a v prediction at step t."""
    current, v = _check(current, v, t, sched)
    a = sched[t]
    return math.sqrt(a) * current - math.sqrt(1.0 - a) * v


def ddim_step(current, predicted_clean, t_from, t_to, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM move from t_from to t_to."""
    current, predicted_clean = _check(current, predicted_clean, t_from, sched)
    if not 0 <= t_to <= sched.T:
        raise ValueError(f"timestep {t_to} outside [0, {sched.T}]")
    if t_to > t_from:
        raise ValueError(f"DDIM steps must not increase t ({t_from} -> {t_to})")
    if t_to == t_from:
        return current.copy()
    a_from, a_to = sched[t_from], sched[t_to]
    direction = (current - math.sqrt(a_from) * predicted_clean) / math.sqrt(1.0 - a_from)
    return math.sqrt(a_to) * predicted_clean + math.sqrt(1.0 - a_to) * direction


def timesteps(sched: NoiseSchedule, steps=None) -> list:
    """Descending integer timesteps from T to 0 (inclusive), ``steps`` moves."""
    steps = sched.T if steps is None else int(steps)
    if steps < 1:
        raise ValueError("need at least one step")
    ts = np.round(np.linspace(sched.T, 0, steps + 1)).astype(int)
    return [int(t) for t in np.unique(ts)[::-1]]


def ddim_sample(start, denoiser, sched: NoiseSchedule, steps=None, prediction="clean") -> np.ndarray:
    """Run the sampler from t = T down to 0.

    ``prediction`` is ``"clean"`` when the denoiser returns the clean grid
    and ``"v"`` when it returns a v prediction.
    """
    current = np.asarray(start, dtype=np.float64)
    ts = timesteps(sched, steps)
    for t_from, t_to in zip(ts[:-1], ts[1:]):
        out = denoiser(current, t_from)
        clean = clean_from_v(current, out, t_from, sched) if prediction == "v" else out
        current = ddim_step(current, clean, t_from, t_to, sched)
    return current
