"""
Aritmética cerrada del proceso directo de difusión (varianza preservada).

Convención de índices: t = 1..T; ``alpha(0)`` vale 1 por definición, de modo
que en t = 1 la posterior colapsa sobre el dato.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import pandas as pd

from pdm.core import Tensor, as_tensor, check_same_shape, gaussian
from pdm.errores import ScheduleError

Timestep = Union[int, np.ndarray]


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_1: float = 1e-4
    beta_T: float = 0.02


@dataclass(eq=False)
class Schedule:
    """β_t, α_t acumulado y γ_t, guardados en arreglos indexados por t - 1."""
    betas: np.ndarray
    alpha_cum: np.ndarray
    gamma: np.ndarray
    timesteps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.timesteps is None:
            self.timesteps = np.arange(1, len(self.betas) + 1)
        for arr in (self.betas, self.alpha_cum, self.gamma, self.timesteps):
            arr.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.T).tobytes())
        h.update(self.betas.astype("<f8").tobytes())
        h.update(self.timesteps.astype("<i8").tobytes())
        return h.hexdigest()[:16]

    # ---------------- accesores ----------------
    def _indice(self, t: Timestep, minimo: int = 1) -> np.ndarray:
        idx = np.asarray(t)
        if not np.issubdtype(idx.dtype, np.integer):
            raise ScheduleError(f"timestep debe ser entero, se recibió {idx.dtype}")
        if np.any(idx < minimo) or np.any(idx > self.T):
            raise ScheduleError(f"timestep fuera de rango [{minimo}, {self.T}]: {t}")
        return idx

    def beta(self, t: Timestep):
        return self.betas[self._indice(t) - 1]

    def alpha(self, t: Timestep):
        """α_t acumulado; acepta t = 0 (vale 1)."""
        idx = self._indice(t, minimo=0)
        return np.where(idx == 0, 1.0, self.alpha_cum[np.maximum(idx, 1) - 1])

    def snr(self, t: Timestep):
        a = self.alpha(self._indice(t))
        return a / (1.0 - a)

    def weight(self, t: Timestep):
        return self.gamma[self._indice(t) - 1]


def coeficiente(valores, ndim: int) -> np.ndarray:
    """Da forma (N, 1, ..., 1) a coeficientes por ejemplo; deja escalares igual."""
    v = np.asarray(valores, dtype=np.float64)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


# ============================================================
# CONSTRUCCIÓN
# ============================================================
def _desde_betas(betas: np.ndarray, alpha_cum=None, timesteps=None) -> Schedule:
    if alpha_cum is None:
        alpha_cum = np.cumprod(1.0 - betas)
    gamma = np.sqrt(alpha_cum / (1.0 - alpha_cum))
    return Schedule(betas=betas, alpha_cum=alpha_cum, gamma=gamma, timesteps=timesteps)


def linear_schedule(T: int, beta_1: float, beta_T: float) -> Schedule:
    if T < 1:
        raise ScheduleError(f"T debe ser >= 1, se recibió {T}")
    if not 0.0 < beta_1 <= beta_T < 1.0:
        raise ScheduleError(f"se requiere 0 < beta_1 <= beta_T < 1, se recibió ({beta_1}, {beta_T})")
    betas = np.linspace(beta_1, beta_T, T, dtype=np.float64)
    return _desde_betas(betas)


def build_schedule(cfg: ScheduleConfig) -> Schedule:
    return linear_schedule(cfg.T, cfg.beta_1, cfg.beta_T)


def from_betas(betas) -> Schedule:
    """Cronograma a partir de β arbitrarios en (0, 1)."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) == 0 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ScheduleError("cada β_t debe estar en (0, 1)")
    return _desde_betas(betas)


def respace(schedule: Schedule, steps: int) -> Schedule:
    """Subsecuencia equiespaciada t_1 < ... < t_K = T con α acumulado intacto."""
    T = schedule.T
    if not 1 <= steps <= T:
        raise ScheduleError(f"steps debe estar en [1, {T}], se recibió {steps}")
    if steps == T:
        return schedule
    k = np.arange(1, steps + 1)
    elegidos = (k * T + steps - 1) // steps
    alpha_sel = schedule.alpha_cum[elegidos - 1].copy()
    previo = np.concatenate([[1.0], alpha_sel[:-1]])
    betas = 1.0 - alpha_sel / previo
    return Schedule(
        betas=betas,
        alpha_cum=alpha_sel,
        gamma=schedule.gamma[elegidos - 1].copy(),
        timesteps=schedule.timesteps[elegidos - 1].copy(),
    )


# ============================================================
# PROCESO DIRECTO Y POSTERIOR
# ============================================================
def forward_marginal(x: Tensor, t: Timestep, noise: Tensor, schedule: Schedule) -> Tensor:
    """z_t = sqrt(α_t) x + sqrt(1 - α_t) ε."""
    check_same_shape(x, noise, "forward_marginal")
    a = coeficiente(schedule.alpha(t), np.ndim(x))
    return np.sqrt(a) * x + np.sqrt(1.0 - a) * noise


def forward_transition(z_prev: Tensor, t: Timestep, noise: Tensor, schedule: Schedule) -> Tensor:
    """z_t = sqrt(1 - β_t) z_{t-1} + sqrt(β_t) ε."""
    check_same_shape(z_prev, noise, "forward_transition")
    b = coeficiente(schedule.beta(t), np.ndim(z_prev))
    return np.sqrt(1.0 - b) * z_prev + np.sqrt(b) * noise


def posterior_coefficients(t: Timestep, schedule: Schedule):
    """(coef. de x, coef. de z_t, varianza) de q(z_{t-1} | z_t, x)."""
    t = schedule._indice(t)
    beta = schedule.beta(t)
    a_t = schedule.alpha(t)
    a_prev = schedule.alpha(t - 1)
    # en t = 1 (α_0 = 1) la media es exactamente x
    coef_x = np.where(a_prev == 1.0, 1.0, np.sqrt(a_prev) * beta / (1.0 - a_t))
    coef_z = np.sqrt(1.0 - beta) * (1.0 - a_prev) / (1.0 - a_t)
    varianza = beta * (1.0 - a_prev) / (1.0 - a_t)
    return coef_x, coef_z, varianza


def posterior_params(z_t: Tensor, x: Tensor, t: Timestep, schedule: Schedule):
    """Media y varianza de la posterior gaussiana q(z_{t-1} | z_t, x)."""
    check_same_shape(z_t, x, "posterior_params")
    coef_x, coef_z, varianza = posterior_coefficients(t, schedule)
    nd = np.ndim(x)
    media = coeficiente(coef_x, nd) * x + coeficiente(coef_z, nd) * z_t
    return media, varianza


def snr(t: Timestep, schedule: Schedule):
    return schedule.snr(t)


def split_point(schedule: Schedule, snr_target: float = 0.25) -> int:
    """El t cuya SNR es la más cercana a ``snr_target``."""
    ts = np.arange(1, schedule.T + 1)
    return int(ts[np.argmin(np.abs(schedule.snr(ts) - snr_target))])


def to_frame(schedule: Schedule) -> pd.DataFrame:
    ts = np.arange(1, schedule.T + 1)
    return pd.DataFrame({
        "t": schedule.timesteps,
        "beta": schedule.betas,
        "alpha_cum": schedule.alpha_cum,
        "snr": schedule.snr(ts),
        "gamma": schedule.gamma,
    })


def sample_marginal(x: Tensor, t: Timestep, schedule: Schedule, rng) -> Tensor:
    """Atajo: z_t ~ q(z_t | x) con ruido fresco de ``rng``."""
    x = as_tensor(x)
    return forward_marginal(x, t, gaussian(x.shape, rng), schedule)
