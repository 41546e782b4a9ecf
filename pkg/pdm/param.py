"""
Álgebra de parametrizaciones de la predicción (x / ε / v), amplificación de
errores, umbralización y guía sin clasificador.

Relaciones base:
    z_t = sqrt(α) x + sqrt(1-α) ε
    v   = sqrt(α) ε - sqrt(1-α) x
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from pdm.core import Tensor, check_same_shape, percentile
from pdm.errores import ConfigError, KindError
from pdm.schedule import Schedule, Timestep, coeficiente


class Kind(str, Enum):
    X = "x"
    EPS = "eps"
    V = "v"


@dataclass(frozen=True)
class Prediction:
    kind: Kind
    value: Tensor

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))


UMBRALES = ("none", "static", "dynamic")


@dataclass
class GuidanceConfig:
    w: float = 1.0
    threshold: str = "dynamic"
    percentile: float = 99.5

    def __post_init__(self):
        if self.w < 0:
            raise ConfigError(f"el peso de guía w debe ser >= 0, se recibió {self.w}")
        if self.threshold not in UMBRALES:
            raise ConfigError(f"umbral desconocido '{self.threshold}', opciones: {UMBRALES}")
        if not 0.0 < self.percentile <= 100.0:
            raise ConfigError(f"el percentil debe estar en (0, 100], se recibió {self.percentile}")


# ============================================================
# CONVERSIONES EN TÉRMINOS DE α (primitivas)
# ============================================================
def eps_from_x_a(z, x, a):
    return (z - np.sqrt(a) * x) / np.sqrt(1.0 - a)


def x_from_eps_a(z, eps, a):
    return (z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)


def v_from_a(x, eps, a):
    return np.sqrt(a) * eps - np.sqrt(1.0 - a) * x


def x_from_v_a(z, v, a):
    return np.sqrt(a) * z - np.sqrt(1.0 - a) * v


def eps_from_v_a(z, v, a):
    return np.sqrt(1.0 - a) * z + np.sqrt(a) * v


def _alpha(t: Timestep, schedule: Schedule, ndim: int):
    return coeficiente(schedule.alpha(t), ndim)


# ============================================================
# CONVERSIONES EN TÉRMINOS DE (t, cronograma)
# ============================================================
def eps_from_x(z_t: Tensor, x: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    check_same_shape(z_t, x, "eps_from_x")
    return eps_from_x_a(z_t, x, _alpha(t, schedule, np.ndim(x)))


def x_from_eps(z_t: Tensor, eps: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    check_same_shape(z_t, eps, "x_from_eps")
    return x_from_eps_a(z_t, eps, _alpha(t, schedule, np.ndim(eps)))


def v_from(x: Tensor, eps: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    check_same_shape(x, eps, "v_from")
    return v_from_a(x, eps, _alpha(t, schedule, np.ndim(x)))


def x_from_v(z_t: Tensor, v: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    check_same_shape(z_t, v, "x_from_v")
    return x_from_v_a(z_t, v, _alpha(t, schedule, np.ndim(v)))


def eps_from_v(z_t: Tensor, v: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    check_same_shape(z_t, v, "eps_from_v")
    return eps_from_v_a(z_t, v, _alpha(t, schedule, np.ndim(v)))


def to_x(pred: Prediction, z_t: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    if pred.kind is Kind.X:
        return pred.value
    if pred.kind is Kind.EPS:
        return x_from_eps(z_t, pred.value, t, schedule)
    return x_from_v(z_t, pred.value, t, schedule)


def to_eps(pred: Prediction, z_t: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    if pred.kind is Kind.EPS:
        return pred.value
    if pred.kind is Kind.X:
        return eps_from_x(z_t, pred.value, t, schedule)
    return eps_from_v(z_t, pred.value, t, schedule)


def to_v(pred: Prediction, z_t: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    if pred.kind is Kind.V:
        return pred.value
    return v_from(to_x(pred, z_t, t, schedule), to_eps(pred, z_t, t, schedule), t, schedule)


def convert(pred: Prediction, kind, z_t: Tensor, t: Timestep, schedule: Schedule) -> Prediction:
    """Devuelve una nueva predicción del tipo pedido; la original no cambia."""
    kind = Kind(kind)
    conversores = {Kind.X: to_x, Kind.EPS: to_eps, Kind.V: to_v}
    return Prediction(kind, conversores[kind](pred, z_t, t, schedule))


def target_for(kind, x: Tensor, eps: Tensor, t: Timestep, schedule: Schedule) -> Tensor:
    """Objetivo de entrenamiento en el espacio nativo de ``kind``."""
    kind = Kind(kind)
    if kind is Kind.X:
        return x
    if kind is Kind.EPS:
        return eps
    return v_from(x, eps, t, schedule)


# ============================================================
# AMPLIFICACIÓN DEL ERROR EN ESPACIO x
# ============================================================
def amplification_a(kind, a):
    kind = Kind(kind)
    a = np.asarray(a, dtype=np.float64)
    if kind is Kind.X:
        return np.ones_like(a)
    if kind is Kind.EPS:
        return np.sqrt(1.0 - a) / np.sqrt(a)
    return np.sqrt(1.0 - a)


def x_error_amplification(kind, t: Timestep, schedule: Schedule):
    """Factor de Lipschitz que lleva una perturbación de la predicción al espacio x."""
    return amplification_a(kind, schedule.alpha(t))


# ============================================================
# UMBRALIZACIÓN Y GUÍA
# ============================================================
def threshold(x: Tensor, mode: str = "dynamic", p: float = 99.5) -> Tensor:
    """
    static: recorta a [-1, 1].
    dynamic(p): por muestra s = percentil(|x|, p); si s > 1 recorta a [-s, s]
    y divide por s, si no recorta a [-1, 1].
    """
    if mode == "none":
        return x
    if mode == "static":
        return np.clip(x, -1.0, 1.0)
    if mode != "dynamic":
        raise ConfigError(f"umbral desconocido '{mode}'")
    n = x.shape[0]
    s = percentile(np.abs(x.reshape(n, -1)), p, axis=1)
    s = coeficiente(np.maximum(s, 1.0), x.ndim)
    return np.clip(x, -s, s) / s


def guide(cond: Prediction, uncond: Prediction, w: float) -> Prediction:
    """out = uncond + w·(cond - uncond); w = 1 da cond, w = 0 da uncond."""
    if cond.kind is not uncond.kind:
        raise KindError(f"tipos de predicción distintos: {cond.kind.value} y {uncond.kind.value}")
    check_same_shape(cond.value, uncond.value, "guide")
    if w == 1.0:
        return cond
    if w == 0.0:
        return uncond
    return Prediction(cond.kind, uncond.value + w * (cond.value - uncond.value))
