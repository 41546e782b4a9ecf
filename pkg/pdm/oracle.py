"""
Denoiser óptimo exacto sobre un conjunto empírico finito.

Con prior uniforme sobre los ejemplos x_i:
    w_i ∝ exp(-||z_t - sqrt(α_t) x_i||² / (2 (1 - α_t)))
    x*(z_t, t) = Σ_i w_i x_i  (media de q(x | z_t))
Los pesos se normalizan en escala logarítmica (log-sum-exp) porque en t
pequeño están extremadamente concentrados.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from pdm.core import RngStream, Tensor
from pdm.errores import DatasetError, ShapeError
from pdm.param import Kind, Prediction
from pdm.schedule import Schedule, Timestep

_FILAS_POR_BLOQUE = 2048


@dataclass(eq=False)
class EmpiricalDataset:
    """Ejemplos (M, H, W, C) en [-1, 1] y etiquetas de clase opcionales (M,)."""
    examples: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.examples = np.ascontiguousarray(self.examples, dtype=np.float64)
        if self.examples.ndim != 4 or len(self.examples) == 0:
            raise DatasetError(f"se esperaban ejemplos (M, H, W, C) no vacíos, forma {self.examples.shape}")
        if np.any(np.abs(self.examples) > 1.0 + 1e-12):
            raise DatasetError("los ejemplos deben estar en [-1, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.examples),):
                raise DatasetError(
                    f"{len(self.examples)} ejemplos pero {self.labels.shape} etiquetas"
                )
        self.examples.setflags(write=False)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def shape(self):
        return self.examples.shape[1:]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, label: int) -> "EmpiricalDataset":
        if self.labels is None:
            raise DatasetError("el conjunto no tiene etiquetas de clase")
        mascara = self.labels == label
        if not np.any(mascara):
            raise DatasetError(f"la clase {label} no tiene ejemplos")
        return EmpiricalDataset(self.examples[mascara], self.labels[mascara])


# ============================================================
# PESOS POSTERIORES
# ============================================================
def _log_pesos(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule, label=None):
    """Log-pesos sin normalizar (N, M) y el vector (1 - α) por fila."""
    if z_t.ndim != 4 or z_t.shape[1:] != ds.shape:
        raise ShapeError(f"z_t con forma {z_t.shape} no coincide con los ejemplos {ds.shape}")
    n = len(z_t)
    a = np.broadcast_to(np.asarray(schedule.alpha(t), dtype=np.float64), (n,))
    z = z_t.reshape(n, -1)
    X = ds.examples.reshape(len(ds), -1)

    d2 = np.empty((n, len(ds)))
    for ini in range(0, n, _FILAS_POR_BLOQUE):
        fin = min(ini + _FILAS_POR_BLOQUE, n)
        dif = z[ini:fin, None, :] - np.sqrt(a[ini:fin])[:, None, None] * X[None, :, :]
        d2[ini:fin] = np.einsum("nmd,nmd->nm", dif, dif)

    var = 1.0 - a
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = -d2 / (2.0 * var[:, None])
    # α = 1: la posterior colapsa sobre el (los) ejemplo(s) más cercano(s)
    exactas = var == 0.0
    if np.any(exactas):
        cerca = d2[exactas] == d2[exactas].min(axis=1, keepdims=True)
        logw[exactas] = np.where(cerca, 0.0, -np.inf)

    if label is not None:
        if ds.labels is None:
            raise DatasetError("se pidió una clase pero el conjunto no tiene etiquetas")
        etiquetas = np.broadcast_to(np.asarray(label), (n,))
        permitido = ds.labels[None, :] == etiquetas[:, None]
        if not np.all(permitido.any(axis=1)):
            faltan = sorted(set(etiquetas[~permitido.any(axis=1)].tolist()))
            raise DatasetError(f"clases sin ejemplos: {faltan}")
        logw = np.where(permitido, logw, -np.inf)
    return logw, var


def posterior_weights(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule,
                      label=None) -> np.ndarray:
    """Pesos (N, M) no negativos que suman 1 por fila."""
    logw, _ = _log_pesos(z_t, t, ds, schedule, label)
    return softmax(logw, axis=1)


def optimal_denoiser(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule,
                     label=None) -> Tensor:
    w = posterior_weights(z_t, t, ds, schedule, label)
    X = ds.examples.reshape(len(ds), -1)
    return (w @ X).reshape(z_t.shape)


def posterior_sample_indices(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule,
                             rng: RngStream, label=None) -> np.ndarray:
    w = posterior_weights(z_t, t, ds, schedule, label)
    acumulado = np.cumsum(w, axis=1)
    u = rng.uniform((len(w), 1)) * acumulado[:, -1:]
    idx = (acumulado <= u).sum(axis=1)
    return np.minimum(idx, len(ds) - 1)


def posterior_sample(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule,
                     rng: RngStream, label=None) -> Tensor:
    """Un ejemplo x_i por fila, elegido con probabilidad w_i."""
    return ds.examples[posterior_sample_indices(z_t, t, ds, schedule, rng, label)]


def marginal_score(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule) -> Tensor:
    """∇ log q(z_t) = -(z_t - sqrt(α) x̄(z_t)) / (1 - α)."""
    a = np.broadcast_to(np.asarray(schedule.alpha(t), dtype=np.float64), (len(z_t),))
    a = a.reshape((-1,) + (1,) * (z_t.ndim - 1))
    x_bar = optimal_denoiser(z_t, t, ds, schedule)
    return -(z_t - np.sqrt(a) * x_bar) / (1.0 - a)


def log_marginal_density(z_t: Tensor, t: Timestep, ds: EmpiricalDataset, schedule: Schedule) -> np.ndarray:
    """log q(z_t) exacto de la mezcla gaussiana finita, uno por fila."""
    logw, var = _log_pesos(z_t, t, ds, schedule)
    D = int(np.prod(ds.shape))
    return logsumexp(logw, axis=1) - np.log(len(ds)) - 0.5 * D * np.log(2.0 * np.pi * var)


# ============================================================
# ADAPTADOR PARA EL MUESTREADOR
# ============================================================
class OracleModel:
    """Expone x* como un modelo de tipo X (condicionado a clase si se pide)."""
    kind = Kind.X
    patch_size = None

    def __init__(self, ds: EmpiricalDataset, schedule: Schedule):
        self.ds = ds
        self.schedule = schedule
        self.schedule_fingerprint = schedule.fingerprint

    @property
    def null_class(self):
        return self.ds.num_classes if self.ds.labels is not None else None

    def predict(self, z_t: Tensor, t: Timestep, labels=None) -> Prediction:
        if labels is None or self.ds.labels is None:
            return Prediction(Kind.X, optimal_denoiser(z_t, t, self.ds, self.schedule))
        # la clase nula (fuera de rango) equivale a la pasada incondicional
        labels = np.broadcast_to(np.asarray(labels), (len(z_t),))
        nulas = labels >= self.ds.num_classes
        t = np.broadcast_to(np.asarray(t), (len(z_t),))
        x = np.empty_like(z_t)
        if np.any(nulas):
            x[nulas] = optimal_denoiser(z_t[nulas], t[nulas], self.ds, self.schedule)
        if np.any(~nulas):
            x[~nulas] = optimal_denoiser(z_t[~nulas], t[~nulas], self.ds, self.schedule, labels[~nulas])
        return Prediction(Kind.X, x)
