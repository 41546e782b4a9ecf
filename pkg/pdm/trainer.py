"""
Entrenamiento del denoiser: objetivo ponderado por γ_t, Adam con calentamiento
lineal y EMA, más el modo de comparación entre parametrizaciones x / ε / v.

El objetivo siempre es el mismo en espacio x:
    γ_t · ||x̂ - x||²
Para ε y v se expresa en el espacio nativo del modelo multiplicando por el
cuadrado del factor de amplificación del tipo (ver ``param``).
"""
import logging
import queue
import threading
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from pdm import denoiser
from pdm.core import RngStream, Tensor, gaussian, stream
from pdm.denoiser import AdamState, Checkpoint, DenoiserConfig
from pdm.errores import ConfigError
from pdm.oracle import EmpiricalDataset
from pdm.param import Kind, Prediction, target_for, to_x, x_error_amplification
from pdm.schedule import Schedule, coeficiente, forward_marginal

logger = logging.getLogger(__name__)

ESPACIOS_PERDIDA = ("native", "x_space_report")


@dataclass
class TrainConfig:
    batch: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    warmup: int = 5000
    iters: int = 1000
    ema_decay: float = 0.99
    ema_every: int = 100
    cond_dropout: float = 0.1
    kind: Optional[Kind] = None
    loss_space: str = "x_space_report"
    t_min: int = 1
    t_max: Optional[int] = None
    rmse_buckets: int = 4
    log_every: int = 100
    save_every: int = 0
    prefetch: int = 0
    progress: bool = False

    def __post_init__(self):
        if self.kind is not None:
            self.kind = Kind(self.kind)
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ConfigError(f"cond_dropout debe estar en [0, 1], se recibió {self.cond_dropout}")
        if not 0.0 < self.ema_decay < 1.0 and self.ema_decay not in (0.0, 1.0):
            raise ConfigError(f"ema_decay debe estar en (0, 1), se recibió {self.ema_decay}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("los momentos de Adam deben estar en [0, 1)")
        if self.loss_space not in ESPACIOS_PERDIDA:
            raise ConfigError(f"loss_space desconocido '{self.loss_space}', opciones: {ESPACIOS_PERDIDA}")
        if self.batch < 1 or self.iters < 0 or self.warmup < 0 or self.ema_every < 1:
            raise ConfigError("batch >= 1, iters >= 0, warmup >= 0 y ema_every >= 1 son obligatorios")

    def t_range(self, schedule: Schedule):
        t_max = schedule.T if self.t_max is None else self.t_max
        if not 1 <= self.t_min <= t_max <= schedule.T:
            raise ConfigError(f"rango de timesteps inválido [{self.t_min}, {t_max}] para T={schedule.T}")
        return self.t_min, t_max

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"claves desconocidas en la configuración de entrenamiento: {sorted(extra)}")
        return cls(**d)


class LossResult(NamedTuple):
    loss: float
    grads: Dict[str, np.ndarray]
    timesteps: np.ndarray
    x_rmse: np.ndarray


# ============================================================
# PÉRDIDA
# ============================================================
def loss_weights(kind, t, schedule: Schedule) -> np.ndarray:
    """γ_t multiplicado por el cuadrado de la amplificación del tipo."""
    return schedule.weight(t) * x_error_amplification(kind, t, schedule) ** 2


def weighted_squared_error(pred: Tensor, target: Tensor, weights: np.ndarray):
    """Pérdida media ponderada por ejemplo y su gradiente respecto de ``pred``."""
    N = len(pred)
    D = pred[0].size
    dif = pred - target
    por_ejemplo = (dif * dif).reshape(N, -1).mean(axis=1)
    loss = float(np.mean(weights * por_ejemplo))
    grad = 2.0 * coeficiente(weights, pred.ndim) * dif / (N * D)
    return loss, grad


def loss_and_grads(ckpt: Checkpoint, batch: Tensor, labels, schedule: Schedule,
                   rng: RngStream, config: TrainConfig) -> LossResult:
    cfg = ckpt.config
    N = len(batch)
    t_min, t_max = config.t_range(schedule)

    # PASO 1: timesteps uniformes, ruido y z_t
    t = rng.integers(t_min, t_max + 1, (N,))
    eps = gaussian(batch.shape, rng)
    z = forward_marginal(batch, t, eps, schedule)

    # PASO 2: descarte de etiquetas hacia la clase nula (guía sin clasificador)
    if cfg.classes:
        if labels is None:
            labels = np.full(N, cfg.null_class)
        else:
            descartar = rng.uniform((N,)) < config.cond_dropout
            labels = np.where(descartar, cfg.null_class, labels)
    else:
        labels = None

    # PASO 3: adelante, pérdida ponderada y atrás
    pred, tape = denoiser.forward_with_tape(ckpt, z, t, labels)
    target = target_for(cfg.kind, batch, eps, t, schedule)
    loss, grad_out = weighted_squared_error(pred.value, target, loss_weights(cfg.kind, t, schedule))
    grads = denoiser.backward(ckpt, tape, grad_out)

    x_hat = to_x(pred, z, t, schedule)
    x_rmse = np.sqrt(((x_hat - batch) ** 2).reshape(N, -1).mean(axis=1))
    return LossResult(loss, grads, t, x_rmse)


# ============================================================
# OPTIMIZADOR Y EMA
# ============================================================
def learning_rate(step: int, config: TrainConfig) -> float:
    """Rampa lineal durante ``warmup`` pasos y luego constante."""
    if config.warmup <= 0:
        return config.lr
    return config.lr * min(1.0, step / config.warmup)


def adam_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                state: AdamState, config: TrainConfig):
    """Un paso de Adam con corrección de sesgo; devuelve (params, estado) nuevos."""
    paso = state.step + 1
    lr = learning_rate(paso, config)
    b1, b2 = config.beta1, config.beta2
    nuevos, m, v = {}, {}, {}
    for nombre, p in params.items():
        g = grads[nombre]
        if g.shape != p.shape:
            raise ConfigError(f"gradiente de {nombre} con forma {g.shape}, se esperaba {p.shape}")
        m[nombre] = b1 * state.m[nombre] + (1.0 - b1) * g
        v[nombre] = b2 * state.v[nombre] + (1.0 - b2) * g * g
        m_hat = m[nombre] / (1.0 - b1 ** paso)
        v_hat = v[nombre] / (1.0 - b2 ** paso)
        nuevos[nombre] = p - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return nuevos, AdamState(m=m, v=v, step=paso)


def adam_step(ckpt: Checkpoint, grads: Dict[str, np.ndarray], config: TrainConfig) -> Checkpoint:
    params, estado = adam_update(ckpt.params, grads, ckpt.opt_state, config)
    return replace(ckpt, params=params, opt_state=estado)


def ema_update(ckpt: Checkpoint, decay: float) -> Checkpoint:
    """ema <- decay·ema + (1 - decay)·params."""
    ema = {k: decay * ckpt.ema_params[k] + (1.0 - decay) * p for k, p in ckpt.params.items()}
    return replace(ckpt, ema_params=ema)


# ============================================================
# BUCLE DE ENTRENAMIENTO
# ============================================================
def _lotes(ds: EmpiricalDataset, config: TrainConfig, rng: RngStream, iters: int, usar_etiquetas: bool):
    for _ in range(iters):
        idx = rng.integers(0, len(ds), (config.batch,))
        etiquetas = ds.labels[idx] if usar_etiquetas else None
        yield ds.examples[idx], etiquetas


def _con_prefetch(generador, capacidad: int):
    """Adelanta lotes en un hilo con cola acotada; el orden no cambia."""
    cola = queue.Queue(maxsize=capacidad)
    fin = object()
    parar = threading.Event()

    def productor():
        for item in generador:
            if parar.is_set():
                return
            cola.put(item)
        cola.put(fin)

    hilo = threading.Thread(target=productor, daemon=True)
    hilo.start()
    try:
        while True:
            item = cola.get()
            if item is fin:
                break
            yield item
    finally:
        parar.set()
        # vaciar la cola libera un put bloqueado
        while hilo.is_alive():
            try:
                cola.get(timeout=0.05)
            except queue.Empty:
                pass
        hilo.join()


def _columnas_buckets(t_min: int, t_max: int, n: int):
    bordes = np.linspace(t_min, t_max + 1, n + 1).astype(int)
    return [(f"x_rmse_t{lo}-{hi - 1}", lo, hi) for lo, hi in zip(bordes[:-1], bordes[1:]) if hi > lo]


def train_loop(ds: EmpiricalDataset, model_config: DenoiserConfig, config: TrainConfig,
               schedule: Schedule, seed: int = 0, init: Optional[Checkpoint] = None,
               out_dir=None):
    """Entrena y devuelve (checkpoint, métricas por paso como DataFrame)."""
    if init is not None:
        if init.schedule_fingerprint and init.schedule_fingerprint != schedule.fingerprint:
            raise ConfigError("el checkpoint inicial fue entrenado con otro cronograma")
        # la red ya aprendió a predecir un tipo; no se reinterpreta
        if config.kind is not None and config.kind is not init.config.kind:
            raise ConfigError(f"el checkpoint inicial predice '{init.config.kind.value}' "
                              f"y el entrenamiento pide '{config.kind.value}'")
        ckpt = init
    else:
        if config.kind is not None and config.kind is not model_config.kind:
            model_config = replace(model_config, kind=config.kind)
        ckpt = denoiser.init(model_config, stream(seed, "init"), schedule.fingerprint)

    t_min, t_max = config.t_range(schedule)
    buckets = _columnas_buckets(t_min, t_max, config.rmse_buckets)
    columnas = ["step", "native_loss", "x_space_rmse", "lr"]
    if config.loss_space == "x_space_report":
        columnas += [nombre for nombre, _, _ in buckets]
    if config.iters == 0:
        return ckpt, pd.DataFrame(columns=columnas)

    usar_etiquetas = bool(ckpt.config.classes) and ds.labels is not None
    lotes = _lotes(ds, config, stream(seed, "datos"), config.iters, usar_etiquetas)
    if config.prefetch > 0:
        lotes = _con_prefetch(lotes, config.prefetch)
    rng_ruido = stream(seed, "ruido")
    out_dir = Path(out_dir) if out_dir is not None else None

    filas = []
    barra = tqdm(lotes, total=config.iters, desc=f"entrenando ({ckpt.config.kind.value})",
                 disable=not config.progress)
    for paso, (x, etiquetas) in enumerate(barra, start=1):
        res = loss_and_grads(ckpt, x, etiquetas, schedule, rng_ruido, config)
        ckpt = adam_step(ckpt, res.grads, config)
        if paso % config.ema_every == 0:
            ckpt = ema_update(ckpt, config.ema_decay)

        fila = {"step": paso, "native_loss": res.loss,
                "x_space_rmse": float(res.x_rmse.mean()), "lr": learning_rate(paso, config)}
        if config.loss_space == "x_space_report":
            for nombre, lo, hi in buckets:
                dentro = (res.timesteps >= lo) & (res.timesteps < hi)
                fila[nombre] = float(res.x_rmse[dentro].mean()) if np.any(dentro) else np.nan
        filas.append(fila)

        if paso % config.log_every == 0:
            logger.info("paso %d: pérdida %.5f, rmse x %.5f, lr %.2e",
                        paso, res.loss, fila["x_space_rmse"], fila["lr"])
        if out_dir is not None and config.save_every and paso % config.save_every == 0:
            denoiser.save_checkpoint(ckpt, out_dir / f"ckpt_{paso:06d}")

    if out_dir is not None:
        denoiser.save_checkpoint(ckpt, out_dir / "final.ckpt")
    return ckpt, pd.DataFrame(filas, columns=columnas)


def compare_kinds(ds: EmpiricalDataset, model_config: DenoiserConfig, config: TrainConfig,
                  schedule: Schedule, seed: int = 0):
    """Entrena X, EPS y V con el mismo orden de datos y semillas; alinea las curvas."""
    ckpts, tabla = {}, None
    for kind in Kind:
        ckpt, metricas = train_loop(ds, model_config, replace(config, kind=kind), schedule, seed)
        ckpts[kind] = ckpt
        parte = metricas[["step", "native_loss", "x_space_rmse"]].rename(columns={
            "native_loss": f"native_loss_{kind.value}",
            "x_space_rmse": f"x_space_rmse_{kind.value}",
        })
        tabla = parte if tabla is None else tabla.merge(parte, on="step")
    return ckpts, tabla


# ============================================================
# PÉRDIDA DE MONTE CARLO SOBRE SORTEOS COMPARTIDOS
# ============================================================
@dataclass(eq=False)
class Draws:
    x: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    labels: Optional[np.ndarray]


def monte_carlo_draws(ds: EmpiricalDataset, schedule: Schedule, rng: RngStream, n: int,
                      t_min: int = 1, t_max: Optional[int] = None) -> Draws:
    """Sorteos (x, t, ε, z_t) de q(x, z_t) para comparar modelos en pareja."""
    t_max = schedule.T if t_max is None else t_max
    idx = rng.integers(0, len(ds), (n,))
    x = ds.examples[idx]
    t = rng.integers(t_min, t_max + 1, (n,))
    eps = gaussian(x.shape, rng)
    etiquetas = ds.labels[idx] if ds.labels is not None else None
    return Draws(x, t, eps, forward_marginal(x, t, eps, schedule), etiquetas)


def monte_carlo_loss(predict: Callable[[Tensor, np.ndarray], Prediction], draws: Draws,
                     schedule: Schedule) -> np.ndarray:
    """γ_t · mean((x̂ - x)²) por sorteo (el objetivo ponderado en espacio x)."""
    pred = predict(draws.z, draws.t)
    x_hat = to_x(pred, draws.z, draws.t, schedule)
    err = ((x_hat - draws.x) ** 2).reshape(len(draws.x), -1).mean(axis=1)
    return schedule.weight(draws.t) * err
