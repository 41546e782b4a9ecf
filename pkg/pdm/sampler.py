"""
Muestreo ancestral del proceso inverso con pasos espaciados, guía sin
clasificador umbralizada y división del modelo en el timestep S.

Cada paso:
    x̂ = to_x(predicción guiada) -> umbral -> media/varianza posterior
    z_{t-1} = media + sqrt(varianza) ξ      (sin ruido en el último paso)
"""
import logging
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm.auto import tqdm

from pdm.core import RngStream, Tensor, check_same_shape, gaussian, stream
from pdm.errores import ConfigError, ShapeError
from pdm.param import GuidanceConfig, Prediction, guide, threshold, to_x
from pdm.schedule import Schedule, coeficiente, posterior_params, respace

logger = logging.getLogger(__name__)

VARIANZAS = ("posterior", "beta")


@dataclass
class SplitConfig:
    """``low_model`` atiende t <= S y ``high_model`` t > S (referencias o modelos)."""
    S: int
    low_model: object
    high_model: object

    def __post_init__(self):
        if int(self.S) < 1:
            raise ConfigError(f"el punto de división S debe ser >= 1, se recibió {self.S}")


@dataclass
class SampleConfig:
    count: int = 16
    steps: int = 250
    shape: Tuple[int, int, int] = (8, 8, 3)
    labels: Optional[List[int]] = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    split: Optional[str] = None
    variance: str = "posterior"
    seed: int = 0
    progress: bool = False

    def __post_init__(self):
        if isinstance(self.guidance, dict):
            self.guidance = GuidanceConfig(**self.guidance)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) != 3:
            raise ConfigError(f"shape debe ser (H, W, C), se recibió {self.shape}")
        if self.count < 1 or self.steps < 1:
            raise ConfigError("count y steps deben ser positivos")
        if self.variance not in VARIANZAS:
            raise ConfigError(f"varianza desconocida '{self.variance}', opciones: {VARIANZAS}")
        if self.labels is not None and len(self.labels) not in (1, self.count):
            raise ConfigError(f"se dieron {len(self.labels)} etiquetas para {self.count} muestras")

    @classmethod
    def from_dict(cls, d: dict) -> "SampleConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"claves desconocidas en la configuración de muestreo: {sorted(extra)}")
        return cls(**d)


@dataclass(eq=False)
class SampleResult:
    images: np.ndarray
    evaluations: int


def parse_split(spec: str) -> SplitConfig:
    """'S:low.ckpt:high.ckpt' -> SplitConfig con las rutas como referencias."""
    partes = spec.split(":")
    if len(partes) != 3 or not all(partes):
        raise ConfigError(f"división mal formada '{spec}', se esperaba 'S:bajo:alto'")
    try:
        S = int(partes[0])
    except ValueError:
        raise ConfigError(f"S debe ser entero en '{spec}'") from None
    return SplitConfig(S, partes[1], partes[2])


def split_dispatch(t: int, split: Optional[SplitConfig], model=None):
    if split is None:
        return model
    return split.low_model if t <= split.S else split.high_model


# ============================================================
# PASO ANCESTRAL
# ============================================================
def ancestral_step(z_t: Tensor, t: int, prediction: Prediction, schedule: Schedule,
                   guidance: GuidanceConfig, rng: RngStream, variance: str = "posterior") -> Tensor:
    """Un paso t -> t-1 en el cronograma dado (posiblemente espaciado)."""
    check_same_shape(z_t, prediction.value, "ancestral_step")
    x_hat = to_x(prediction, z_t, t, schedule)
    x_hat = threshold(x_hat, guidance.threshold, guidance.percentile)
    media, var_post = posterior_params(z_t, x_hat, t, schedule)
    if t == 1:
        return media
    var = var_post if variance == "posterior" else schedule.beta(t)
    return media + np.sqrt(coeficiente(var, z_t.ndim)) * gaussian(z_t.shape, rng)


# ============================================================
# BUCLE DE MUESTREO
# ============================================================
def _validar_modelos(modelos: Sequence, schedule: Schedule, config: SampleConfig):
    huella = schedule.fingerprint
    for m in modelos:
        if m.schedule_fingerprint and m.schedule_fingerprint != huella:
            raise ConfigError(
                f"el modelo fue entrenado con el cronograma {m.schedule_fingerprint}, se muestrea con {huella}"
            )
    parches = {m.patch_size for m in modelos if m.patch_size is not None}
    if len(parches) > 1:
        raise ConfigError(f"los modelos de la división usan tamaños de parche distintos: {sorted(parches)}")
    H, W, _ = config.shape
    for P in parches:
        if H % P or W % P:
            raise ShapeError(f"H={H} y W={W} no son divisibles por P={P}")
    if config.labels is not None:
        for m in modelos:
            if m.null_class is None:
                raise ConfigError("se pidieron clases pero un modelo es incondicional")


def _evaluar(modelo, z, t_original: int, etiquetas, w: float):
    """Predicción guiada y el número de evaluaciones que costó."""
    t = np.full(len(z), t_original, dtype=np.int64)
    if etiquetas is None:
        return modelo.predict(z, t), 1
    cond = modelo.predict(z, t, etiquetas)
    if w == 1.0:
        return cond, 1
    nulas = np.full(len(z), modelo.null_class, dtype=np.int64)
    return guide(cond, modelo.predict(z, t, nulas), w), 2


def sample(config: SampleConfig, model, schedule: Schedule, split: Optional[SplitConfig] = None) -> SampleResult:
    """
    Muestra ``config.count`` imágenes desde z_T ~ N(0, I).

    ``model`` atiende todos los pasos salvo que se dé ``split``; el cronograma es
    el base y se espacia a ``config.steps`` pasos.
    """
    modelos = [split.low_model, split.high_model] if split is not None else [model]
    if any(m is None for m in modelos):
        raise ConfigError("falta el modelo para muestrear")
    if split is not None and split.S >= schedule.T:
        raise ConfigError(f"el punto de división S={split.S} debe ser menor que T={schedule.T}")
    _validar_modelos(modelos, schedule, config)

    espaciado = respace(schedule, config.steps)
    rng = stream(config.seed, "muestreo")
    etiquetas = None
    if config.labels is not None:
        etiquetas = np.broadcast_to(np.asarray(config.labels, dtype=np.int64), (config.count,)).copy()

    # PASO 1: ruido inicial
    z = gaussian((config.count,) + config.shape, rng)

    # PASO 2: pasos descendentes
    evaluaciones = 0
    pasos = range(espaciado.T, 0, -1)
    for k in tqdm(pasos, desc="muestreando", disable=not config.progress):
        t_original = int(espaciado.timesteps[k - 1])
        modelo = split_dispatch(t_original, split, model)
        pred, n = _evaluar(modelo, z, t_original, etiquetas, config.guidance.w)
        evaluaciones += n
        z = ancestral_step(z, k, pred, espaciado, config.guidance, rng, config.variance)

    logger.info("muestreo: %d pasos, %d evaluaciones del modelo", espaciado.T, evaluaciones)
    return SampleResult(images=z, evaluations=evaluaciones)
