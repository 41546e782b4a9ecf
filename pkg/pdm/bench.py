"""
Mediciones de eficiencia a escala de escritorio: imágenes por segundo según el
tamaño de parche, conteo analítico de memoria de activaciones y curvas de
distorsión por timestep.
"""
import hashlib
import json
import logging
import time
from dataclasses import dataclass, fields, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from pdm import denoiser
from pdm.core import gaussian, stream
from pdm.denoiser import CheckpointModel, DenoiserConfig
from pdm.errores import ConfigError
from pdm.oracle import EmpiricalDataset
from pdm.param import GuidanceConfig, to_x
from pdm.sampler import SampleConfig, sample
from pdm.schedule import Schedule, forward_marginal

logger = logging.getLogger(__name__)


@dataclass
class BenchConfig:
    patch_sizes: Tuple[int, ...] = (2, 4, 8)
    budget: int = 20000
    shape: Tuple[int, int, int] = (32, 32, 3)
    batch: int = 4
    steps: int = 4
    reps: int = 3
    warmup: int = 1
    workers: int = 1
    t_grid: Tuple[int, ...] = (50, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)
    mc_draws: int = 8
    bytes_per_element: int = 8

    def __post_init__(self):
        self.patch_sizes = tuple(int(p) for p in self.patch_sizes)
        self.shape = tuple(int(s) for s in self.shape)
        self.t_grid = tuple(int(t) for t in self.t_grid)
        if self.reps < 1 or self.steps < 1 or self.batch < 1 or self.mc_draws < 1:
            raise ConfigError("reps, steps, batch y mc_draws deben ser positivos")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"claves desconocidas en la configuración de bench: {sorted(extra)}")
        return cls(**d)


def config_digest(config: DenoiserConfig) -> str:
    texto = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(texto.encode("utf-8")).hexdigest()[:12]


# ============================================================
# RENDIMIENTO (IMÁGENES / SEGUNDO)
# ============================================================
def matched_configs(patch_sizes: Sequence[int], budget: int, image_shape,
                    base: Optional[DenoiserConfig] = None) -> List[DenoiserConfig]:
    """Para cada P, el ancho cuyo número de parámetros queda más cerca de ``budget``."""
    base = base or DenoiserConfig(channels=image_shape[2])
    H, W, C = image_shape
    elegidas = []
    for P in patch_sizes:
        if H % P or W % P:
            raise ConfigError(f"la imagen {H}x{W} no es divisible por P={P}")
        mejor = None
        for ancho in range(4, 513, 4):
            cfg = replace(base, P=P, width=ancho, channels=C)
            dif = abs(denoiser.parameter_count(cfg) - budget)
            if mejor is None or dif < mejor[0]:
                mejor = (dif, cfg)
        elegidas.append(mejor[1])
    return elegidas


def throughput(configs: Sequence[DenoiserConfig], schedule: Schedule, image_shape, batch: int = 4,
               steps: int = 4, reps: int = 3, warmup: int = 1, workers: int = 1, seed: int = 0,
               progress: bool = False) -> pd.DataFrame:
    """
    Mediana de imágenes/segundo sobre ``reps`` bucles completos de muestreo.
    Las iteraciones de calentamiento no se cuentan.
    """
    filas = []
    for cfg in configs:
        ckpt = denoiser.init(cfg, stream(seed, "init"), schedule.fingerprint)
        modelo = CheckpointModel(ckpt)
        pedido = SampleConfig(count=batch, steps=steps, shape=tuple(image_shape),
                              guidance=GuidanceConfig(threshold="none"), seed=seed)
        for _ in range(warmup):
            sample(pedido, modelo, schedule)
        tasas = []
        for _ in tqdm(range(reps), desc=f"bench P={cfg.P}", leave=False, disable=not progress):
            inicio = time.perf_counter()
            sample(pedido, modelo, schedule)
            tasas.append(batch / (time.perf_counter() - inicio))
        tasas = np.asarray(tasas)
        fila = {
            "config_digest": config_digest(cfg),
            **{f"model.{k}": v for k, v in cfg.to_dict().items()},
            "parameters": denoiser.parameter_count(cfg),
            "batch": batch,
            "steps": steps,
            "reps": reps,
            "warmup": warmup,
            "workers": workers,
            "images_per_second": float(np.median(tasas)),
            "min_ips": float(tasas.min()),
            "max_ips": float(tasas.max()),
            "iqr_ips": float(np.subtract(*np.percentile(tasas, [75, 25]))),
        }
        logger.info("P=%d ancho=%d: %.2f imágenes/s", cfg.P, cfg.width, fila["images_per_second"])
        filas.append(fila)
    return pd.DataFrame(filas)


# ============================================================
# MEMORIA DE ACTIVACIONES (CONTEO ANALÍTICO)
# ============================================================
# Regla de conteo: cada capa guarda su salida completa para la pasada hacia
# atrás; los embeddings de tiempo y clase son vectores por ejemplo.
def activation_memory(config: DenoiserConfig, batch: int, image_shape,
                      bytes_per_element: int = 8) -> pd.DataFrame:
    """Tabla (stage, layer, elements, bytes) del denoiser de este paquete."""
    H, W, C = image_shape
    P = config.P
    if H % P or W % P:
        raise ConfigError(f"la imagen {H}x{W} no es divisible por P={P}")
    h, w = H // P, W // P
    Cp, Wd, D = config.in_channels, config.width, config.time_dim

    capas = [("entrada", "patches", h * w * Cp),
             ("entrada", "embed", h * w * Wd),
             ("tiempo", "time.hidden", D),
             ("tiempo", "time.out", D)]
    if config.classes:
        capas.append(("clase", "class.embed", Wd))
    for i in range(config.blocks):
        for capa in ("norm", "conv1+temb", "silu", "conv2", "residual"):
            capas.append((f"block{i}", capa, h * w * Wd))
        if config.classes:
            capas.append((f"block{i}", "gate", Wd))
    capas += [("salida", "out_norm", h * w * Wd), ("salida", "out", h * w * Cp)]

    df = pd.DataFrame(capas, columns=["stage", "layer", "elements"])
    df["elements"] = df["elements"] * batch
    df["bytes"] = df["elements"] * bytes_per_element
    return df


SUPUESTOS_UNET = [
    "cada capa guarda su salida completa para la pasada hacia atrás",
    "bloque residual = norm, silu, conv, norm, silu, conv y suma residual (7 tensores)",
    "el decodificador usa blocks+1 bloques por nivel y concatena la conexión de salto (1 tensor de 2c)",
    "una reducción o ampliación por cambio de nivel (1 tensor)",
    "sin auto-atención; la referencia P=1 usa los mismos multiplicadores de canal",
    "elementos en float32 (4 bytes); parámetros y estado del optimizador no se cuentan",
]


def unet_activation_memory(base: int = 128, mult: Sequence[int] = (1, 2, 2, 4, 4, 4), blocks: int = 2,
                           image: int = 1024, P: int = 4, channels: int = 3, batch: int = 1,
                           bytes_per_element: int = 4):
    """Conteo de activaciones de una U-Net de varios niveles; devuelve (tabla, supuestos)."""
    r0 = image // P
    if image % P or r0 % (2 ** (len(mult) - 1)):
        raise ConfigError(f"la resolución {image} con P={P} no admite {len(mult)} niveles")
    filas = [("entrada", "patches", r0, channels * P * P, 1),
             ("entrada", "conv_in", r0, base, 1)]
    for nivel, m in enumerate(mult):
        r, c = r0 // 2 ** nivel, base * m
        filas.append((f"enc{nivel}", "resblocks", r, c, 7 * blocks))
        if nivel < len(mult) - 1:
            filas.append((f"enc{nivel}", "down", r // 2, c, 1))
    for nivel in reversed(range(len(mult))):
        r, c = r0 // 2 ** nivel, base * mult[nivel]
        filas.append((f"dec{nivel}", "skip_concat", r, 2 * c, blocks + 1))
        filas.append((f"dec{nivel}", "resblocks", r, c, 7 * (blocks + 1)))
        if nivel > 0:
            filas.append((f"dec{nivel}", "up", 2 * r, c, 1))
    filas.append(("salida", "conv_out", r0, channels * P * P, 1))

    df = pd.DataFrame(filas, columns=["stage", "layer", "resolution", "channels", "tensors"])
    df["elements"] = df["resolution"] ** 2 * df["channels"] * df["tensors"] * batch
    df["bytes"] = df["elements"] * bytes_per_element
    return df, list(SUPUESTOS_UNET)


def memory_reduction(P: int = 4, baseline_P: int = 1, **kwargs) -> float:
    """Cociente de bytes totales: referencia / configuración con parches."""
    con, _ = unet_activation_memory(P=P, **kwargs)
    ref, _ = unet_activation_memory(P=baseline_P, **kwargs)
    return float(ref["bytes"].sum() / con["bytes"].sum())


# ============================================================
# CURVAS DE DISTORSIÓN
# ============================================================
def distortion_curve(model, ds: EmpiricalDataset, schedule: Schedule, t_grid: Sequence[int],
                     mc_draws: int = 8, seed: int = 0, mode: str = "absolute",
                     baseline: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """
    Para cada t, promedio de rmse(x, x̂(z_t, t)) sobre todos los ejemplos y
    ``mc_draws`` ruidos. En modo "ratio" divide por la curva ``baseline``.
    """
    if mc_draws < 1:
        raise ConfigError("mc_draws debe ser >= 1")
    if mode not in ("absolute", "ratio"):
        raise ConfigError(f"modo desconocido '{mode}'")
    if mode == "ratio" and baseline is None:
        raise ConfigError("el modo ratio necesita una curva de referencia")

    rng = stream(seed, "distorsion")
    x = np.repeat(ds.examples, mc_draws, axis=0)
    etiquetas = np.repeat(ds.labels, mc_draws) if ds.labels is not None and model.null_class is not None else None
    filas = []
    for t in t_grid:
        tt = np.full(len(x), int(t), dtype=np.int64)
        z = forward_marginal(x, tt, gaussian(x.shape, rng), schedule)
        pred = model.predict(z, tt, etiquetas) if etiquetas is not None else model.predict(z, tt)
        x_hat = to_x(pred, z, tt, schedule)
        errores = np.sqrt(((x_hat - x) ** 2).reshape(len(x), -1).mean(axis=1))
        filas.append({"t": int(t), "rmse": float(errores.mean()),
                      "stderr": float(errores.std(ddof=1) / np.sqrt(len(errores))) if len(errores) > 1 else 0.0,
                      "draws": len(errores)})
    df = pd.DataFrame(filas)
    if mode == "ratio":
        ref = baseline[["t", "rmse"]].rename(columns={"rmse": "baseline_rmse"})
        df = df.merge(ref, on="t", how="left")
        if df["baseline_rmse"].isna().any():
            faltan = df.loc[df["baseline_rmse"].isna(), "t"].tolist()
            raise ConfigError(f"la curva de referencia no cubre los timesteps {faltan}")
        with np.errstate(divide="ignore", invalid="ignore"):
            df["ratio"] = df["rmse"] / df["baseline_rmse"]
    return df

