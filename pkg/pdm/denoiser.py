"""
Denoiser pequeño con parches y gradientes exactos en modo reverso.

Tubería (sobre la rejilla de parches, formato NHWC):
    to_patches -> proyección puntual a ``width`` -> + codificación posicional 2D
    -> bloques residuales [GroupNorm -> conv -> + emb. de tiempo -> SiLU -> conv
       -> · compuerta sigmoide de clase -> + residuo]
    -> GroupNorm -> proyección puntual a C·P² -> from_patches

La proyección de salida se inicializa en cero: el modelo inicial predice 0.
"""
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from pdm.core import RngStream, Tensor, deserialize_from, gaussian, serialize
from pdm.errores import ConfigError, FormatError, ShapeError
from pdm.param import Kind, Prediction
from pdm.patching import from_patches, to_patches

logger = logging.getLogger(__name__)

EPS_NORM = 1e-5
FORMATO = "pdm-checkpoint"


# ============================================================
# CONFIGURACIÓN Y ESTADO
# ============================================================
@dataclass
class DenoiserConfig:
    P: int = 1
    width: int = 32
    blocks: int = 2
    kernel: int = 3
    time_dim: int = 32
    classes: Optional[int] = None
    kind: Kind = Kind.X
    channels: int = 3
    pos_enc: bool = True
    timesteps: int = 1000

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if self.width <= 0:
            raise ConfigError(f"width debe ser > 0, se recibió {self.width}")
        if self.blocks < 1:
            raise ConfigError(f"blocks debe ser >= 1, se recibió {self.blocks}")
        if self.kernel not in (1, 3):
            raise ConfigError(f"kernel debe ser 1 o 3, se recibió {self.kernel}")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ConfigError(f"time_dim debe ser par y >= 2, se recibió {self.time_dim}")
        if self.P < 1 or self.channels < 1:
            raise ConfigError("P y channels deben ser positivos")
        if self.classes is not None and self.classes < 1:
            raise ConfigError(f"classes debe ser >= 1 o nulo, se recibió {self.classes}")

    @property
    def in_channels(self) -> int:
        return self.channels * self.P * self.P

    @property
    def groups(self) -> int:
        """Mayor divisor de width que no supera 8 (min(8, width) cuando divide)."""
        return max(g for g in range(1, min(8, self.width) + 1) if self.width % g == 0)

    @property
    def null_class(self) -> Optional[int]:
        return self.classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        conocidos = {f.name for f in fields(cls)}
        extra = set(d) - conocidos
        if extra:
            raise ConfigError(f"claves desconocidas en la configuración del modelo: {sorted(extra)}")
        return cls(**d)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class Checkpoint:
    config: DenoiserConfig
    params: Dict[str, np.ndarray]
    ema_params: Dict[str, np.ndarray]
    opt_state: AdamState
    schedule_fingerprint: str = ""


def param_shapes(config: DenoiserConfig) -> "OrderedDict[str, tuple]":
    """Forma de cada parámetro entrenable, en orden canónico."""
    Cp, Wd, D, k = config.in_channels, config.width, config.time_dim, config.kernel
    formas = OrderedDict()
    formas["embed.w"] = (Cp, Wd)
    formas["embed.b"] = (Wd,)
    formas["time.w1"] = (D, D)
    formas["time.b1"] = (D,)
    formas["time.w2"] = (D, D)
    formas["time.b2"] = (D,)
    if config.classes:
        formas["class.table"] = (config.classes + 1, Wd)
    for i in range(config.blocks):
        formas[f"block{i}.norm.gamma"] = (Wd,)
        formas[f"block{i}.norm.beta"] = (Wd,)
        formas[f"block{i}.conv1.w"] = (k, k, Wd, Wd)
        formas[f"block{i}.conv1.b"] = (Wd,)
        formas[f"block{i}.temb.w"] = (D, Wd)
        formas[f"block{i}.temb.b"] = (Wd,)
        formas[f"block{i}.conv2.w"] = (k, k, Wd, Wd)
        formas[f"block{i}.conv2.b"] = (Wd,)
        if config.classes:
            formas[f"block{i}.gate.w"] = (Wd, Wd)
            formas[f"block{i}.gate.b"] = (Wd,)
    formas["out_norm.gamma"] = (Wd,)
    formas["out_norm.beta"] = (Wd,)
    formas["out.w"] = (Wd, Cp)
    formas["out.b"] = (Cp,)
    return formas


def parameter_count(config: DenoiserConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init(config: DenoiserConfig, rng: RngStream, schedule_fingerprint: str = "") -> Checkpoint:
    """Pesos con escala 1/sqrt(fan_in), sesgos en cero, normas en (1, 0), salida en cero."""
    params = {}
    for nombre, forma in param_shapes(config).items():
        hoja = nombre.rsplit(".", 1)[-1]
        if nombre.startswith("out.") or hoja in ("b", "b1", "b2"):
            params[nombre] = np.zeros(forma)
        elif nombre.endswith(".gamma"):
            params[nombre] = np.ones(forma)
        elif nombre.endswith(".beta"):
            params[nombre] = np.zeros(forma)
        elif nombre == "class.table":
            params[nombre] = gaussian(forma, rng.child(nombre))
        else:
            fan_in = int(np.prod(forma[:-1]))
            params[nombre] = gaussian(forma, rng.child(nombre)) / math.sqrt(fan_in)
    return Checkpoint(
        config=config,
        params=params,
        ema_params={k: v.copy() for k, v in params.items()},
        opt_state=AdamState(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        ),
        schedule_fingerprint=schedule_fingerprint,
    )


# ============================================================
# CAPAS (ADELANTE / ATRÁS)
# ============================================================
def _silu(a):
    return a * expit(a)


def _silu_grad(a):
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


def _conv(x, K, b):
    k = K.shape[0]
    if k == 1:
        return x @ K[0, 0] + b
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.einsum("nhwcij,ijco->nhwo", cols, K, optimize=True) + b


def _conv_back(dout, x, K):
    k = K.shape[0]
    db = dout.sum(axis=(0, 1, 2))
    if k == 1:
        dK = np.einsum("nhwc,nhwo->co", x, dout, optimize=True)[None, None]
        return dout @ K[0, 0].T, dK, db
    r = k // 2
    N, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))
    dK = np.einsum("nhwcij,nhwo->ijco", cols, dout, optimize=True)
    dcols = np.einsum("nhwo,ijco->nhwcij", dout, K, optimize=True)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
    return dxp[:, r:r + h, r:r + w, :], dK, db


def _groupnorm(x, gamma, beta, G):
    N, h, w, C = x.shape
    xr = x.reshape(N, h, w, G, C // G)
    mu = xr.mean(axis=(1, 2, 4), keepdims=True)
    var = xr.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + EPS_NORM)
    xhat = ((xr - mu) * inv).reshape(x.shape)
    return xhat * gamma + beta, (xhat, inv, G)


def _groupnorm_back(dy, cache, gamma):
    xhat, inv, G = cache
    N, h, w, C = dy.shape
    dgamma = (dy * xhat).sum(axis=(0, 1, 2))
    dbeta = dy.sum(axis=(0, 1, 2))
    dxhat = (dy * gamma).reshape(N, h, w, G, C // G)
    xh = xhat.reshape(N, h, w, G, C // G)
    M = h * w * (C // G)
    s1 = dxhat.sum(axis=(1, 2, 4), keepdims=True)
    s2 = (dxhat * xh).sum(axis=(1, 2, 4), keepdims=True)
    dx = inv / M * (M * dxhat - s1 - xh * s2)
    return dx.reshape(dy.shape), dgamma, dbeta


def timestep_features(t: np.ndarray, T: int, dim: int) -> np.ndarray:
    """Senoides del timestep escalado a [0, 1]."""
    s = np.asarray(t, dtype=np.float64) / float(T)
    mitad = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(mitad) / mitad)
    arg = 1000.0 * s[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def positional_encoding_2d(h: int, w: int, width: int) -> np.ndarray:
    """Codificación senoidal 2D fija (h, w, width); los canales sobrantes quedan en cero."""
    pe = np.zeros((h, w, width))
    q = width // 4
    if q == 0:
        return pe
    freqs = 1.0 / (10000.0 ** (np.arange(q) / q))
    ys = np.arange(h)[:, None] * freqs
    xs = np.arange(w)[:, None] * freqs
    pe[:, :, 0 * q:1 * q] = np.sin(ys)[:, None, :]
    pe[:, :, 1 * q:2 * q] = np.cos(ys)[:, None, :]
    pe[:, :, 2 * q:3 * q] = np.sin(xs)[None, :, :]
    pe[:, :, 3 * q:4 * q] = np.cos(xs)[None, :, :]
    return pe


# ============================================================
# PASADA HACIA ADELANTE
# ============================================================
@dataclass
class Tape:
    """Intermedios grabados por ``forward_with_tape`` para ``backward``."""
    use_ema: bool
    patches: np.ndarray
    labels: Optional[np.ndarray]
    feats: np.ndarray
    a1: np.ndarray
    s1: np.ndarray
    emb: np.ndarray
    class_emb: Optional[np.ndarray]
    blocks: List[dict]
    out_norm_cache: tuple
    n_out: np.ndarray


def _validar_entradas(cfg: DenoiserConfig, z_t, t, labels):
    if z_t.ndim != 4 or z_t.shape[3] != cfg.channels:
        raise ShapeError(f"se esperaba (N, H, W, {cfg.channels}), forma recibida {z_t.shape}")
    N = len(z_t)
    t = np.broadcast_to(np.asarray(t), (N,))
    if not np.issubdtype(t.dtype, np.integer) or np.any(t < 0) or np.any(t > cfg.timesteps):
        raise ShapeError(f"timesteps fuera de [0, {cfg.timesteps}]: {t}")
    if cfg.classes:
        if labels is None:
            labels = np.full(N, cfg.null_class, dtype=np.int64)
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (N,))
        if np.any(labels < 0) or np.any(labels > cfg.classes):
            raise ShapeError(f"etiquetas fuera de [0, {cfg.classes}]: {labels}")
    elif labels is not None:
        raise ConfigError("el modelo no es condicional pero se recibieron etiquetas")
    return t, labels


def forward_with_tape(ckpt: Checkpoint, z_t: Tensor, t, labels=None, use_ema: bool = False):
    cfg = ckpt.config
    prm = ckpt.ema_params if use_ema else ckpt.params
    t, labels = _validar_entradas(cfg, z_t, t, labels)

    # PASO 1: parches y proyección de entrada
    p = to_patches(z_t, cfg.P)
    h = p @ prm["embed.w"] + prm["embed.b"]
    if cfg.pos_enc:
        h = h + positional_encoding_2d(h.shape[1], h.shape[2], cfg.width)

    # PASO 2: embedding de tiempo (dos capas) y de clase
    feats = timestep_features(t, cfg.timesteps, cfg.time_dim)
    a1 = feats @ prm["time.w1"] + prm["time.b1"]
    s1 = _silu(a1)
    emb = s1 @ prm["time.w2"] + prm["time.b2"]
    class_emb = prm["class.table"][labels] if cfg.classes else None

    # PASO 3: bloques residuales
    cintas = []
    for i in range(cfg.blocks):
        pre = f"block{i}."
        n, cache_n = _groupnorm(h, prm[pre + "norm.gamma"], prm[pre + "norm.beta"], cfg.groups)
        c1 = _conv(n, prm[pre + "conv1.w"], prm[pre + "conv1.b"])
        a = c1 + (emb @ prm[pre + "temb.w"] + prm[pre + "temb.b"])[:, None, None, :]
        s = _silu(a)
        c2 = _conv(s, prm[pre + "conv2.w"], prm[pre + "conv2.b"])
        g = None
        r = c2
        if cfg.classes:
            g = expit(class_emb @ prm[pre + "gate.w"] + prm[pre + "gate.b"])
            r = c2 * g[:, None, None, :]
        cintas.append(dict(n=n, cache_n=cache_n, a=a, s=s, c2=c2, g=g))
        h = h + r

    # PASO 4: normalización final y proyección a C·P² canales
    n_out, cache_out = _groupnorm(h, prm["out_norm.gamma"], prm["out_norm.beta"], cfg.groups)
    o = n_out @ prm["out.w"] + prm["out.b"]
    salida = from_patches(o, cfg.P)

    tape = Tape(use_ema=use_ema, patches=p, labels=labels, feats=feats, a1=a1, s1=s1,
                emb=emb, class_emb=class_emb, blocks=cintas,
                out_norm_cache=cache_out, n_out=n_out)
    return Prediction(cfg.kind, salida), tape


def forward(ckpt: Checkpoint, z_t: Tensor, t, labels=None, use_ema: bool = False) -> Prediction:
    pred, _ = forward_with_tape(ckpt, z_t, t, labels, use_ema)
    return pred


# ============================================================
# PASADA HACIA ATRÁS
# ============================================================
def backward(ckpt: Checkpoint, tape: Tape, grad_output: Tensor) -> Dict[str, np.ndarray]:
    """Gradiente de cada parámetro entrenable dado dL/d(salida)."""
    cfg = ckpt.config
    prm = ckpt.ema_params if tape.use_ema else ckpt.params
    grads = {}

    # la adjunta de from_patches es to_patches (permutación)
    do = to_patches(grad_output, cfg.P)
    grads["out.w"] = np.einsum("nhwc,nhwo->co", tape.n_out, do, optimize=True)
    grads["out.b"] = do.sum(axis=(0, 1, 2))
    dn = do @ prm["out.w"].T
    dh, grads["out_norm.gamma"], grads["out_norm.beta"] = _groupnorm_back(
        dn, tape.out_norm_cache, prm["out_norm.gamma"])

    demb = np.zeros_like(tape.emb)
    dclass = np.zeros_like(tape.class_emb) if cfg.classes else None
    for i in reversed(range(cfg.blocks)):
        pre = f"block{i}."
        c = tape.blocks[i]
        dr = dh
        if cfg.classes:
            dc2 = dr * c["g"][:, None, None, :]
            dg = (dr * c["c2"]).sum(axis=(1, 2))
            dpre = dg * c["g"] * (1.0 - c["g"])
            grads[pre + "gate.w"] = tape.class_emb.T @ dpre
            grads[pre + "gate.b"] = dpre.sum(axis=0)
            dclass += dpre @ prm[pre + "gate.w"].T
        else:
            dc2 = dr
        ds, grads[pre + "conv2.w"], grads[pre + "conv2.b"] = _conv_back(dc2, c["s"], prm[pre + "conv2.w"])
        da = ds * _silu_grad(c["a"])
        dtb = da.sum(axis=(1, 2))
        grads[pre + "temb.w"] = tape.emb.T @ dtb
        grads[pre + "temb.b"] = dtb.sum(axis=0)
        demb += dtb @ prm[pre + "temb.w"].T
        dn, grads[pre + "conv1.w"], grads[pre + "conv1.b"] = _conv_back(da, c["n"], prm[pre + "conv1.w"])
        dh_rama, grads[pre + "norm.gamma"], grads[pre + "norm.beta"] = _groupnorm_back(
            dn, c["cache_n"], prm[pre + "norm.gamma"])
        dh = dh + dh_rama

    # la codificación posicional es fija: no recibe gradiente
    grads["embed.w"] = np.einsum("nhwc,nhwo->co", tape.patches, dh, optimize=True)
    grads["embed.b"] = dh.sum(axis=(0, 1, 2))

    grads["time.w2"] = tape.s1.T @ demb
    grads["time.b2"] = demb.sum(axis=0)
    da1 = (demb @ prm["time.w2"].T) * _silu_grad(tape.a1)
    grads["time.w1"] = tape.feats.T @ da1
    grads["time.b1"] = da1.sum(axis=0)

    if cfg.classes:
        dtabla = np.zeros_like(prm["class.table"])
        np.add.at(dtabla, tape.labels, dclass)
        grads["class.table"] = dtabla
    return grads


# ============================================================
# PERSISTENCIA
# ============================================================
def save_checkpoint(ckpt: Checkpoint, ruta) -> Path:
    """Directorio con ``manifest.json`` y ``tensors.bin`` (blobs PDMT concatenados)."""
    ruta = Path(ruta)
    ruta.mkdir(parents=True, exist_ok=True)
    grupos = {"params": ckpt.params, "ema": ckpt.ema_params,
              "adam_m": ckpt.opt_state.m, "adam_v": ckpt.opt_state.v}
    directorio, partes, offset = {}, [], 0
    for grupo, tensores in grupos.items():
        for nombre in sorted(tensores):
            blob = serialize(tensores[nombre])
            directorio[f"{grupo}/{nombre}"] = {"offset": offset, "shape": list(tensores[nombre].shape)}
            partes.append(blob)
            offset += len(blob)
    (ruta / "tensors.bin").write_bytes(b"".join(partes))
    manifiesto = {
        "format": FORMATO,
        "version": 1,
        "config": ckpt.config.to_dict(),
        "schedule_fingerprint": ckpt.schedule_fingerprint,
        "opt_step": ckpt.opt_state.step,
        "tensors": directorio,
    }
    (ruta / "manifest.json").write_text(json.dumps(manifiesto, indent=2))
    logger.debug("checkpoint guardado en %s (%d tensores)", ruta, len(directorio))
    return ruta


def load_checkpoint(ruta) -> Checkpoint:
    ruta = Path(ruta)
    try:
        manifiesto = json.loads((ruta / "manifest.json").read_text())
        blob = (ruta / "tensors.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"no se pudo leer el checkpoint {ruta}: {e}") from e
    if manifiesto.get("format") != FORMATO:
        raise FormatError(f"{ruta} no es un checkpoint ({manifiesto.get('format')!r})")

    config = DenoiserConfig.from_dict(manifiesto["config"])
    grupos = {"params": {}, "ema": {}, "adam_m": {}, "adam_v": {}}
    for clave, info in manifiesto["tensors"].items():
        grupo, nombre = clave.split("/", 1)
        tensor, _ = deserialize_from(blob, info["offset"])
        grupos[grupo][nombre] = tensor

    esperadas = param_shapes(config)
    for grupo, tensores in grupos.items():
        for nombre, forma in esperadas.items():
            if nombre not in tensores or tensores[nombre].shape != forma:
                raise FormatError(f"{ruta}: tensor {grupo}/{nombre} ausente o con forma inesperada")
    return Checkpoint(
        config=config,
        params=grupos["params"],
        ema_params=grupos["ema"],
        opt_state=AdamState(m=grupos["adam_m"], v=grupos["adam_v"], step=int(manifiesto["opt_step"])),
        schedule_fingerprint=manifiesto.get("schedule_fingerprint", ""),
    )


# ============================================================
# ADAPTADOR PARA EL MUESTREADOR
# ============================================================
class CheckpointModel:
    """Envuelve un checkpoint con la interfaz ``predict`` del muestreador."""

    def __init__(self, ckpt: Checkpoint, use_ema: bool = True):
        self.ckpt = ckpt
        self.use_ema = use_ema
        self.kind = ckpt.config.kind
        self.patch_size = ckpt.config.P
        self.schedule_fingerprint = ckpt.schedule_fingerprint

    @property
    def null_class(self):
        return self.ckpt.config.null_class

    def predict(self, z_t: Tensor, t, labels=None) -> Prediction:
        return forward(self.ckpt, z_t, t, labels, self.use_ema)
