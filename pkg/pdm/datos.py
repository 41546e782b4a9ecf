"""
Ingesta de conjuntos de datos y E/S de imágenes.

Formatos: PPM (P6) / PGM (P5) binarios de 8 bits, IDX ubyte (imágenes 0x803,
etiquetas 0x801) y conjuntos sintéticos. Los bytes v se llevan a v/127.5 - 1.
"""
import logging
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pdm.core import stream
from pdm.errores import ConfigError, DatasetError
from pdm.oracle import EmpiricalDataset

logger = logging.getLogger(__name__)

MAGIA_IDX_IMAGENES = 0x00000803
MAGIA_IDX_ETIQUETAS = 0x00000801
EXTENSIONES = (".ppm", ".pgm")
FUENTES = ("ppm_dir", "idx", "synthetic")


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    path: Optional[str] = None
    labels_path: Optional[str] = None
    name: str = "stripes"
    params: dict = field(default_factory=dict)
    shape: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        if self.source not in FUENTES:
            raise ConfigError(f"fuente de datos desconocida '{self.source}', opciones: {FUENTES}")
        if self.source != "synthetic" and not self.path:
            raise ConfigError(f"la fuente '{self.source}' necesita 'path'")
        if self.shape is not None:
            self.shape = tuple(int(s) for s in self.shape)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"claves desconocidas en la configuración de datos: {sorted(extra)}")
        return cls(**d)


def normalize(valores: np.ndarray) -> np.ndarray:
    """Bytes [0, 255] -> [-1, 1]."""
    return np.asarray(valores, dtype=np.float64) / 127.5 - 1.0


def to_bytes(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> bytes, con redondeo y recorte."""
    return np.clip(np.rint((np.asarray(x) + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ============================================================
# PPM / PGM
# ============================================================
def _leer_tokens(datos: bytes, ruta, n: int):
    """Lee ``n`` tokens de cabecera (saltando comentarios); devuelve (tokens, offset)."""
    tokens, i = [], 0
    while len(tokens) < n:
        while i < len(datos) and datos[i:i + 1].isspace():
            i += 1
        if i >= len(datos):
            raise DatasetError(f"{ruta}: cabecera truncada (byte {i})")
        if datos[i:i + 1] == b"#":
            while i < len(datos) and datos[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        ini = i
        while i < len(datos) and not datos[i:i + 1].isspace() and datos[i:i + 1] != b"#":
            i += 1
        tokens.append((datos[ini:i], ini))
    # exactamente un espacio separa la cabecera de los datos
    if i >= len(datos) or not datos[i:i + 1].isspace():
        raise DatasetError(f"{ruta}: falta el separador tras la cabecera (byte {i})")
    return tokens, i + 1


def read_pnm(ruta) -> np.ndarray:
    """Imagen (H, W, C) uint8 desde un PPM P6 (C=3) o PGM P5 (C=1)."""
    ruta = Path(ruta)
    datos = ruta.read_bytes()
    tokens, offset = _leer_tokens(datos, ruta, 4)
    magia = tokens[0][0]
    if magia not in (b"P5", b"P6"):
        raise DatasetError(f"{ruta}: número mágico {magia!r} no soportado (byte 0)")
    valores = []
    for texto, pos in tokens[1:]:
        try:
            valores.append(int(texto))
        except ValueError:
            raise DatasetError(f"{ruta}: entero inválido {texto!r} en la cabecera (byte {pos})") from None
    ancho, alto, maximo = valores
    if ancho < 1 or alto < 1:
        raise DatasetError(f"{ruta}: dimensiones inválidas {ancho}x{alto} (byte {tokens[1][1]})")
    if maximo != 255:
        raise DatasetError(f"{ruta}: solo se admiten imágenes de 8 bits, maxval={maximo} (byte {tokens[3][1]})")
    C = 3 if magia == b"P6" else 1
    esperado = ancho * alto * C
    if len(datos) - offset < esperado:
        raise DatasetError(
            f"{ruta}: datos truncados, se esperaban {esperado} bytes desde el byte {offset}, "
            f"hay {len(datos) - offset}"
        )
    pixeles = np.frombuffer(datos, dtype=np.uint8, count=esperado, offset=offset)
    return pixeles.reshape(alto, ancho, C)


def write_pnm(ruta, imagen: np.ndarray) -> Path:
    """Escribe (H, W, 3) como P6 o (H, W, 1) como P5; acepta uint8 o valores en [-1, 1]."""
    ruta = Path(ruta)
    imagen = np.asarray(imagen)
    if imagen.dtype != np.uint8:
        imagen = to_bytes(imagen)
    if imagen.ndim != 3 or imagen.shape[2] not in (1, 3):
        raise DatasetError(f"{ruta}: se esperaba (H, W, 1) o (H, W, 3), forma {imagen.shape}")
    alto, ancho, C = imagen.shape
    magia = b"P6" if C == 3 else b"P5"
    ruta.parent.mkdir(parents=True, exist_ok=True)
    ruta.write_bytes(magia + f"\n{ancho} {alto}\n255\n".encode("ascii") + imagen.tobytes())
    return ruta


def load_ppm_dir(ruta) -> EmpiricalDataset:
    """
    Carga todas las imágenes de un directorio en orden lexicográfico.
    Si hay subdirectorios, cada uno (en orden) es una clase.
    """
    ruta = Path(ruta)
    if not ruta.is_dir():
        raise DatasetError(f"{ruta}: no es un directorio")
    subdirs = sorted(p for p in ruta.iterdir() if p.is_dir())
    grupos = [(i, d) for i, d in enumerate(subdirs)] if subdirs else [(None, ruta)]

    imagenes, etiquetas = [], []
    for etiqueta, carpeta in grupos:
        archivos = sorted(p for p in carpeta.iterdir() if p.suffix.lower() in EXTENSIONES)
        for archivo in archivos:
            img = read_pnm(archivo)
            if imagenes and img.shape != imagenes[0].shape:
                raise DatasetError(f"{archivo}: forma {img.shape} distinta de {imagenes[0].shape}")
            imagenes.append(img)
            etiquetas.append(etiqueta)
    if not imagenes:
        raise DatasetError(f"{ruta}: no contiene imágenes PPM/PGM")
    labels = np.asarray(etiquetas, dtype=np.int64) if subdirs else None
    logger.info("cargadas %d imágenes de %s", len(imagenes), ruta)
    return EmpiricalDataset(normalize(np.stack(imagenes)), labels)


# ============================================================
# IDX
# ============================================================
def read_idx(ruta) -> np.ndarray:
    """Arreglo uint8 de un archivo IDX ubyte (cabecera big-endian)."""
    ruta = Path(ruta)
    datos = ruta.read_bytes()
    if len(datos) < 4:
        raise DatasetError(f"{ruta}: archivo IDX truncado (byte {len(datos)})")
    (magia,) = struct.unpack(">I", datos[:4])
    if magia not in (MAGIA_IDX_IMAGENES, MAGIA_IDX_ETIQUETAS):
        raise DatasetError(f"{ruta}: número mágico IDX 0x{magia:08x} no soportado (byte 0)")
    rango = magia & 0xFF
    fin_cabecera = 4 + 4 * rango
    if len(datos) < fin_cabecera:
        raise DatasetError(f"{ruta}: cabecera IDX truncada (byte {len(datos)})")
    dims = struct.unpack(f">{rango}I", datos[4:fin_cabecera])
    esperado = int(np.prod(dims))
    if len(datos) - fin_cabecera < esperado:
        raise DatasetError(
            f"{ruta}: datos IDX truncados, se esperaban {esperado} bytes desde el byte {fin_cabecera}"
        )
    return np.frombuffer(datos, dtype=np.uint8, count=esperado, offset=fin_cabecera).reshape(dims)


def load_idx(ruta, labels_path=None) -> EmpiricalDataset:
    imagenes = read_idx(ruta)
    if imagenes.ndim != 3:
        raise DatasetError(f"{ruta}: se esperaban imágenes N×H×W, rango {imagenes.ndim}")
    etiquetas = None
    if labels_path is not None:
        etiquetas = read_idx(labels_path)
        if etiquetas.ndim != 1:
            raise DatasetError(f"{labels_path}: se esperaban etiquetas N, rango {etiquetas.ndim}")
    return EmpiricalDataset(normalize(imagenes[..., None]), etiquetas)


# ============================================================
# CONJUNTOS SINTÉTICOS
# ============================================================
def two_point(a: float = 0.9, dims: int = 1) -> EmpiricalDataset:
    """Dos ejemplos {+a, -a} en cada una de ``dims`` coordenadas."""
    x = np.array([a, -a], dtype=np.float64).reshape(2, 1, 1, 1)
    return EmpiricalDataset(np.repeat(x, dims, axis=3))


def points(values: Sequence[float]) -> EmpiricalDataset:
    """Un ejemplo escalar por valor."""
    return EmpiricalDataset(np.asarray(values, dtype=np.float64).reshape(-1, 1, 1, 1))


def stripes(n: int = 32, size: int = 8, channels: int = 3, seed: int = 0) -> EmpiricalDataset:
    """
    Dos modos etiquetados: rayas horizontales (clase 0) y verticales (clase 1),
    con fase y contraste aleatorios.
    """
    rng = stream(seed, "datos/stripes")
    clases = np.arange(n) % 2
    fases = rng.integers(0, 2, (n,))
    contraste = 0.5 + 0.4 * rng.uniform((n,))
    tinte = 0.7 + 0.3 * rng.uniform((n, channels))
    filas = np.arange(size)
    patron = np.where((filas[None, :] + fases[:, None]) % 2 == 0, 1.0, -1.0)
    imgs = np.where(clases[:, None, None] == 0, patron[:, :, None], patron[:, None, :])
    x = imgs[..., None] * (contraste[:, None, None, None] * tinte[:, None, None, :])
    return EmpiricalDataset(x, clases)


def blobs(n: int = 32, size: int = 8, channels: int = 3, seed: int = 0) -> EmpiricalDataset:
    """Imágenes suaves: suma de gaussianas con centro, ancho y signo aleatorios."""
    rng = stream(seed, "datos/blobs")
    k = 3
    centros = rng.uniform((n, k, 2)) * size
    anchos = 1.0 + rng.uniform((n, k)) * size / 3.0
    pesos = rng.uniform((n, k, channels)) * 2.0 - 1.0
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    d2 = (yy[None, None] - centros[..., 0, None, None]) ** 2 + (xx[None, None] - centros[..., 1, None, None]) ** 2
    bultos = np.exp(-d2 / (2.0 * anchos[..., None, None] ** 2))
    x = np.einsum("nkhw,nkc->nhwc", bultos, pesos)
    return EmpiricalDataset(np.tanh(x))


SINTETICOS = {"two_point": two_point, "points": points, "stripes": stripes, "blobs": blobs}


def load_dataset(spec: DatasetSpec, seed: int = 0) -> EmpiricalDataset:
    if spec.source == "ppm_dir":
        ds = load_ppm_dir(spec.path)
    elif spec.source == "idx":
        ds = load_idx(spec.path, spec.labels_path)
    else:
        if spec.name not in SINTETICOS:
            raise ConfigError(f"conjunto sintético desconocido '{spec.name}', opciones: {sorted(SINTETICOS)}")
        params = dict(spec.params)
        if spec.name in ("stripes", "blobs"):
            params.setdefault("seed", seed)
        try:
            ds = SINTETICOS[spec.name](**params)
        except TypeError as e:
            raise ConfigError(f"parámetros inválidos para '{spec.name}': {e}") from None
    if spec.shape is not None and tuple(ds.shape) != spec.shape:
        raise DatasetError(f"forma declarada {spec.shape} pero el conjunto tiene {tuple(ds.shape)}")
    return ds


# ============================================================
# HOJAS DE IMÁGENES
# ============================================================
def image_grid(imagenes: np.ndarray, cols: Optional[int] = None, pad: int = 1, fondo: float = 1.0) -> np.ndarray:
    """Mosaico (H', W', C) de un lote (N, H, W, C), relleno con ``fondo``."""
    N, H, W, C = imagenes.shape
    cols = cols or int(np.ceil(np.sqrt(N)))
    filas = int(np.ceil(N / cols))
    hoja = np.full((filas * (H + pad) + pad, cols * (W + pad) + pad, C), fondo, dtype=np.float64)
    for i, img in enumerate(imagenes):
        f, c = divmod(i, cols)
        y, x = pad + f * (H + pad), pad + c * (W + pad)
        hoja[y:y + H, x:x + W] = img
    return hoja


def write_images(directorio, imagenes: np.ndarray, prefijo: str = "muestra") -> List[Path]:
    directorio = Path(directorio)
    return [write_pnm(directorio / f"{prefijo}_{i:04d}.{'ppm' if img.shape[2] == 3 else 'pgm'}", img)
            for i, img in enumerate(imagenes)]
