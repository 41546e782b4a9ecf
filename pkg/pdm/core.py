"""
Aritmética mínima de tensores, azar gaussiano determinista y serialización.

Un "tensor" del motor es simplemente un ``numpy.ndarray`` de reales de 64 bits
en orden fila-mayor (el último eje varía más rápido). Las imágenes siguen el
índice semántico (lote, alto, ancho, canales).
"""
import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from pdm.errores import FormatError, NonFiniteError, ShapeError

Tensor = np.ndarray
Escalar = Union[float, int]

MAGIA = b"PDMT"
VERSION = 1
_MASCARA_64 = (1 << 64) - 1


# ============================================================
# VALIDACIONES
# ============================================================
def as_tensor(x) -> Tensor:
    """Convierte a ndarray float64 contiguo y verifica que sea finito."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    return check_finite(t)


def check_finite(t: Tensor, operacion: str = "operación") -> Tensor:
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{operacion} produjo valores no finitos")
    return t


def check_same_shape(a: Tensor, b: Tensor, operacion: str = "operación") -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(
            f"{operacion}: formas incompatibles {tuple(np.shape(a))} y {tuple(np.shape(b))}"
        )


# ============================================================
# OPERACIONES ELEMENTALES
# ============================================================
def add(a: Tensor, b: Tensor) -> Tensor:
    check_same_shape(a, b, "add")
    return check_finite(np.add(a, b), "add")


def scale(a: Tensor, k: Escalar) -> Tensor:
    return check_finite(np.multiply(a, float(k)), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    check_same_shape(a, b, "mul")
    return check_finite(np.multiply(a, b), "mul")


def total(a: Tensor, axis=None):
    return check_finite(np.sum(a, axis=axis), "total")


def mean(a: Tensor, axis=None):
    return check_finite(np.mean(a, axis=axis), "mean")


def rmse(a: Tensor, b: Tensor, axis=None):
    """sqrt(mean((a - b)^2)); con ``axis`` se reduce sólo sobre esos ejes."""
    check_same_shape(a, b, "rmse")
    d = np.subtract(a, b)
    return check_finite(np.sqrt(np.mean(d * d, axis=axis)), "rmse")


def percentile(a: Tensor, p: float, axis=None):
    """Percentil con interpolación lineal sobre los valores ordenados."""
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentil fuera de [0, 100]: {p}")
    return np.percentile(a, p, axis=axis, method="linear")


# ============================================================
# AZAR DETERMINISTA (PHILOX, BASADO EN CONTADOR)
# ============================================================
@dataclass
class RngStream:
    """
    Flujo aleatorio reproducible.

    Cada extracción usa un Philox con llave (seed, stream) y contador de bloque
    ``counter`` en la tercera palabra; luego el contador avanza en uno. Así,
    (seed, stream, counter) determina la salida sin importar qué hilo la pida.
    """
    seed: int
    stream: int = 0
    counter: int = 0

    def _generador(self) -> np.random.Generator:
        llave = np.array([self.seed & _MASCARA_64, self.stream & _MASCARA_64], dtype=np.uint64)
        contador = np.array([0, 0, self.counter & _MASCARA_64, 0], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=llave, counter=contador))

    def uniform(self, shape: Sequence[int] = ()) -> Tensor:
        return self._generador().random(tuple(shape))

    def integers(self, low: int, high: int, shape: Sequence[int] = ()) -> np.ndarray:
        """Enteros en [low, high)."""
        return self._generador().integers(low, high, size=tuple(shape))

    def child(self, nombre: str) -> "RngStream":
        return stream(self.seed, f"{self.stream}/{nombre}")


def stream(seed: int, nombre: str) -> RngStream:
    """Sub-flujo con nombre; el id sale de un hash estable del nombre."""
    digest = hashlib.blake2b(nombre.encode("utf-8"), digest_size=8).digest()
    return RngStream(seed=int(seed), stream=int.from_bytes(digest, "little"))


def gaussian(shape: Sequence[int], rng: RngStream) -> Tensor:
    """Entradas i.i.d. N(0, 1); avanza el contador de ``rng``."""
    return rng._generador().standard_normal(tuple(shape))


# ============================================================
# SERIALIZACIÓN (BLOB "PDMT")
# ============================================================
def serialize(t: Tensor) -> bytes:
    """magia "PDMT", versión u32, rango u32, extensiones u64[rango], datos f64 LE."""
    t = as_tensor(t)
    cabecera = MAGIA + struct.pack("<II", VERSION, t.ndim)
    cabecera += struct.pack(f"<{t.ndim}Q", *t.shape)
    return cabecera + t.astype("<f8").tobytes(order="C")


def deserialize(blob: bytes) -> Tensor:
    t, _ = deserialize_from(blob, 0)
    return t


def deserialize_from(blob: bytes, offset: int) -> Tuple[Tensor, int]:
    """Lee un tensor desde ``offset``; devuelve (tensor, offset siguiente)."""
    if blob[offset:offset + 4] != MAGIA:
        raise FormatError(f"magia inválida en el byte {offset}")
    try:
        version, rango = struct.unpack_from("<II", blob, offset + 4)
        if version != VERSION:
            raise FormatError(f"versión de blob no soportada: {version}")
        inicio = offset + 12
        forma = struct.unpack_from(f"<{rango}Q", blob, inicio)
        inicio += 8 * rango
        n = int(np.prod(forma, dtype=np.int64)) if rango else 1
        fin = inicio + 8 * n
        if fin > len(blob):
            raise FormatError(f"blob truncado: se esperaban {fin} bytes, hay {len(blob)}")
        datos = np.frombuffer(blob, dtype="<f8", count=n, offset=inicio)
    except struct.error as e:
        raise FormatError(f"cabecera truncada en el byte {offset}: {e}") from e
    return datos.astype(np.float64).reshape(forma), fin
