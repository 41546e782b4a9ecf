"""
Transformación parche / des-parche entre imágenes (N, H, W, C) y rejillas
(N, H/P, W/P, C·P²).

Mapeo normativo:
    out[n, hp, wp, j·P·C + i·C + c] = x[n, hp·P + j, wp·P + i, c]
(desplazamiento vertical j el más lento, luego horizontal i, canal c el más rápido).
Es una permutación de coordenadas: lineal, exacta y sin relleno.
"""
from dataclasses import dataclass

import numpy as np

from pdm.core import Tensor
from pdm.errores import PatchError


@dataclass(frozen=True)
class PatchConfig:
    P: int = 1

    def __post_init__(self):
        if int(self.P) < 1:
            raise PatchError(f"el tamaño de parche debe ser positivo, se recibió {self.P}")


def to_patches(x: Tensor, P: int) -> Tensor:
    if x.ndim != 4:
        raise PatchError(f"se esperaba un lote (N, H, W, C), forma recibida {x.shape}")
    N, H, W, C = x.shape
    if P < 1 or H % P or W % P:
        raise PatchError(f"H={H} y W={W} deben ser divisibles por P={P}")
    y = x.reshape(N, H // P, P, W // P, P, C)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(y).reshape(N, H // P, W // P, P * P * C)


def from_patches(p: Tensor, P: int) -> Tensor:
    if p.ndim != 4:
        raise PatchError(f"se esperaba una rejilla (N, h, w, C·P²), forma recibida {p.shape}")
    N, h, w, CP = p.shape
    if P < 1 or CP % (P * P):
        raise PatchError(f"los canales C={CP} deben ser divisibles por P²={P * P}")
    C = CP // (P * P)
    y = p.reshape(N, h, w, P, P, C)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(y).reshape(N, h * P, w * P, C)


def patch_shape(shape, P: int):
    """Forma de la rejilla de parches para una forma de imagen (N, H, W, C)."""
    N, H, W, C = shape
    if H % P or W % P:
        raise PatchError(f"H={H} y W={W} deben ser divisibles por P={P}")
    return (N, H // P, W // P, C * P * P)
