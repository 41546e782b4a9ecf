"""
Capa de configuración: archivo JSON + anulaciones ``--set seccion.clave=valor``,
eco de la configuración efectiva y arranque del logging.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from pdm.bench import BenchConfig
from pdm.datos import DatasetSpec
from pdm.denoiser import DenoiserConfig
from pdm.errores import ConfigError
from pdm.sampler import SampleConfig
from pdm.schedule import ScheduleConfig
from pdm.trainer import TrainConfig

logger = logging.getLogger(__name__)

FORMATO_LOG = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SALIDA_POR_DEFECTO = "./salidas"


def configurar_logging(nivel: int = logging.INFO) -> None:
    """Un único handler de consola para todo el paquete."""
    raiz = logging.getLogger("pdm")
    raiz.handlers.clear()
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(FORMATO_LOG))
    raiz.addHandler(handler)
    raiz.setLevel(nivel)
    raiz.propagate = False


def _desde_dict(cls, datos: dict):
    if hasattr(cls, "from_dict"):
        return cls.from_dict(datos)
    extra = set(datos) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"claves desconocidas en {cls.__name__}: {sorted(extra)}")
    return cls(**datos)


SECCIONES = {
    "schedule": ScheduleConfig,
    "dataset": DatasetSpec,
    "model": DenoiserConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
    "bench": BenchConfig,
}


@dataclass
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @classmethod
    def from_dict(cls, datos: dict) -> "RunConfig":
        extra = set(datos) - set(SECCIONES)
        if extra:
            raise ConfigError(f"secciones desconocidas: {sorted(extra)}, opciones: {sorted(SECCIONES)}")
        return cls(**{nombre: _desde_dict(SECCIONES[nombre], datos[nombre]) for nombre in datos})

    def to_dict(self) -> dict:
        salida = {}
        for nombre in SECCIONES:
            valor = getattr(self, nombre)
            salida[nombre] = valor.to_dict() if hasattr(valor, "to_dict") else asdict(valor)
        return _a_json(salida)


def _a_json(valor):
    if isinstance(valor, Enum):
        return valor.value
    if isinstance(valor, dict):
        return {k: _a_json(v) for k, v in valor.items()}
    if isinstance(valor, (list, tuple)):
        return [_a_json(v) for v in valor]
    return valor


def parse_override(texto: str):
    """'seccion.clave=valor' -> (seccion, clave, valor); el valor se lee como JSON si se puede."""
    if "=" not in texto:
        raise ConfigError(f"anulación mal formada '{texto}', se esperaba seccion.clave=valor")
    ruta, crudo = texto.split("=", 1)
    if ruta.count(".") != 1:
        raise ConfigError(f"anulación mal formada '{texto}', se esperaba seccion.clave=valor")
    seccion, clave = ruta.split(".")
    if seccion not in SECCIONES:
        raise ConfigError(f"sección desconocida '{seccion}' en '{texto}'")
    try:
        valor = json.loads(crudo)
    except json.JSONDecodeError:
        valor = crudo
    return seccion, clave, valor


def load_config(ruta: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Archivo JSON (opcional) y luego las anulaciones en orden."""
    datos = {}
    if ruta is not None:
        try:
            datos = json.loads(Path(ruta).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{ruta}: JSON inválido ({e})") from None
        except OSError as e:
            raise ConfigError(f"no se pudo leer la configuración {ruta}: {e.strerror or e}") from None
        if not isinstance(datos, dict):
            raise ConfigError(f"{ruta}: se esperaba un objeto JSON en la raíz")
    for texto in overrides:
        seccion, clave, valor = parse_override(texto)
        datos.setdefault(seccion, {})[clave] = valor
    return RunConfig.from_dict(datos)


def echo_config(config: RunConfig, directorio) -> Path:
    """Escribe ``config.json`` con la configuración efectiva."""
    ruta = Path(directorio) / "config.json"
    ruta.parent.mkdir(parents=True, exist_ok=True)
    ruta.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return ruta


def output_root(bandera: Optional[str] = None) -> Path:
    """PDM_OUT manda sobre ``--out``; por defecto ./salidas."""
    return Path(os.environ.get("PDM_OUT") or bandera or SALIDA_POR_DEFECTO)
