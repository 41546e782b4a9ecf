"""
Motor de difusión con parches a escala de escritorio: cronograma de ruido,
parches, parametrizaciones x/ε/v, denoiser óptimo, denoiser entrenable,
entrenamiento, muestreo y mediciones.
"""
from pdm.errores import (ConfigError, DatasetError, FormatError, KindError, NonFiniteError,
                         PatchError, PDMError, ScheduleError, ShapeError)

__version__ = "0.1.0"
