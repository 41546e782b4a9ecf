"""Jerarquía de errores del motor de difusión por parches."""


class PDMError(Exception):
    """Error base del motor; la CLI lo traduce a código de salida 2."""


class ShapeError(PDMError, ValueError):
    """Formas incompatibles entre operandos."""


class ScheduleError(PDMError, ValueError):
    """Cronograma inválido o timestep fuera de rango."""


class PatchError(PDMError, ValueError):
    """Dimensiones no divisibles por el tamaño de parche."""


class KindError(PDMError, ValueError):
    """Tipos de predicción (x / ε / v) que no coinciden."""


class DatasetError(PDMError):
    """Archivo de datos malformado o subconjunto vacío."""


class ConfigError(PDMError, ValueError):
    """Configuración inválida o modelos incompatibles entre sí."""


class NonFiniteError(PDMError, FloatingPointError):
    """Una operación pública produjo NaN o Inf."""


class FormatError(PDMError):
    """Blob de tensor o manifiesto de checkpoint corrupto."""
