# ---------------------------------------------------------------------
# Figuras plotly que acompañan a cada CSV de la línea de comandos
# ---------------------------------------------------------------------
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from pdm.param import Kind, amplification_a
from styles import COLORES, COLORES_TIPO, EJES, LAYOUT_BASE, LINEA_REFERENCIA


def _aplicar_estilo(fig, titulo, eje_x, eje_y, log_y=False):
    fig.update_layout(title=f"<b>{titulo}</b>", xaxis_title=eje_x, yaxis_title=eje_y, **LAYOUT_BASE)
    fig.update_xaxes(**EJES)
    fig.update_yaxes(type="log" if log_y else "linear", **EJES)
    return fig


def guardar_figura(fig, ruta) -> Path:
    ruta = Path(ruta)
    ruta.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(ruta), include_plotlyjs="cdn", div_id=ruta.stem)
    return ruta


def grafica_cronograma(tabla: pd.DataFrame, split: Optional[int] = None):
    """α acumulado y SNR (escala log) contra t."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=tabla["t"], y=tabla["alpha_cum"], mode="lines", name="α acumulado",
        line=dict(color=COLORES[0], width=3),
        hovertemplate="t: %{x}<br>α: %{y:.4f}<extra></extra>"
    ))
    fig.add_trace(go.Scatter(
        x=tabla["t"], y=tabla["snr"], mode="lines", name="SNR",
        line=dict(color=COLORES[1], width=2), yaxis="y2",
        hovertemplate="t: %{x}<br>SNR: %{y:.3g}<extra></extra>"
    ))
    if split is not None:
        fig.add_vline(x=split, line=LINEA_REFERENCIA,
                      annotation_text=f"S={split}", annotation_position="top right")
    _aplicar_estilo(fig, "Cronograma de ruido", "Timestep t", "α acumulado")
    fig.update_layout(yaxis2=dict(title="SNR", overlaying="y", side="right", type="log"))
    return fig


def grafica_amplificacion(schedule):
    """Factor de amplificación del error en espacio x para cada tipo."""
    t = np.arange(1, schedule.T + 1)
    a = schedule.alpha_cum
    fig = go.Figure()
    for kind in Kind:
        fig.add_trace(go.Scatter(
            x=t, y=amplification_a(kind, a), mode="lines", name=kind.value,
            line=dict(color=COLORES_TIPO[kind.value], width=3)
        ))
    return _aplicar_estilo(fig, "Amplificación del error de predicción", "Timestep t", "Factor", log_y=True)


def grafica_perdidas(metricas: pd.DataFrame):
    """Curvas de RMSE en espacio x; una por tipo si la tabla es de comparación."""
    fig = go.Figure()
    columnas = [c for c in metricas.columns if c.startswith("x_space_rmse")]
    for i, col in enumerate(columnas):
        tipo = col.rsplit("_", 1)[-1]
        fig.add_trace(go.Scatter(
            x=metricas["step"], y=metricas[col], mode="lines", name=col,
            line=dict(color=COLORES_TIPO.get(tipo, COLORES[i % len(COLORES)]), width=2)
        ))
    return _aplicar_estilo(fig, "Pérdida de entrenamiento (RMSE en espacio x)", "Paso", "RMSE", log_y=True)


def grafica_distorsion(curvas: Dict[str, pd.DataFrame], columna: str = "rmse"):
    fig = go.Figure()
    for i, (nombre, df) in enumerate(curvas.items()):
        fig.add_trace(go.Scatter(
            x=df["t"], y=df[columna], mode="lines+markers", name=nombre,
            line=dict(color=COLORES[i % len(COLORES)], width=2),
            error_y=dict(type="data", array=df["stderr"], visible=columna == "rmse"),
        ))
    if columna == "ratio":
        fig.add_hline(y=1.0, line=LINEA_REFERENCIA)
    titulo = "Cociente de distorsión" if columna == "ratio" else "Distorsión (RMSE) por timestep"
    return _aplicar_estilo(fig, titulo, "Timestep t", columna)


def grafica_rendimiento(tabla: pd.DataFrame):
    fig = go.Figure(go.Bar(
        x=[f"P={p}" for p in tabla["model.P"]], y=tabla["images_per_second"],
        marker_color=COLORES[0],
        error_y=dict(type="data", symmetric=False,
                     array=tabla["max_ips"] - tabla["images_per_second"],
                     arrayminus=tabla["images_per_second"] - tabla["min_ips"]),
        hovertemplate="%{x}<br>%{y:.2f} img/s<extra></extra>"
    ))
    return _aplicar_estilo(fig, "Rendimiento por tamaño de parche", "Configuración", "Imágenes / segundo")


def grafica_memoria(tablas: Dict[str, pd.DataFrame]):
    """Bytes de activaciones por etapa, una serie por configuración."""
    fig = go.Figure()
    for i, (nombre, df) in enumerate(tablas.items()):
        por_etapa = df.groupby("stage", sort=False)["bytes"].sum()
        fig.add_trace(go.Bar(x=por_etapa.index, y=por_etapa.values, name=nombre,
                             marker_color=COLORES[i % len(COLORES)]))
    fig.update_layout(barmode="group")
    return _aplicar_estilo(fig, "Memoria de activaciones por etapa", "Etapa", "Bytes", log_y=True)
