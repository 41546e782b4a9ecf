# ---------------------------------------------------------------------
# Estilos compartidos de las figuras plotly
# ---------------------------------------------------------------------
FUENTE = dict(family="Poppins", size=12, color="black")

LAYOUT_BASE = dict(
    paper_bgcolor="white",
    plot_bgcolor="#f9f9f9",
    font=FUENTE,
    margin=dict(l=50, r=40, t=80, b=50),
    hovermode="x unified",
    legend=dict(orientation="h", yanchor="bottom", y=1.02),
)

EJES = dict(
    showgrid=True, gridwidth=1, gridcolor="#e0e0e0",
    showline=True, linecolor="black", linewidth=1, mirror=True,
)

# un color fijo por tipo de predicción y por tamaño de parche
COLORES_TIPO = {"x": "#3498db", "eps": "#e74c3c", "v": "#27ae60"}
COLORES = ["#3498db", "#e74c3c", "#27ae60", "#f39c12", "#8e44ad", "#2c3e50"]

LINEA_REFERENCIA = dict(color="#e74c3c", dash="dash", width=2)
