"""
Suite de propiedades que ejecuta ``app.py check``.

Cada verificación devuelve (ok, detalle); ``run_checks`` las envuelve, mide su
duración y arma una tabla de resultados.
"""
import logging
import time
from dataclasses import replace
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from pdm import bench, denoiser, oracle, param, patching, trainer
from pdm.core import gaussian, stream
from pdm.datos import blobs, two_point
from pdm.denoiser import CheckpointModel, DenoiserConfig
from pdm.param import GuidanceConfig, Kind, Prediction
from pdm.sampler import SampleConfig, SplitConfig, sample
from pdm.schedule import (ScheduleConfig, build_schedule, forward_marginal,
                          linear_schedule, posterior_params, respace)
from pdm.trainer import TrainConfig

logger = logging.getLogger(__name__)

Resultado = Tuple[bool, str]


def close_check(lhs, rhs, atol: float, rtol: float = 0.0) -> Tuple[bool, float]:
    dif = float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs))))
    escala = atol + rtol * float(np.max(np.abs(rhs)))
    return dif <= escala, dif


def wrap_check(fn: Callable[[], Resultado]) -> Callable[[], Resultado]:
    def _run() -> Resultado:
        try:
            ok, msg = fn()
        except AssertionError as exc:
            return False, str(exc)
        except Exception as exc:
            return False, f"error: {type(exc).__name__}: {exc}"
        return bool(ok), str(msg)
    return _run


# ============================================================
# UTILIDADES COMPARTIDAS CON LOS TESTS
# ============================================================
def randomized_checkpoint(config: DenoiserConfig, seed: int = 0, escala: float = 0.3):
    """Checkpoint con todos los parámetros aleatorios (incluida la salida)."""
    ckpt = denoiser.init(config, stream(seed, "init"))
    rng = stream(seed, "aleatorizar")
    for nombre, p in ckpt.params.items():
        ckpt.params[nombre] = p + escala * gaussian(p.shape, rng.child(nombre))
    ckpt.ema_params = {k: v.copy() for k, v in ckpt.params.items()}
    return ckpt


def finite_difference_errors(ckpt, z, t, labels, n_por_parametro: int = 4, h: float = 1e-5,
                             seed: int = 0) -> pd.DataFrame:
    """
    Compara ``backward`` contra diferencias centrales de L = sum(salida · R)
    en ``n_por_parametro`` coordenadas de cada tensor de parámetros.
    """
    rng = stream(seed, "gradcheck")
    pred, tape = denoiser.forward_with_tape(ckpt, z, t, labels)
    R = gaussian(pred.value.shape, rng)
    grads = denoiser.backward(ckpt, tape, R)

    def perdida():
        return float(np.sum(denoiser.forward(ckpt, z, t, labels).value * R))

    filas = []
    for nombre, p in ckpt.params.items():
        planos = p.reshape(-1)
        # coordenadas distintas, sin reemplazo
        idx = np.sort(np.argsort(rng.uniform((planos.size,)))[:n_por_parametro])
        for i in idx:
            original = planos[i]
            planos[i] = original + h
            arriba = perdida()
            planos[i] = original - h
            abajo = perdida()
            planos[i] = original
            numerico = (arriba - abajo) / (2.0 * h)
            analitico = float(grads[nombre].reshape(-1)[i])
            abs_err = abs(numerico - analitico)
            rel = abs_err / max(abs(numerico), abs(analitico), 1e-12)
            filas.append({"param": nombre, "index": int(i), "numeric": numerico,
                          "analytic": analitico, "abs_err": abs_err, "rel_err": rel})
    return pd.DataFrame(filas)


def gradient_check_passes(errores: pd.DataFrame, rel: float = 1e-4, absoluto: float = 1e-9) -> bool:
    return bool(((errores["rel_err"] < rel) | (errores["abs_err"] < absoluto)).all())


def two_point_closed_form(z, t, a: float, schedule) -> np.ndarray:
    """x* del conjunto {+a, -a} escalar: a·tanh(sqrt(α)·a·z / (1 - α))."""
    al = schedule.alpha(t)
    return a * np.tanh(np.sqrt(al) * a * z / (1.0 - al))


# ============================================================
# VERIFICACIONES
# ============================================================
def check_patch_bijection(seed: int, casos: int = 200) -> Resultado:
    rng = stream(seed, "check/parches")
    for _ in range(casos):
        P = int(rng.integers(1, 9, ()))
        N, h, w, C = (int(v) for v in rng.integers(1, 4, (4,)))
        x = gaussian((N, h * P, w * P, C), rng)
        if not np.array_equal(patching.from_patches(patching.to_patches(x, P), P), x):
            return False, f"ida y vuelta falló con P={P}, forma {x.shape}"
    x = np.arange(4.0).reshape(1, 2, 2, 1)
    traza = patching.to_patches(x, 2).reshape(-1).tolist()
    return traza == [0.0, 1.0, 2.0, 3.0], f"{casos} casos bit-exactos; mapeo 2x2 {traza}"


def check_schedule(seed: int, casos: int = 50) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    compuesto = np.cumprod(1.0 - sch.betas)
    if not np.array_equal(compuesto, sch.alpha_cum):
        return False, "α acumulado no coincide con el producto de (1 - β)"
    if respace(sch, sch.T) is not sch:
        return False, "respace(T) no devuelve el mismo cronograma"
    rng = stream(seed, "check/posterior")
    peor = 0.0
    for _ in range(casos):
        t = int(rng.integers(2, sch.T + 1, ()))
        x = float(rng.uniform(()) * 2 - 1)
        a_t = float(sch.alpha(t))
        z_t = float(np.sqrt(a_t) * x + np.sqrt(1.0 - a_t) * gaussian((), rng))
        a_prev, b = float(sch.alpha(t - 1)), float(sch.beta(t))
        # Bayes en rejilla: q(u | x) q(z_t | u)
        centro, ancho = np.sqrt(a_prev) * x, 12.0 * np.sqrt(1.0 - a_prev)
        u = np.linspace(centro - ancho, centro + ancho, 20001)
        log_p = (-(u - np.sqrt(a_prev) * x) ** 2 / (2 * (1 - a_prev))
                 - (z_t - np.sqrt(1 - b) * u) ** 2 / (2 * b))
        p = np.exp(log_p - log_p.max())
        Z = trapezoid(p, u)
        media = trapezoid(u * p, u) / Z
        var = trapezoid((u - media) ** 2 * p, u) / Z
        m, v = posterior_params(np.array([[[[z_t]]]]), np.array([[[[x]]]]), np.array([t]), sch)
        peor = max(peor, abs(float(m.reshape(-1)[0]) - media), abs(float(np.ravel(v)[0]) - var))
    return peor < 1e-6, f"error máximo contra la rejilla {peor:.2e}"


def check_oracle(seed: int) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    ds = two_point(0.9, 1)
    rng = stream(seed, "check/oraculo")
    t = rng.integers(1, sch.T + 1, (200,))
    z = gaussian((200, 1, 1, 1), rng) * 1.5
    ok, err = close_check(oracle.optimal_denoiser(z, t, ds, sch).reshape(-1),
                          two_point_closed_form(z.reshape(-1), t, 0.9, sch), 1e-10)
    if not ok:
        return False, f"forma cerrada de dos puntos: error {err:.2e}"

    # perturbación: la pérdida en x* + δ supera la de x* en sorteos compartidos
    toy = blobs(16, 4, 1, seed)
    n = 4000
    idx = rng.integers(0, len(toy), (n,))
    x = toy.examples[idx]
    tt = rng.integers(1, sch.T + 1, (n,))
    eps = gaussian(x.shape, rng)
    zz = forward_marginal(x, tt, eps, sch)
    x_opt = oracle.optimal_denoiser(zz, tt, toy, sch)
    gamma = sch.weight(tt)
    base = gamma * ((x_opt - x) ** 2).reshape(n, -1).mean(axis=1)
    fallos = 0
    for _ in range(100):
        delta = 0.05 * gaussian((1,) + toy.shape, rng)
        dif = gamma * ((x_opt + delta - x) ** 2).reshape(n, -1).mean(axis=1) - base
        if dif.mean() < -3.0 * dif.std(ddof=1) / np.sqrt(n):
            fallos += 1
    return fallos == 0, f"forma cerrada {err:.2e}; perturbaciones que ganan: {fallos}/100"


def check_score(seed: int, casos: int = 100) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    ds = blobs(8, 2, 1, seed)
    rng = stream(seed, "check/score")
    peor = 0.0
    h = 1e-5
    for _ in range(casos):
        t = int(rng.integers(50, sch.T + 1, ()))
        z = gaussian((1,) + ds.shape, rng)
        s = oracle.marginal_score(z, t, ds, sch).reshape(-1)
        fd = np.empty_like(s)
        for j in range(s.size):
            e = np.zeros(s.size)
            e[j] = h
            e = e.reshape(z.shape)
            fd[j] = (oracle.log_marginal_density(z + e, t, ds, sch)[0]
                     - oracle.log_marginal_density(z - e, t, ds, sch)[0]) / (2 * h)
        peor = max(peor, float(np.max(np.abs(fd - s) / np.maximum(np.abs(s), 1e-3))))
    return peor < 1e-6, f"error relativo máximo {peor:.2e}"


def check_parameterization(seed: int) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    rng = stream(seed, "check/param")
    x = gaussian((64, 2, 2, 1), rng) * 0.5
    eps = gaussian(x.shape, rng)
    t = rng.integers(1, sch.T + 1, (64,))
    z = forward_marginal(x, t, eps, sch)
    v = param.v_from(x, eps, t, sch)
    peor = 0.0
    for kind, valor in ((Kind.X, x), (Kind.EPS, eps), (Kind.V, v)):
        pred = Prediction(kind, valor)
        peor = max(peor, float(np.max(np.abs(param.to_x(pred, z, t, sch) - x))),
                   float(np.max(np.abs(param.to_eps(pred, z, t, sch) - eps))),
                   float(np.max(np.abs(param.to_v(pred, z, t, sch) - v))))
    if peor > 1e-12:
        return False, f"ciclos de conversión: error {peor:.2e}"
    a_baja = sch.alpha_cum[sch.alpha_cum < 0.005]
    eps_amp = param.amplification_a(Kind.EPS, a_baja)
    v_amp = param.amplification_a(Kind.V, sch.alpha_cum)
    ok = bool(np.all(eps_amp > 10.0) and np.all(v_amp <= 1.0))
    return ok, f"ciclos {peor:.1e}; amplificación ε mínima con α<0.005: {eps_amp.min():.1f}; v máxima {v_amp.max():.3f}"


def check_gradients(seed: int) -> Resultado:
    # ancho 16, 8 grupos: dos canales por grupo, ningún sesgo queda anulado por GroupNorm
    cfg = DenoiserConfig(P=2, width=16, blocks=2, time_dim=8, classes=2, channels=2, timesteps=100)
    ckpt = randomized_checkpoint(cfg, seed)
    rng = stream(seed, "check/grad")
    z = gaussian((2, 4, 4, 2), rng)
    errores = finite_difference_errors(ckpt, z, np.array([3, 70]), np.array([0, 2]), 8, seed=seed)
    ok = gradient_check_passes(errores) and len(errores) >= 200
    return ok, f"{len(errores)} coordenadas, error relativo máximo {errores['rel_err'].max():.2e}"


def check_sampling(seed: int, cadenas: int = 10_000) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    ds = two_point(0.9, 1)
    res = sample(SampleConfig(count=cadenas, steps=100, shape=(1, 1, 1), seed=seed),
                 oracle.OracleModel(ds, sch), sch)
    finales = res.images.reshape(-1)
    frac = float(np.mean(finales > 0))
    sigma = np.sqrt(0.25 / cadenas)
    valores_ok = bool(np.all(np.abs(np.abs(finales) - 0.9) < 0.02))

    cfg = DenoiserConfig(width=8, blocks=1, time_dim=8, channels=1, classes=None)
    m = CheckpointModel(randomized_checkpoint(cfg, seed))
    m.schedule_fingerprint = sch.fingerprint
    pedido = SampleConfig(count=3, steps=20, shape=(4, 4, 1), seed=seed)
    unico = sample(pedido, m, sch).images
    dividido = sample(pedido, None, sch, split=SplitConfig(396, m, m)).images
    ok = abs(frac - 0.5) <= 3 * sigma and valores_ok and np.array_equal(unico, dividido)
    return ok, f"fracción positiva {frac:.3f} (±{3 * sigma:.3f}); división bit-idéntica {np.array_equal(unico, dividido)}"


def check_guidance(seed: int) -> Resultado:
    rng = stream(seed, "check/guia")
    c = Prediction(Kind.EPS, gaussian((4, 2, 2, 1), rng))
    u = Prediction(Kind.EPS, gaussian((4, 2, 2, 1), rng))
    fijos = np.array_equal(param.guide(c, u, 1.0).value, c.value) and np.array_equal(param.guide(c, u, 0.0).value, u.value)
    x = gaussian((16, 4, 4, 3), rng) * 5
    acotado = bool(np.all(np.abs(param.threshold(x, "dynamic", 99.5)) <= 1.0))

    sch = linear_schedule(250, 1e-4, 0.02)
    cfg = DenoiserConfig(width=4, blocks=1, time_dim=4, channels=1, classes=2, timesteps=250)
    m = CheckpointModel(denoiser.init(cfg, stream(seed, "init"), sch.fingerprint))
    res = sample(SampleConfig(count=1, steps=250, shape=(2, 2, 1), labels=[1],
                              guidance=GuidanceConfig(w=3.0), seed=seed), m, sch)
    return fijos and acotado and res.evaluations == 500, \
        f"puntos fijos {fijos}; umbral en [-1, 1] {acotado}; evaluaciones {res.evaluations}"


def check_contraction(seed: int, n: int = 3000) -> Resultado:
    sch = build_schedule(ScheduleConfig())
    ds = blobs(32, 4, 1, seed)
    rng = stream(seed, "check/contraccion")
    varianzas, errores = [], []
    for t in np.linspace(1, sch.T, 10).astype(int):
        x = ds.examples[rng.integers(0, len(ds), (n,))]
        z = forward_marginal(x, t, gaussian(x.shape, rng), sch)
        x_opt = oracle.optimal_denoiser(z, t, ds, sch).reshape(n, -1)
        dev = ((x_opt - x_opt.mean(axis=0)) ** 2).sum(axis=1)
        varianzas.append(dev.mean())
        errores.append(dev.std(ddof=1) / np.sqrt(n))
    v, e = np.asarray(varianzas), np.asarray(errores)
    ok = bool(np.all(v[1:] <= v[:-1] + 3 * np.hypot(e[1:], e[:-1])))
    return ok, "varianzas " + ", ".join(f"{x:.3f}" for x in v)


def check_memory(seed: int) -> Resultado:
    reduccion = bench.memory_reduction(P=4, baseline_P=1)
    return reduccion >= 3.0, f"reducción de activaciones P=4 vs P=1: {reduccion:.1f}x"


def check_loss_floor(seed: int, iters: int = 300) -> Resultado:
    """
    Un denoiser entrenado no baja del piso de Monte Carlo que fija el
    oráculo sobre los mismos sorteos, y entrenar reduce el error en x.
    """
    sch = linear_schedule(100, 1e-4, 0.05)
    ds = blobs(8, 4, 1, seed)
    cfg = DenoiserConfig(P=2, width=8, blocks=1, time_dim=8, channels=1, classes=None, timesteps=sch.T)
    entreno = TrainConfig(batch=8, iters=iters, warmup=0, lr=2e-3, ema_every=1, log_every=iters)
    inicial, _ = trainer.train_loop(ds, cfg, replace(entreno, iters=0), sch, seed)
    final, _ = trainer.train_loop(ds, cfg, entreno, sch, seed)

    draws = trainer.monte_carlo_draws(ds, sch, stream(seed, "check/suelo"), 2000)
    piso = trainer.monte_carlo_loss(oracle.OracleModel(ds, sch).predict, draws, sch)
    antes = trainer.monte_carlo_loss(CheckpointModel(inicial, use_ema=False).predict, draws, sch)
    despues = trainer.monte_carlo_loss(CheckpointModel(final, use_ema=False).predict, draws, sch)
    dif = despues - piso
    banda = 3 * dif.std(ddof=1) / np.sqrt(len(dif))
    ok = dif.mean() >= -banda and despues.mean() < antes.mean()
    return ok, (f"pérdida inicial {antes.mean():.4f}, entrenada {despues.mean():.4f}, "
                f"piso del oráculo {piso.mean():.4f} (banda {banda:.1e})")


def check_throughput(seed: int) -> Resultado:
    """Con parámetros emparejados, P mayor da más imágenes/s; el costo crece lineal con los pasos."""
    sch = build_schedule(ScheduleConfig())
    forma = (32, 32, 3)
    configs = bench.matched_configs((2, 4, 8), 20000, forma, base=DenoiserConfig(channels=3, timesteps=sch.T))
    tabla = bench.throughput(configs, sch, forma, batch=4, steps=4, reps=5, warmup=1, seed=seed)
    ips = tabla["images_per_second"].to_numpy()
    orden = bool(np.all(np.diff(ips) > 0))

    medio = configs[1]
    cortos = bench.throughput([medio], sch, forma, batch=4, steps=4, reps=5, warmup=1, seed=seed)
    largos = bench.throughput([medio], sch, forma, batch=4, steps=16, reps=5, warmup=1, seed=seed)
    razon = float(cortos["images_per_second"].iloc[0] / largos["images_per_second"].iloc[0])
    lineal = 2.0 <= razon <= 8.0
    return orden and lineal, (f"imágenes/s P=2,4,8: {', '.join(f'{x:.1f}' for x in ips)}; "
                              f"costo 16 vs 4 pasos: {razon:.2f}x")


SUITES: Dict[str, Callable[[int], Resultado]] = {
    "parches": check_patch_bijection,
    "cronograma": check_schedule,
    "oráculo": check_oracle,
    "score": check_score,
    "parametrización": check_parameterization,
    "gradientes": check_gradients,
    "muestreo": check_sampling,
    "guía": check_guidance,
    "contracción": check_contraction,
    "memoria": check_memory,
    "suelo": check_loss_floor,
    "rendimiento": check_throughput,
}


def run_checks(seed: int = 0, suites: Sequence[str] = None) -> pd.DataFrame:
    filas: List[dict] = []
    for nombre in suites or SUITES:
        inicio = time.perf_counter()
        ok, detalle = wrap_check(lambda: SUITES[nombre](seed))()
        segundos = time.perf_counter() - inicio
        logger.info("%s: %s (%.1f s)", nombre, "ok" if ok else "FALLÓ", segundos)
        filas.append({"suite": nombre, "passed": ok, "seconds": round(segundos, 2), "detail": detalle})
    return pd.DataFrame(filas)


def format_table(tabla: pd.DataFrame) -> str:
    lineas = []
    for fila in tabla.itertuples():
        marca = "✅" if fila.passed else "❌"
        lineas.append(f"{marca} {fila.suite:<16} {fila.seconds:>7.2f}s  {fila.detail}")
    return "\n".join(lineas)
