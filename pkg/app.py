"""
Punto de entrada de la línea de comandos.

    python app.py <subcomando> [opciones]

Subcomandos: schedule, oracle, posterior-sample, train, sample, bench,
distortion, split-point, check.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from pdm import bench, denoiser, oracle, trainer
from pdm.config import configurar_logging, echo_config, load_config, output_root
from pdm.core import gaussian, stream
from pdm.datos import image_grid, load_dataset, write_images, write_pnm
from pdm.errores import ConfigError, PDMError
from pdm.param import GuidanceConfig
from pdm.sampler import parse_split, sample
from pdm.schedule import build_schedule, forward_marginal, split_point, to_frame
from pdm.verificacion import format_table, run_checks
from utils.funciones import (grafica_amplificacion, grafica_cronograma, grafica_distorsion,
                             grafica_memoria, grafica_perdidas, grafica_rendimiento, guardar_figura)

logger = logging.getLogger("pdm.app")


# ============================================================
# 🔧 UTILIDADES
# ============================================================
def _lista_enteros(texto: str):
    try:
        return [int(v) for v in texto.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"se esperaba una lista de enteros separados por coma, se recibió '{texto}'") from None


def _guardar_tabla(tabla: pd.DataFrame, ruta: Path, fig=None) -> Path:
    ruta.parent.mkdir(parents=True, exist_ok=True)
    tabla.to_csv(ruta, index=False)
    if fig is not None:
        guardar_figura(fig, ruta.with_suffix(".html"))
    print(f"📄 {ruta}")
    return ruta


def _cargar_modelo(ruta: str, crudos: bool = False):
    return denoiser.CheckpointModel(denoiser.load_checkpoint(ruta), use_ema=not crudos)


def _contexto(args):
    """Configuración efectiva, cronograma y carpeta de salida del subcomando."""
    cfg = load_config(args.config, args.set)
    salida = output_root(args.out) / args.comando
    salida.mkdir(parents=True, exist_ok=True)
    ruta = echo_config(cfg, salida)
    logger.debug("configuración efectiva en %s", ruta)
    return cfg, build_schedule(cfg.schedule), salida


# ============================================================
# 📈 CRONOGRAMA Y PUNTO DE DIVISIÓN
# ============================================================
def cmd_schedule(args):
    cfg, sch, salida = _contexto(args)
    S = split_point(sch, args.snr)
    _guardar_tabla(to_frame(sch), salida / "schedule.csv", grafica_cronograma(to_frame(sch), S))
    guardar_figura(grafica_amplificacion(sch), salida / "amplification.html")
    print(f"T={sch.T}  huella={sch.fingerprint}  S(SNR≈{args.snr})={S}")


def cmd_split_point(args):
    _, sch, _ = _contexto(args)
    S = split_point(sch, args.snr)
    print(f"S = {S}  (SNR(S) = {float(sch.snr(S)):.4f}, objetivo {args.snr})")


# ============================================================
# 🔍 ORÁCULO: MEDIA Y MUESTRAS POSTERIORES
# ============================================================
def _tira_oraculo(args, muestrear: bool):
    cfg, sch, salida = _contexto(args)
    ds = load_dataset(cfg.dataset, args.seed)
    ts = _lista_enteros(args.timesteps)
    rng = stream(args.seed, "oraculo")
    idx = min(args.example, len(ds) - 1)
    x = ds.examples[idx:idx + 1]

    ruidosas, estimadas, filas = [], [], []
    for t in ts:
        z = forward_marginal(x, np.array([t]), gaussian(x.shape, rng), sch)
        if muestrear:
            est = np.concatenate([oracle.posterior_sample(z, np.array([t]), ds, sch, rng)
                                  for _ in range(args.rows)])
        else:
            est = oracle.optimal_denoiser(z, np.array([t]), ds, sch)
        ruidosas.append(np.clip(z, -1.0, 1.0))
        estimadas.append(est)
        filas.append({"t": t, "rmse_to_example": float(np.sqrt(np.mean((est - x) ** 2)))})

    # una columna por timestep: fila de z_t y debajo la(s) estimación(es)
    bloques = [np.concatenate(ruidosas)] + [np.stack([e[r] for e in estimadas]) for r in range(len(estimadas[0]))]
    tira = image_grid(np.concatenate(bloques), cols=len(ts))
    nombre = "posterior_sample" if muestrear else "oracle"
    ruta = write_pnm(salida / f"{nombre}_strip.{'ppm' if tira.shape[2] == 3 else 'pgm'}", tira)
    _guardar_tabla(pd.DataFrame(filas), salida / f"{nombre}.csv")
    print(f"🖼️ {ruta}")


def cmd_oracle(args):
    _tira_oraculo(args, muestrear=False)


def cmd_posterior_sample(args):
    _tira_oraculo(args, muestrear=True)


# ============================================================
# 🏋️ ENTRENAMIENTO
# ============================================================
def cmd_train(args):
    cfg, sch, salida = _contexto(args)
    ds = load_dataset(cfg.dataset, args.seed)
    modelo = replace(cfg.model, timesteps=sch.T, channels=ds.shape[2])
    if ds.labels is not None and modelo.classes is None:
        modelo = replace(modelo, classes=ds.num_classes)
    entreno = replace(cfg.train, progress=not args.quiet)

    if args.compare:
        ckpts, tabla = trainer.compare_kinds(ds, modelo, entreno, sch, args.seed)
        for kind, ckpt in ckpts.items():
            denoiser.save_checkpoint(ckpt, salida / f"{kind.value}.ckpt")
        _guardar_tabla(tabla, salida / "compare.csv", grafica_perdidas(tabla))
        return

    inicial = denoiser.load_checkpoint(args.init_from) if args.init_from else None
    ckpt, metricas = trainer.train_loop(ds, modelo, entreno, sch, args.seed, init=inicial, out_dir=salida)
    _guardar_tabla(metricas, salida / "metrics.csv", grafica_perdidas(metricas))
    print(f"💾 {salida / 'final.ckpt'}  ({denoiser.parameter_count(ckpt.config)} parámetros)")


# ============================================================
# 🎲 MUESTREO
# ============================================================
def cmd_sample(args):
    cfg, sch, salida = _contexto(args)
    pedido = replace(cfg.sample, seed=args.seed, progress=not args.quiet)
    if args.count is not None:
        pedido = replace(pedido, count=args.count)
    if args.steps is not None:
        pedido = replace(pedido, steps=args.steps)
    if args.labels is not None:
        pedido = replace(pedido, labels=_lista_enteros(args.labels))
    guia = pedido.guidance
    pedido = replace(pedido, guidance=GuidanceConfig(
        w=guia.w if args.w is None else args.w,
        threshold=guia.threshold if args.threshold is None else args.threshold,
        percentile=guia.percentile if args.percentile is None else args.percentile,
    ))

    modelo, division = None, None
    division_txt = args.split or pedido.split
    if division_txt:
        division = parse_split(division_txt)
        division = replace(division, low_model=_cargar_modelo(division.low_model, args.raw),
                           high_model=_cargar_modelo(division.high_model, args.raw))
    elif args.oracle:
        ds = load_dataset(cfg.dataset, args.seed)
        modelo = oracle.OracleModel(ds, sch)
        pedido = replace(pedido, shape=tuple(ds.shape))
    elif args.ckpt:
        modelo = _cargar_modelo(args.ckpt, args.raw)
    else:
        raise ConfigError("indique --ckpt, --split o --oracle")
    red = division.low_model if division else modelo
    if isinstance(red, denoiser.CheckpointModel):
        # los canales los fija el checkpoint; alto y ancho vienen del pedido
        H, W = pedido.shape[:2]
        pedido = replace(pedido, shape=(H, W, red.ckpt.config.channels))

    res = sample(pedido, modelo, sch, division)
    rutas = write_images(salida, res.images)
    if args.grid:
        write_pnm(salida / f"grid.{rutas[0].suffix[1:]}", image_grid(res.images))
    print(f"🖼️ {len(rutas)} muestras en {salida}  ({res.evaluations} evaluaciones del modelo)")


# ============================================================
# ⏱️ BENCH Y DISTORSIÓN
# ============================================================
def _distorsion(args, cfg, sch, salida):
    ds = load_dataset(cfg.dataset, args.seed)
    modelos = {}
    if args.oracle:
        modelos["oracle"] = oracle.OracleModel(ds, sch)
    for ruta in args.ckpt or []:
        modelos[Path(ruta).stem] = _cargar_modelo(ruta, args.raw)
    if not modelos:
        raise ConfigError("indique al menos un --ckpt o --oracle")

    referencia = pd.read_csv(args.baseline) if args.baseline else None
    if args.ratio and referencia is None:
        if len(modelos) < 2:
            raise ConfigError("el modo ratio necesita --baseline o al menos dos modelos")
        primero = next(iter(modelos.values()))
        referencia = bench.distortion_curve(primero, ds, sch, cfg.bench.t_grid, cfg.bench.mc_draws, args.seed)
    modo = "ratio" if args.ratio else "absolute"
    curvas = {n: bench.distortion_curve(m, ds, sch, cfg.bench.t_grid, cfg.bench.mc_draws, args.seed,
                                        mode=modo, baseline=referencia)
              for n, m in modelos.items()}
    tabla = pd.concat([df.assign(model=n) for n, df in curvas.items()], ignore_index=True)
    _guardar_tabla(tabla, salida / "distortion.csv",
                   grafica_distorsion(curvas, "ratio" if args.ratio else "rmse"))


def cmd_bench(args):
    cfg, sch, salida = _contexto(args)
    b = cfg.bench
    if args.que == "throughput":
        configs = bench.matched_configs(b.patch_sizes, b.budget, b.shape, base=replace(cfg.model, timesteps=sch.T))
        tabla = bench.throughput(configs, sch, b.shape, b.batch, b.steps, b.reps, b.warmup, b.workers,
                                 args.seed, progress=not args.quiet)
        _guardar_tabla(tabla, salida / "throughput.csv", grafica_rendimiento(tabla))
    elif args.que == "memory":
        tablas = {}
        for P in b.patch_sizes:
            m = replace(cfg.model, P=P, channels=b.shape[2])
            tablas[f"P={P}"] = bench.activation_memory(m, b.batch, b.shape, b.bytes_per_element)
        tabla = pd.concat([df.assign(config=n) for n, df in tablas.items()], ignore_index=True)
        _guardar_tabla(tabla, salida / "memory.csv", grafica_memoria(tablas))
        unet = {f"P={P}": bench.unet_activation_memory(P=P)[0] for P in (1, 4)}
        _, supuestos = bench.unet_activation_memory()
        _guardar_tabla(pd.concat([df.assign(config=n) for n, df in unet.items()], ignore_index=True),
                       salida / "unet_memory.csv", grafica_memoria(unet))
        (salida / "unet_assumptions.txt").write_text("\n".join(supuestos) + "\n", encoding="utf-8")
        print(f"reducción de activaciones U-Net P=4 vs P=1: {bench.memory_reduction(4, 1):.1f}x")
    else:
        _distorsion(args, cfg, sch, salida)


def cmd_distortion(args):
    cfg, sch, salida = _contexto(args)
    _distorsion(args, cfg, sch, salida)


def cmd_check(args):
    _, _, salida = _contexto(args)
    tabla = run_checks(args.seed, args.suite or None)
    _guardar_tabla(tabla, salida / "check.csv")
    print(format_table(tabla))
    fallidas = int((~tabla["passed"]).sum())
    print(f"{'✅' if not fallidas else '❌'} {len(tabla) - fallidas}/{len(tabla)} suites pasaron")
    return 0 if not fallidas else 1


# ============================================================
# 🧭 ARGUMENTOS
# ============================================================
def _opciones_modelo(p):
    p.add_argument("--ckpt", action="append", help="ruta de un checkpoint (repetible en distorsión)")
    p.add_argument("--oracle", action="store_true", help="usar el denoiser óptimo del conjunto de datos")
    p.add_argument("--raw", action="store_true", help="usar los pesos crudos en lugar de la EMA")


def _opciones_distorsion(p):
    p.add_argument("--ratio", action="store_true", help="dividir por una curva de referencia")
    p.add_argument("--baseline", help="CSV de referencia con columnas t, rmse")


def construir_parser() -> argparse.ArgumentParser:
    comun = argparse.ArgumentParser(add_help=False)
    comun.add_argument("--config", help="archivo JSON de configuración")
    comun.add_argument("--set", action="append", default=[], metavar="SECCION.CLAVE=VALOR")
    comun.add_argument("--out", help="carpeta raíz de salida (PDM_OUT tiene prioridad)")
    comun.add_argument("--seed", type=int, default=0)
    comun.add_argument("-v", "--verbose", action="store_true")
    comun.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="app.py", description="Difusión con parches a escala de escritorio")
    sub = parser.add_subparsers(dest="comando", required=True)

    p = sub.add_parser("schedule", parents=[comun], help="tabla del cronograma y figuras")
    p.add_argument("--snr", type=float, default=0.25)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("split-point", parents=[comun], help="timestep con SNR más cercana al objetivo")
    p.add_argument("--snr", type=float, default=0.25)
    p.set_defaults(func=cmd_split_point)

    for nombre, func in (("oracle", cmd_oracle), ("posterior-sample", cmd_posterior_sample)):
        p = sub.add_parser(nombre, parents=[comun], help="tira de imágenes del oráculo por timestep")
        p.add_argument("--timesteps", default="0,250,500,750,970")
        p.add_argument("--example", type=int, default=0)
        p.add_argument("--rows", type=int, default=3, help="muestras posteriores por columna")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[comun], help="entrenar un denoiser")
    p.add_argument("--compare", action="store_true", help="entrenar x, eps y v con los mismos datos")
    p.add_argument("--init-from", help="checkpoint inicial (arranque en caliente)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[comun], help="muestreo ancestral")
    p.add_argument("--ckpt")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--split", help="S:bajo.ckpt:alto.ckpt")
    p.add_argument("--count", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--labels", help="clases separadas por coma")
    p.add_argument("--w", type=float)
    p.add_argument("--threshold", choices=("none", "static", "dynamic"))
    p.add_argument("--percentile", type=float)
    p.add_argument("--grid", action="store_true", help="escribir además una hoja con todas las muestras")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", parents=[comun], help="rendimiento, memoria o distorsión")
    p.add_argument("que", choices=("throughput", "memory", "distortion"))
    _opciones_modelo(p)
    _opciones_distorsion(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("distortion", parents=[comun], help="curvas de distorsión por timestep")
    _opciones_modelo(p)
    _opciones_distorsion(p)
    p.set_defaults(func=cmd_distortion)

    p = sub.add_parser("check", parents=[comun], help="suite de propiedades")
    p.add_argument("--suite", action="append", help="ejecutar solo esta suite (repetible)")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = construir_parser().parse_args(argv)
    configurar_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args) or 0
    except PDMError as e:
        print(f"❌ Error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
