import numpy as np
import pytest

from pdm import denoiser
from pdm.bench import (BenchConfig, activation_memory, config_digest, distortion_curve, matched_configs,
                       memory_reduction, throughput, unet_activation_memory)
from pdm.datos import points
from pdm.denoiser import DenoiserConfig
from pdm.errores import ConfigError
from pdm.oracle import OracleModel

OCULTAS = ["embed", "norm", "conv1+temb", "silu", "conv2", "residual", "out_norm"]


class TestMemoria:
    def test_capas_ocultas_escalan_con_P_cuadrado(self):
        base = DenoiserConfig(width=16, channels=3)
        p1 = activation_memory(base, 1, (32, 32, 3)).set_index(["stage", "layer"])
        p4 = activation_memory(DenoiserConfig(P=4, width=16, channels=3), 1, (32, 32, 3)).set_index(["stage", "layer"])
        ocultas = p1.index.get_level_values("layer").isin(OCULTAS)
        np.testing.assert_array_equal(p1.loc[ocultas, "elements"] / p4.loc[ocultas, "elements"], 16)

    def test_lineal_en_el_lote(self):
        cfg = DenoiserConfig(P=2, width=8, classes=3, channels=1)
        uno = activation_memory(cfg, 1, (8, 8, 1))
        cuatro = activation_memory(cfg, 4, (8, 8, 1))
        np.testing.assert_array_equal(cuatro["elements"], 4 * uno["elements"])
        np.testing.assert_array_equal(cuatro["bytes"], 8 * cuatro["elements"])
        assert "gate" in set(uno["layer"])

    def test_imagen_no_divisible(self):
        with pytest.raises(ConfigError):
            activation_memory(DenoiserConfig(P=3), 1, (8, 8, 3))

    def test_unet_reduccion(self):
        assert memory_reduction(P=4) >= 3.0
        tabla, supuestos = unet_activation_memory()
        assert len(supuestos) > 0
        assert {"stage", "layer", "elements", "bytes"} <= set(tabla.columns)

    def test_unet_resolucion_invalida(self):
        with pytest.raises(ConfigError):
            unet_activation_memory(image=100, P=4)


class TestRendimiento:
    def test_configuraciones_emparejadas(self):
        configs = matched_configs((2, 4, 8), 20000, (32, 32, 3))
        assert [c.P for c in configs] == [2, 4, 8]
        for c in configs:
            assert abs(denoiser.parameter_count(c) - 20000) / 20000 < 0.3
        assert len({config_digest(c) for c in configs}) == 3

    def test_emparejar_no_divisible(self):
        with pytest.raises(ConfigError):
            matched_configs((3,), 1000, (8, 8, 1))

    def test_imagenes_por_segundo(self, small_schedule):
        cfg = DenoiserConfig(P=2, width=4, blocks=1, time_dim=4, channels=1, timesteps=50)
        tabla = throughput([cfg], small_schedule, (4, 4, 1), batch=2, steps=2, reps=2, warmup=0)
        assert len(tabla) == 1
        fila = tabla.iloc[0]
        assert fila["images_per_second"] > 0
        assert fila["min_ips"] <= fila["images_per_second"] <= fila["max_ips"]
        assert fila["model.P"] == 2
        assert fila["config_digest"] == config_digest(cfg)

    def test_parches_grandes_son_mas_rapidos(self, schedule):
        configs = matched_configs((2, 4, 8), 20000, (32, 32, 3), base=DenoiserConfig(channels=3, timesteps=1000))
        tabla = throughput(configs, schedule, (32, 32, 3), batch=4, steps=4, reps=5, warmup=1)
        ips = tabla["images_per_second"].to_numpy()
        assert ips[0] < ips[1] < ips[2]

    def test_costo_lineal_en_los_pasos(self, small_schedule):
        cfg = DenoiserConfig(P=2, width=8, blocks=1, time_dim=8, channels=1, timesteps=50)
        cortos = throughput([cfg], small_schedule, (8, 8, 1), batch=2, steps=5, reps=5, warmup=1)
        largos = throughput([cfg], small_schedule, (8, 8, 1), batch=2, steps=20, reps=5, warmup=1)
        razon = cortos["images_per_second"].iloc[0] / largos["images_per_second"].iloc[0]
        assert 2.0 <= razon <= 8.0

    def test_config_invalida(self):
        with pytest.raises(ConfigError):
            BenchConfig(reps=0)
        with pytest.raises(ConfigError):
            BenchConfig.from_dict({"repeticiones": 2})


class TestDistorsion:
    def test_oraculo_con_un_ejemplo_es_exacto(self, schedule):
        ds = points([0.3])
        curva = distortion_curve(OracleModel(ds, schedule), ds, schedule, (1, 500, 1000), mc_draws=4)
        np.testing.assert_array_equal(curva["rmse"], 0.0)
        assert list(curva["t"]) == [1, 500, 1000]

    def test_oraculo_no_decrece(self, schedule, toy_images):
        curva = distortion_curve(OracleModel(toy_images, schedule), toy_images, schedule,
                                 (20, 200, 500, 1000), mc_draws=32)
        r, s = curva["rmse"].to_numpy(), curva["stderr"].to_numpy()
        assert np.all(r[1:] >= r[:-1] - 3 * (s[1:] + s[:-1]))

    def test_ratio_sin_referencia(self, schedule, two_points):
        with pytest.raises(ConfigError):
            distortion_curve(OracleModel(two_points, schedule), two_points, schedule, (10,), mode="ratio")

    def test_ratio_contra_si_mismo(self, schedule, two_points):
        modelo = OracleModel(two_points, schedule)
        ref = distortion_curve(modelo, two_points, schedule, (300, 900), mc_draws=8)
        curva = distortion_curve(modelo, two_points, schedule, (300, 900), mc_draws=8, mode="ratio", baseline=ref)
        np.testing.assert_allclose(curva["ratio"], 1.0)

    def test_referencia_incompleta(self, schedule, two_points):
        modelo = OracleModel(two_points, schedule)
        ref = distortion_curve(modelo, two_points, schedule, (300,))
        with pytest.raises(ConfigError):
            distortion_curve(modelo, two_points, schedule, (300, 900), mode="ratio", baseline=ref)

    def test_sorteos_invalidos(self, schedule, two_points):
        with pytest.raises(ConfigError):
            distortion_curve(OracleModel(two_points, schedule), two_points, schedule, (10,), mc_draws=0)
