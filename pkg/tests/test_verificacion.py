import numpy as np

from pdm.core import gaussian, stream
from pdm.denoiser import DenoiserConfig
from pdm.verificacion import (SUITES, check_gradients, check_loss_floor, check_memory, check_oracle,
                              check_parameterization, check_patch_bijection, check_throughput, close_check,
                              finite_difference_errors, format_table, randomized_checkpoint, run_checks,
                              wrap_check)


class TestUtilidades:
    def test_close_check(self):
        assert close_check([1.0, 2.0], [1.0, 2.0 + 1e-9], atol=1e-8)[0]
        ok, dif = close_check([0.0], [1.0], atol=0.5)
        assert not ok and dif == 1.0

    def test_wrap_check_captura_excepciones(self):
        def roto():
            raise RuntimeError("fallo interno")
        ok, detalle = wrap_check(roto)()
        assert not ok and "RuntimeError" in detalle

    def test_wrap_check_captura_assert(self):
        def afirma():
            assert False, "no cumple"
        assert wrap_check(afirma)() == (False, "no cumple")


class TestSuites:
    def test_parches(self):
        ok, detalle = check_patch_bijection(0, casos=20)
        assert ok, detalle

    def test_oraculo(self):
        ok, detalle = check_oracle(0)
        assert ok, detalle

    def test_parametrizacion(self):
        ok, detalle = check_parameterization(0)
        assert ok, detalle

    def test_gradientes(self):
        ok, detalle = check_gradients(0)
        assert ok, detalle
        assert int(detalle.split()[0]) >= 200

    def test_gradientes_sin_coordenadas_repetidas_ni_nulas(self):
        cfg = DenoiserConfig(P=2, width=16, blocks=1, time_dim=8, classes=2, channels=1, timesteps=50)
        ckpt = randomized_checkpoint(cfg, seed=0)
        z = gaussian((2, 4, 4, 1), stream(0, "z"))
        errores = finite_difference_errors(ckpt, z, np.array([3, 40]), np.array([0, 2]), 6)
        assert not errores.duplicated(["param", "index"]).any()
        sesgos = errores[errores["param"].isin(["embed.b", "block0.conv2.b"])]
        assert len(sesgos) == 12
        assert (sesgos["analytic"].abs() > 1e-8).all()
        assert (errores["rel_err"] < 1e-4).all(), errores.sort_values("rel_err").tail(3).to_string()

    def test_memoria(self):
        ok, detalle = check_memory(0)
        assert ok, detalle

    def test_tabla(self):
        tabla = run_checks(0, ["parches", "memoria"])
        assert list(tabla.columns) == ["suite", "passed", "seconds", "detail"]
        assert tabla["passed"].all()
        assert format_table(tabla).count("✅") == 2

    def test_suite_desconocida(self):
        tabla = run_checks(0, ["inexistente"])
        assert not tabla["passed"].iloc[0]
        assert "KeyError" in tabla["detail"].iloc[0]

    def test_guia(self):
        assert len(SUITES) == 12
        assert run_checks(0, ["guía"])["passed"].all()

    def test_suelo_de_perdida(self):
        ok, detalle = check_loss_floor(0, iters=150)
        assert ok, detalle

    def test_rendimiento(self):
        assert SUITES["rendimiento"] is check_throughput
        ok, detalle = check_throughput(0)
        assert ok, detalle
