import numpy as np
import pytest
from scipy.stats import chisquare

from pdm.core import gaussian, stream
from pdm.datos import points, two_point
from pdm.denoiser import CheckpointModel, DenoiserConfig
from pdm.errores import ConfigError
from pdm.oracle import EmpiricalDataset, OracleModel
from pdm.param import GuidanceConfig, Kind, Prediction
from pdm.sampler import SampleConfig, SplitConfig, ancestral_step, parse_split, sample, split_dispatch
from pdm.schedule import linear_schedule
from pdm.verificacion import randomized_checkpoint


@pytest.fixture
def etiquetado():
    return EmpiricalDataset(np.array([-0.9, -0.8, 0.8, 0.9]).reshape(4, 1, 1, 1), labels=[0, 0, 1, 1])


class TestDivision:
    def test_parse(self):
        s = parse_split("396:bajo.ckpt:alto.ckpt")
        assert (s.S, s.low_model, s.high_model) == (396, "bajo.ckpt", "alto.ckpt")

    @pytest.mark.parametrize("texto", ["x:a:b", "10:a", "10::b", "0:a:b"])
    def test_parse_invalido(self, texto):
        with pytest.raises(ConfigError):
            parse_split(texto)

    def test_frontera(self):
        s = SplitConfig(396, "bajo", "alto")
        assert split_dispatch(396, s) == "bajo"
        assert split_dispatch(397, s) == "alto"
        assert split_dispatch(1, s) == "bajo"
        assert split_dispatch(5, None, "unico") == "unico"

    def test_S_no_menor_que_T(self, schedule, two_points):
        modelo = OracleModel(two_points, schedule)
        with pytest.raises(ConfigError):
            sample(SampleConfig(count=2, steps=5, shape=(1, 1, 1)), None, schedule,
                   SplitConfig(1000, modelo, modelo))

    def test_division_identica_bit_a_bit(self, schedule, two_points):
        modelo = OracleModel(two_points, schedule)
        cfg = SampleConfig(count=16, steps=50, shape=(1, 1, 1), seed=4)
        solo = sample(cfg, modelo, schedule)
        dividido = sample(cfg, None, schedule, SplitConfig(396, modelo, modelo))
        np.testing.assert_array_equal(solo.images, dividido.images)
        assert solo.evaluations == dividido.evaluations == 50


class TestPasoAncestral:
    def test_ultimo_paso_sin_ruido(self, schedule, rng):
        z = gaussian((3, 2, 2, 1), rng)
        x_hat = np.clip(gaussian(z.shape, rng) * 0.3, -0.9, 0.9)
        pred = Prediction(Kind.X, x_hat)
        guia = GuidanceConfig(threshold="none")
        a = ancestral_step(z, 1, pred, schedule, guia, stream(0, "a"))
        b = ancestral_step(z, 1, pred, schedule, guia, stream(1, "b"))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, x_hat)

    def test_varianza_beta_difiere(self, schedule, rng):
        z = gaussian((2, 2, 2, 1), rng)
        pred = Prediction(Kind.EPS, gaussian(z.shape, rng))
        guia = GuidanceConfig(threshold="static")
        a = ancestral_step(z, 300, pred, schedule, guia, stream(0, "v"), "posterior")
        b = ancestral_step(z, 300, pred, schedule, guia, stream(0, "v"), "beta")
        assert not np.array_equal(a, b)


class TestMuestreo:
    def test_misma_semilla_mismas_muestras(self, schedule, two_points):
        modelo = OracleModel(two_points, schedule)
        a = sample(SampleConfig(count=8, steps=20, shape=(1, 1, 1), seed=1), modelo, schedule)
        b = sample(SampleConfig(count=8, steps=20, shape=(1, 1, 1), seed=1), modelo, schedule)
        c = sample(SampleConfig(count=8, steps=20, shape=(1, 1, 1), seed=2), modelo, schedule)
        np.testing.assert_array_equal(a.images, b.images)
        assert not np.array_equal(a.images, c.images)

    def test_dos_puntos_frecuencias(self, schedule, two_points):
        res = sample(SampleConfig(count=2000, steps=100, shape=(1, 1, 1), seed=0),
                     OracleModel(two_points, schedule), schedule)
        x = res.images.reshape(-1)
        np.testing.assert_allclose(np.abs(x), 0.9, atol=1e-6)
        frac = np.mean(x > 0)
        assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / len(x))

    def test_tres_ejemplos_chi_cuadrado(self, schedule):
        ds = points([-0.6, 0.1, 0.7])
        res = sample(SampleConfig(count=1500, steps=250, shape=(1, 1, 1), seed=7),
                     OracleModel(ds, schedule), schedule)
        x = res.images.reshape(-1)
        cercano = np.argmin(np.abs(x[:, None] - ds.examples.reshape(1, -1)), axis=1)
        conteos = np.bincount(cercano, minlength=3)
        assert chisquare(conteos).pvalue > 1e-3

    def test_guia_cuesta_dos_evaluaciones(self, schedule, etiquetado):
        modelo = OracleModel(etiquetado, schedule)
        guiado = sample(SampleConfig(count=4, steps=25, shape=(1, 1, 1), labels=[1],
                                     guidance={"w": 3.0}), modelo, schedule)
        assert guiado.evaluations == 50
        simple = sample(SampleConfig(count=4, steps=25, shape=(1, 1, 1), labels=[1],
                                     guidance={"w": 1.0}), modelo, schedule)
        assert simple.evaluations == 25

    def test_clase_pedida_domina(self, schedule, etiquetado):
        res = sample(SampleConfig(count=200, steps=50, shape=(1, 1, 1), labels=[1],
                                  guidance={"w": 1.0}), OracleModel(etiquetado, schedule), schedule)
        assert np.all(res.images > 0)

    def test_modelo_entrenable(self, tiny_ckpt, small_schedule):
        res = sample(SampleConfig(count=2, steps=10, shape=(4, 4, 1), labels=[0, 1],
                                  guidance={"w": 2.0}), CheckpointModel(tiny_ckpt), small_schedule)
        assert res.images.shape == (2, 4, 4, 1)
        assert np.all(np.isfinite(res.images))
        assert res.evaluations == 20


class TestValidacion:
    def test_cronograma_distinto(self, schedule, two_points):
        otro = linear_schedule(1000, 1e-4, 0.03)
        with pytest.raises(ConfigError):
            sample(SampleConfig(count=1, steps=5, shape=(1, 1, 1)), OracleModel(two_points, otro), schedule)

    def test_tamanos_de_parche_distintos(self, small_schedule):
        modelos = []
        for P in (1, 2):
            ck = randomized_checkpoint(DenoiserConfig(P=P, width=4, blocks=1, time_dim=4, channels=1, timesteps=50))
            ck.schedule_fingerprint = small_schedule.fingerprint
            modelos.append(CheckpointModel(ck))
        with pytest.raises(ConfigError):
            sample(SampleConfig(count=1, steps=5, shape=(4, 4, 1)), None, small_schedule,
                   SplitConfig(25, *modelos))

    def test_etiquetas_con_modelo_incondicional(self, schedule):
        with pytest.raises(ConfigError):
            sample(SampleConfig(count=2, steps=5, shape=(1, 1, 1), labels=[0]),
                   OracleModel(two_point(), schedule), schedule)

    def test_etiquetas_mal_contadas(self):
        with pytest.raises(ConfigError):
            SampleConfig(count=3, labels=[0, 1])
