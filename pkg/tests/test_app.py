import json

import pandas as pd
import pytest

from app import construir_parser, main
from pdm.datos import read_pnm

DATOS_CHICOS = 'dataset.params={"n": 4, "size": 4, "channels": 1}'


@pytest.fixture(autouse=True)
def sin_pdm_out(monkeypatch):
    monkeypatch.delenv("PDM_OUT", raising=False)


class TestComandos:
    def test_punto_de_division(self, tmp_path, capsys):
        assert main(["split-point", "--out", str(tmp_path)]) == 0
        salida = capsys.readouterr().out
        S = int(salida.split("S = ")[1].split()[0])
        assert abs(S - 396) <= 3

    def test_cronograma(self, tmp_path):
        assert main(["schedule", "--out", str(tmp_path), "--set", "schedule.T=100"]) == 0
        tabla = pd.read_csv(tmp_path / "schedule" / "schedule.csv")
        assert len(tabla) == 100
        assert (tmp_path / "schedule" / "schedule.html").exists()
        assert (tmp_path / "schedule" / "amplification.html").exists()
        eco = json.loads((tmp_path / "schedule" / "config.json").read_text())
        assert eco["schedule"]["T"] == 100

    def test_tira_del_oraculo(self, tmp_path):
        assert main(["oracle", "--out", str(tmp_path), "--set", DATOS_CHICOS]) == 0
        tabla = pd.read_csv(tmp_path / "oracle" / "oracle.csv")
        assert list(tabla["t"]) == [0, 250, 500, 750, 970]
        tira = read_pnm(tmp_path / "oracle" / "oracle_strip.pgm")
        # 5 columnas de 4 px con borde de 1 px; filas: z_t y estimación
        assert tira.shape == (2 * 5 + 1, 5 * 5 + 1, 1)

    def test_muestras_posteriores(self, tmp_path):
        assert main(["posterior-sample", "--out", str(tmp_path), "--set", DATOS_CHICOS,
                     "--timesteps", "10,900", "--rows", "2"]) == 0
        tira = read_pnm(tmp_path / "posterior-sample" / "posterior_sample_strip.pgm")
        assert tira.shape == (3 * 5 + 1, 2 * 5 + 1, 1)

    def test_muestreo_con_oraculo(self, tmp_path, capsys):
        codigo = main(["sample", "--oracle", "--out", str(tmp_path), "--set", DATOS_CHICOS,
                       "--count", "3", "--steps", "10", "--grid", "-q"])
        assert codigo == 0
        carpeta = tmp_path / "sample"
        assert len(list(carpeta.glob("muestra_*.pgm"))) == 3
        assert (carpeta / "grid.pgm").exists()
        assert "10 evaluaciones" in capsys.readouterr().out

    def test_entrenar_y_muestrear(self, tmp_path):
        ajustes = ["--out", str(tmp_path), "--set", DATOS_CHICOS, "--set", "schedule.T=20",
                   "--set", "model.width=4", "--set", "model.P=2", "--set", "model.time_dim=4",
                   "--set", "model.blocks=1", "--set", "train.iters=2", "--set", "train.batch=2", "-q"]
        assert main(["train"] + ajustes) == 0
        ckpt = tmp_path / "train" / "final.ckpt"
        assert (ckpt / "manifest.json").exists()
        assert len(pd.read_csv(tmp_path / "train" / "metrics.csv")) == 2
        assert main(["sample", "--ckpt", str(ckpt), "--count", "2", "--steps", "5",
                     "--set", "sample.shape=[4,4,1]"] + ajustes) == 0

    def test_canales_del_checkpoint(self, tmp_path):
        ajustes = ["--out", str(tmp_path), "--set", DATOS_CHICOS, "--set", "schedule.T=20",
                   "--set", "model.width=4", "--set", "model.P=2", "--set", "model.time_dim=4",
                   "--set", "model.blocks=1", "--set", "train.iters=1", "--set", "train.batch=2", "-q"]
        assert main(["train"] + ajustes) == 0
        # sample.shape por defecto es (8, 8, 3); los canales salen del checkpoint
        assert main(["sample", "--ckpt", str(tmp_path / "train" / "final.ckpt"), "--count", "1",
                     "--steps", "3"] + ajustes) == 0
        assert read_pnm(tmp_path / "sample" / "muestra_0000.pgm").shape == (8, 8, 1)

    def test_memoria(self, tmp_path):
        assert main(["bench", "memory", "--out", str(tmp_path), "--set", "bench.patch_sizes=[2,4]",
                     "--set", "bench.shape=[8,8,1]"]) == 0
        tabla = pd.read_csv(tmp_path / "bench" / "memory.csv")
        assert set(tabla["config"]) == {"P=2", "P=4"}
        assert (tmp_path / "bench" / "unet_assumptions.txt").read_text().strip()

    def test_distorsion_del_oraculo(self, tmp_path):
        assert main(["distortion", "--oracle", "--out", str(tmp_path), "--set", DATOS_CHICOS,
                     "--set", "bench.t_grid=[10,500]", "--set", "bench.mc_draws=2"]) == 0
        tabla = pd.read_csv(tmp_path / "distortion" / "distortion.csv")
        assert list(tabla["t"]) == [10, 500]
        assert set(tabla["model"]) == {"oracle"}

    def test_check(self, tmp_path, capsys):
        assert main(["check", "--out", str(tmp_path), "--suite", "parches", "--suite", "memoria"]) == 0
        assert "2/2" in capsys.readouterr().out


class TestErrores:
    def test_error_del_dominio_sale_con_2(self, tmp_path, capsys):
        assert main(["sample", "--out", str(tmp_path)]) == 2
        assert "❌ Error" in capsys.readouterr().out

    def test_anulacion_invalida(self, tmp_path, capsys):
        assert main(["schedule", "--out", str(tmp_path), "--set", "schedule.T=0"]) == 2
        assert "❌" in capsys.readouterr().out

    def test_configuracion_inexistente(self, tmp_path, capsys):
        assert main(["schedule", "--out", str(tmp_path), "--config", str(tmp_path / "no_existe.json")]) == 2
        assert "❌ Error" in capsys.readouterr().out

    def test_subcomando_obligatorio(self):
        with pytest.raises(SystemExit):
            construir_parser().parse_args([])
