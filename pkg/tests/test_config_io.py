import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointshaping import config as config_mod
from jointshaping import io
from jointshaping._validation import ValidationError
from jointshaping.config import CalibrationConfig, EvalConfig, ExperimentConfig, MbConfig
from jointshaping.constellation import make_qam, maxwell_boltzmann
from jointshaping.nlin import LinkParams, NlinCoeffs
from jointshaping.ssfm import SsfmConfig
from jointshaping.trainer import TrainConfig, TrainHistory

pos = st.floats(1e-6, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def experiment_configs(draw):
    link = LinkParams(
        D=draw(pos), gamma=draw(pos), alpha_db=draw(st.floats(0, 1)), span_length=draw(pos),
        rolloff=draw(st.floats(0, 1)),
    )
    tau_min = draw(st.floats(0.1, 2))
    train = TrainConfig(
        batch_size=draw(st.integers(1, 10**5)), learning_rate=draw(pos), iterations=draw(st.integers(0, 10**6)),
        tau_min=tau_min, tau0=tau_min + draw(st.floats(0, 20)), power=draw(pos),
        estimator=draw(st.sampled_from(TrainConfig.ESTIMATORS)),
    )
    n_sym = 1 << draw(st.integers(10, 18))
    ssfm = SsfmConfig(
        samples_per_symbol=draw(st.sampled_from([2, 4, 8, 16])), step_km=draw(pos), adaptive=draw(st.booleans()),
        n_symbols=n_sym, discard_symbols=draw(st.integers(0, n_sym // 2 - 1)),
    )
    cal = CalibrationConfig(
        probes=draw(st.lists(st.sampled_from(["qpsk", "qam16", "two-ring", "mb256-l3"]), min_size=1, max_size=4)),
        powers_dbm=draw(st.lists(st.floats(-5, 20), min_size=1, max_size=4)),
    )
    return ExperimentConfig(
        link=link, train=train, ssfm=ssfm, calibration=cal,
        mb=MbConfig(n_grid=draw(st.integers(3, 50))),
        evaluation=EvalConfig(kde_method=draw(st.sampled_from(["binned", "exact"]))),
        powers_dbm=draw(st.lists(st.floats(-10, 20), min_size=1, max_size=8)),
        seed=draw(st.integers(0, 2**32 - 1)),
    )


class TestConfig:
    def test_default_round_trip(self):
        cfg = ExperimentConfig()
        assert config_mod.loads(config_mod.dumps(cfg)) == cfg

    @settings(max_examples=60, deadline=None)
    @given(experiment_configs())
    def test_round_trip_property(self, cfg):
        text = config_mod.dumps(cfg)
        back = config_mod.loads(text)
        assert back == cfg
        assert config_mod.dumps(back) == text

    def test_link_defaults_are_explicit(self):
        text = config_mod.dumps(ExperimentConfig())
        for key in ("D: 16.8", "gamma: 1.14", "alpha_db: 0.21", "span_length: 170.0", "noise_figure_db: 4.5",
                    "symbol_rate: 64.0", "rolloff: 0.1", "carrier_freq: 193.41"):
            assert key in text
        assert ExperimentConfig().powers_dbm == tuple(float(p) for p in range(15))

    def test_exponent_floats_parse(self):
        cfg = config_mod.loads("train:\n  learning_rate: 5e-3\n  tau_decay: 1E-4\n")
        assert cfg.train.learning_rate == 5e-3 and cfg.train.tau_decay == 1e-4

    def test_partial_file_uses_defaults(self):
        cfg = config_mod.loads("seed: 7\nlink:\n  span_length: 80\n")
        assert cfg.seed == 7 and cfg.link.span_length == 80 and cfg.link.gamma == 1.14

    @pytest.mark.parametrize(
        "text",
        ["bogus: 1\n", "link:\n  gama: 1\n", "link: 3\n", "train:\n  batch_size: -1\n", "[1, 2\n", "- 1\n"],
    )
    def test_rejects_invalid(self, text):
        with pytest.raises(ValidationError):
            config_mod.loads(text)

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig(seed=3)
        config_mod.save(cfg, tmp_path / "c.yaml")
        assert config_mod.load(tmp_path / "c.yaml") == cfg


class TestIo:
    def test_constellation_file(self, tmp_path):
        c = maxwell_boltzmann(make_qam(256).points, 2.3)
        io.save_constellation(c, tmp_path / "c.json")
        back = io.load_constellation(tmp_path / "c.json")
        np.testing.assert_array_equal(back.points, c.points)
        np.testing.assert_array_equal(back.probs, c.probs)

    def test_constellation_bad_file(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ValidationError):
            io.load_constellation(tmp_path / "bad.json")
        with pytest.raises(ValidationError):
            io.load_constellation(tmp_path / "missing.json")

    def test_coeffs_file(self, tmp_path):
        c = NlinCoeffs(4.3e-5, (1.0, 2.0, 3.0, -0.5), 0.98)
        io.save_coeffs(c, tmp_path / "k.json")
        back = io.load_coeffs(tmp_path / "k.json")
        assert back == c and back.r2 == 0.98

    def test_history_columns(self, tmp_path):
        h = TrainHistory()
        h.append(step=0, objective_bits=1.5, entropy_bits=2.0, mu4=1.3, mu6=2.0, temperature=10.0)
        io.write_history(h, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "step,objective_bits,entropy_bits,mu4,mu6,temperature"
        assert lines[1] == "0,1.5,2.0,1.3,2.0,10.0"

    def test_sweep_round_trip(self, tmp_path):
        row = dict(power_dbm=8.0, scheme="js", estimator="mss", mi_bits_4d=12.3, snr_eff_db=math.pi,
                   mu4=1.5, mu6=2.9, entropy_bits=7.4, seed=42, extra="ignored")
        with io.SweepWriter(tmp_path / "s.csv", ["master_seed=1"]) as w:
            w.write(row)
        text = (tmp_path / "s.csv").read_text()
        assert text.startswith("# master_seed=1\n")
        assert text.splitlines()[1] == ",".join(io.SWEEP_COLUMNS)
        (back,) = io.read_sweep(tmp_path / "s.csv")
        assert back["snr_eff_db"] == math.pi and back["seed"] == 42 and back["scheme"] == "js"
