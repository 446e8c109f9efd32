import pytest

from gridreconf import config as cfgmod
from gridreconf.errors import ConfigError


def test_parse_and_coerce():
    vals = cfgmod.parse_text("""
# dataset
grid = bw33
count = 48
seed=5
; training
lr = 2e-3
no_export = yes
variants = SiPhyR, InSi
""")
    assert vals == {"grid": "bw33", "count": 48, "seed": 5, "lr": 2e-3, "no_export": True,
                    "variants": "SiPhyR, InSi"}
    assert cfgmod.split_list(vals["variants"]) == ("SiPhyR", "InSi")


@pytest.mark.parametrize("text", ["colour = red", "count = many", "no_export = maybe", "just a line"])
def test_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        cfgmod.parse_text(text)


def test_round_trip(tmp_path):
    vals = {"grid": "bw33", "count": 10, "lr": 0.1 + 0.2, "no_export": False}
    path = cfgmod.write_config(vals, tmp_path / "x.cfg")
    assert cfgmod.read_config(path) == vals


def test_dataset_spec_overrides():
    spec = cfgmod.dataset_spec({"count": 12, "layout": "DD-I"}, count=None, seed=9)
    assert (spec.count, spec.layout, spec.seed) == (12, "DD-I", 9)
    with pytest.raises(ConfigError):
        cfgmod.dataset_spec({"count": 0})


def test_train_config_from_values():
    tc = cfgmod.train_config({"epochs": 7, "seed": 3, "grid": "bw33"}, "bw33", "InSi", committee=2, big_m=None)
    assert (tc.epochs, tc.seed, tc.committee, tc.hidden, tc.lr) == (7, 3, 2, 5, 1e-4)
    assert cfgmod.train_config({"seed": 3}, "bw33", "SiPhyR", seed=8).seed == 8
    with pytest.raises(ConfigError):
        cfgmod.train_config({"epochs": 0}, "bw33", "SiPhyR")


def test_key_sets_cover_dataclasses():
    assert {"grid", "layout", "count", "seed"} <= set(cfgmod.DATASET_KEYS)
    assert {"epochs", "lr", "lambda_h", "flow_cap"} <= set(cfgmod.TRAIN_KEYS)
    assert "head" not in cfgmod.TRAIN_KEYS
    assert cfgmod.split_list(None) == ()


def test_experiment_config():
    vals = cfgmod.parse_text("count = 30\nvariants = InSi,ClaPhyR\ntest_layouts = DD-I\nepochs = 2\n"
                             "committee = 1\nlabel_test = no\nout = somewhere")
    ec = cfgmod.experiment_config(vals, seed=4)
    assert ec.variants == ("InSi", "ClaPhyR") and ec.test_layouts == ("DD-I",)
    assert (ec.epochs, ec.committee, ec.seed, ec.label_test) == (2, 1, 4, False)
    assert ec.train_data.count == 30
