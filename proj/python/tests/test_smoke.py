import pytest

import tdom


def test_config_round_trip():
    c = tdom.default_config()
    assert c.episodes == 3000
    text = tdom.dump_config(c)
    back = tdom.parse_config(text)
    assert tdom.dump_config(back) == text
    assert tdom.config_hash(back) == tdom.config_hash(c)


def test_config_validation():
    with pytest.raises(tdom.ConfigError):
        tdom.parse_config('{"sac":{"batch_size":0}}')
    with pytest.raises(tdom.ConfigError):
        tdom.load_config("no_such_file.json")


def test_mode_property():
    c = tdom.default_config()
    assert c.mode == "Ours"
    c.mode = "SL"
    assert c.mode == "SL"
    with pytest.raises(Exception):
        c.mode = "bogus"


def test_contact_force_saturates():
    c = tdom.default_config()
    assert tdom.contact_force(c, 0.0) == 0.0
    assert tdom.contact_force(c, 18.0) == pytest.approx(2.0, abs=0.01)


def test_oracle_best():
    c = tdom.default_config()
    o = tdom.oracle_best(c, "printer_book")
    assert o["selection"] in ("fine", "coarse")
    assert 0.0 < o["p"] <= 1.0
    with pytest.raises(tdom.ConfigError):
        tdom.oracle_best(c, "no_such_scenario")


def test_evaluate_oracle_matches_analytic():
    c = tdom.default_config()
    r = tdom.evaluate_oracle(c, "printer_book", episodes=200, seed=3)
    lo, hi = r["ci"]
    assert lo <= r["oracle_p"] <= hi


def test_heatmap_shape():
    c = tdom.default_config()
    g = tdom.heatmap(c, "printer_book", trials=20, seed=4)
    assert len(g) == 6 and all(len(row) == 6 for row in g)
    assert all(0.0 <= v <= 1.0 for row in g for v in row)


def test_compliance_direction():
    c = tdom.default_config()
    printer = tdom.compliance(c, "printer_book")
    fabric = tdom.compliance(c, "winter_fabric")
    assert fabric["tolerated_mm"] > printer["tolerated_mm"]
    assert printer["band_hi"] - printer["band_lo"] <= 0.1
