import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracheat.config import (ExperimentConfig, KINDS, build_coefficients, build_grid,
                             build_perturbation, build_scan, describe_keys, load_config,
                             parse_config, validate)
from fracheat.errors import ConfigError


def test_minimal_density_config_gets_defaults():
    cfg = parse_config("[experiment]\nkind = density\n[stable]\nalpha = 0.3\n")
    assert cfg.kind == "density"
    assert cfg.stable.alpha == 0.3
    assert cfg.stable.rel_tol == 1e-9 and cfg.stable.s_lo is None
    assert cfg.quadrature == ExperimentConfig().quadrature
    assert cfg.scan.s_count == 100


def test_alpha_out_of_range_reports_line():
    with pytest.raises(ConfigError, match=r"alpha must lie in \(0,1\)") as info:
        parse_config("[experiment]\nkind = density\n[stable]\nalpha = 1.5\n")
    assert info.value.lineno == 4
    assert str(info.value).startswith("line 4: ")


@pytest.mark.parametrize("text, line, fragment", [
    ("[stable]\nalpha = 0.5\nfoo = 1\n", 3, "unknown key 'foo'"),
    ("[stable]\nalpha = 0.5\n\n[bogus]\nx = 1\n", 4, "unknown section"),
    ("[grid]\npoints = many\n", 2, "cannot parse"),
    ("[experiment]\nkind = teleport\n", 2, "cannot parse"),
    ("[scan]\nt_min = 0.1\nt_max = 10\n", 3, "3 decades"),
    ("[scan]\nr_count = 5\n", 2, "r_count"),
    ("[stable]\nalpha = 0.5\nalpha = 0.6\n", 3, "duplicate"),
    ("alpha = 0.5\n", 1, "outside"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError, match=fragment) as info:
        parse_config(text)
    assert info.value.lineno == line


def test_comments_and_blank_lines_are_counted():
    text = "# header\n\n[stable]\n; note\nalpha = 0  # bad\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.lineno == 5


def test_inline_values_checked_against_lam():
    text = "[grid]\npoints = 4\ncoefficients = inline\nlam = 2\nvalues = 1, 1, 3, 1\n"
    with pytest.raises(ConfigError, match="values"):
        parse_config(text)
    cfg = parse_config(text.replace("3, 1", "2, 1"))
    field = build_coefficients(cfg, build_grid(cfg))
    np.testing.assert_array_equal(field.values[:, 0, 0], [1, 1, 2, 1])


def test_default_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(cfg.to_ini()) == cfg


@given(alpha=st.floats(0.01, 0.99), t_min=st.floats(1e-6, 1.0), tol=st.floats(1e-12, 1e-3),
       kind=st.sampled_from(KINDS), eps=st.lists(st.floats(0.0, 0.5), min_size=1, max_size=5))
def test_round_trip_preserves_floats_exactly(alpha, t_min, tol, kind, eps):
    base = parse_config(f"[experiment]\nkind = {kind}\ntolerance = {tol!r}\n"
                        f"[stable]\nalpha = {alpha!r}\n"
                        f"[scan]\nt_min = {t_min!r}\nt_max = {t_min * 2e3!r}\n"
                        f"[stability]\nepsilons = {', '.join(repr(e) for e in eps)}\n")
    assert parse_config(base.to_ini()) == base


def test_help_lists_every_key():
    text = describe_keys()
    for section, fields_ in ExperimentConfig().to_dict().items():
        assert f"[{section}]" in text
        for key in fields_:
            assert f"  {key} = " in text


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[stable]\nalpha = 0.7\n", encoding="utf-8")
    assert load_config(path).stable.alpha == 0.7


def test_grid_scan_uses_every_node_spacing():
    cfg = parse_config("[grid]\npoints = 65\n[scan]\nt_min = 0.001\nt_max = 1\nr_max = 0.5\n")
    grid = build_grid(cfg)
    scan = build_scan(cfg, grid)
    np.testing.assert_allclose(np.diff(scan.r), grid.spacing[0])
    assert scan.r[-1] == pytest.approx(0.5)


def test_random_perturbation_is_seeded():
    text = "[experiment]\nseed = 7\n[stability]\nperturbation = random-blocks\n"
    cfg = parse_config(text)
    grid = build_grid(cfg)
    a, b = build_perturbation(cfg, grid), build_perturbation(parse_config(text), grid)
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a[:, 0, 0])) <= {-1.0, 1.0}


def test_validate_rejects_truncation_that_is_too_coarse():
    cfg = parse_config("[stable]\nalpha = 0.3\n[quadrature]\ns_max = 1000\ntail_order = 2\n")
    with pytest.raises(ConfigError):
        validate(cfg)
