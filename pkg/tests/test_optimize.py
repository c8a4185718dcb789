import numpy as np
import pytest

from wlde import optimize
from wlde.errors import BracketError, NotFoundError
from wlde.growth import GrowthParams, from_allee
from wlde.kernels import KernelFamily, KernelSpec
from wlde.outbreak import OutbreakMethod
from wlde.lattice import LatticeField, ProfileShape
from wlde.optimize import (
    COMPARE_COLUMNS,
    PROFILE_COLUMNS,
    Criterion,
    InvasionPredicate,
    OptimizeConfig,
    _bisect,
    acm_optimize,
    compare_table,
    critical_amplitude_by_profile,
    format_table,
    invasion_success,
    mcm_optimize,
)

GAUSSIAN = KernelSpec(family=KernelFamily.GAUSSIAN, scale=1.0)
LAPLACE = KernelSpec(family=KernelFamily.LAPLACE, scale=1.0)

# Synthetic thresholds stand in for simulations in the search-logic tests.
BIMODAL_FROM = 0.3712
INVADES_FROM = 0.4


@pytest.fixture
def base():
    return OptimizeConfig(kernel=GAUSSIAN, params=GrowthParams(s_f=0.3, s_h=0.7), extent=64, generations=50)


@pytest.fixture
def synthetic_runner(monkeypatch):
    def mode_counts(self, amplitude, half_width):
        return {k: (2 if k == 1 and amplitude >= BIMODAL_FROM else 1) for k in self.config.ks}

    def invades(self, amplitude, half_width):
        return amplitude >= INVADES_FROM

    monkeypatch.setattr(optimize._Runner, "mode_counts", mode_counts)
    monkeypatch.setattr(optimize._Runner, "invades", invades)


def test_invasion_predicates():
    values = np.ones(20)
    values[0] = 0.0
    field = LatticeField(values=values)
    assert invasion_success(field, 0.9, InvasionPredicate.MEAN)
    assert invasion_success(field, 0.9, InvasionPredicate.MIN_INTERIOR)
    assert not invasion_success(field, 0.99, InvasionPredicate.MEAN)
    values[10] = 0.5
    dipped = LatticeField(values=values)
    assert not invasion_success(dipped, 0.9, InvasionPredicate.CENTER)
    assert not invasion_success(dipped, 0.9, "min_interior")


@pytest.mark.parametrize(
    "update",
    [{"a_lo": 0.5, "a_hi": 0.4}, {"a_hi": 1.5}, {"beta": 1.0}, {"half_widths": []}, {"ks": [-1]}, {"step": 0.0}],
)
def test_config_rejects_bad_values(update):
    with pytest.raises(ValueError):
        OptimizeConfig(kernel=GAUSSIAN, params=GrowthParams(s_f=0.3, s_h=0.7), **update)


def test_config_rejects_unknown_fields():
    with pytest.raises(ValueError):
        OptimizeConfig(kernel=GAUSSIAN, params=GrowthParams(s_f=0.3, s_h=0.7), sigma=2.0)


def test_outbreak_horizon_defaults_to_generations(base):
    assert base.horizon == 50
    assert base.model_copy(update={"outbreak_horizon": 30}).horizon == 30


def test_bisect_brackets_the_switch():
    a_star, iterations = _bisect(lambda a: a >= 0.3, 0.0, 1.0, 1e-3, "test")
    assert 0.3 <= a_star <= 0.301
    assert iterations == 10


def test_acm_on_small_lattice():
    config = OptimizeConfig(
        kernel=GAUSSIAN, params=from_allee(0.8, 0.2), delta=0.5, extent=64, generations=200, half_widths=[8.0]
    )
    result = acm_optimize(config)
    assert result.criterion is Criterion.ACM
    assert 0.05 < result.amplitude <= 1.0
    assert result.cost == pytest.approx(2 * 8.0 * result.amplitude)
    assert result.diagnostics["verified_flip"]
    assert result.kernel == GAUSSIAN.label


def test_acm_bracket_failure():
    config = OptimizeConfig(
        kernel=GAUSSIAN, params=from_allee(0.8, 0.2), delta=0.5, extent=64, generations=200,
        half_widths=[8.0], a_lo=0.9,
    )
    with pytest.raises(BracketError):
        acm_optimize(config)


def test_acm_picks_cheapest_width(base, synthetic_runner):
    result = acm_optimize(base.model_copy(update={"half_widths": [2.0, 0.5, 1.0]}))
    assert result.half_width == 0.5
    assert INVADES_FROM <= result.amplitude <= INVADES_FROM + base.tolerance
    assert result.cost == pytest.approx(2 * 0.5 * result.amplitude)


def test_mcm_scan_then_refine(base, synthetic_runner):
    (result,) = mcm_optimize(base)
    assert result.criterion is Criterion.MCM and result.k == 1
    assert BIMODAL_FROM <= result.amplitude <= BIMODAL_FROM + base.tolerance
    assert result.diagnostics["iterations"] == 3
    trace = result.diagnostics["trace"]
    assert trace[-1][1] == 2 and all(count == 1 for _, count in trace[:-1])


def test_mcm_bimodal_at_first_step(base, synthetic_runner):
    (result,) = mcm_optimize(base.model_copy(update={"a_lo": 0.5}))
    assert result.amplitude == 0.5
    assert result.diagnostics["iterations"] == 0


def test_mcm_not_found(base, synthetic_runner):
    with pytest.raises(NotFoundError):
        mcm_optimize(base.model_copy(update={"ks": [1, 2]}))


def test_critical_amplitude_ordering(base, monkeypatch):
    thresholds = {ProfileShape.PULSE: 0.45, ProfileShape.TRIANGULAR: 0.3712, ProfileShape.QUADRATIC: 0.35}

    def mode_counts(self, amplitude, half_width):
        return {k: 2 if amplitude >= thresholds[self.config.shape] else 1 for k in self.config.ks}

    monkeypatch.setattr(optimize._Runner, "mode_counts", mode_counts)
    table = critical_amplitude_by_profile(["pulse", "triangular", "quadratic"], base, threads=2)
    assert list(table["profile"]) == ["quadratic", "triangular", "pulse"]
    assert list(table.columns) == PROFILE_COLUMNS
    assert table["error"].eq("").all()


def test_compare_table_records_failures(base, synthetic_runner):
    table = compare_table([GAUSSIAN, LAPLACE], ["pulse", "triangular"], [1, 2], base, threads=2)
    assert list(table.columns) == COMPARE_COLUMNS
    assert len(table) == 8
    ok = table[table["k"] == 1]
    assert ok["error"].eq("").all()
    assert ok["mcm_a"].between(BIMODAL_FROM, BIMODAL_FROM + base.tolerance).all()
    missing = table[table["k"] == 2]
    assert missing["mcm_a"].isna().all()
    assert missing["error"].str.startswith("MCM:").all()
    assert table["acm_a"].between(INVADES_FROM, INVADES_FROM + base.tolerance).all()
    pulse = table[(table["profile"] == "pulse") & (table["k"] == 1)]
    triangular = table[(table["profile"] == "triangular") & (table["k"] == 1)]
    np.testing.assert_allclose(pulse["acm_cost"], pulse["acm_a"])
    np.testing.assert_allclose(triangular["acm_cost"], 0.5 * triangular["acm_a"])


def test_compare_table_acm_only(base, synthetic_runner):
    table = compare_table([GAUSSIAN], ["pulse"], [1], base, criteria=["ACM"])
    assert table["mcm_a"].isna().all()
    assert table["acm_a"].notna().all()


def test_format_table(base, synthetic_runner):
    table = compare_table([GAUSSIAN, LAPLACE], ["pulse"], [1, 2], base)
    text = format_table(table)
    lines = text.split("\n")
    assert lines[0].startswith("Kernel")
    assert any(line.startswith("=") for line in lines)
    assert "   -" in text
    # ACM columns appear on the first row of each block only
    assert lines[3].rstrip().endswith("-")


def test_empty_compare_table(base):
    table = compare_table([], ["pulse"], [1], base)
    assert table.empty and list(table.columns) == COMPARE_COLUMNS
    assert format_table(table) == "(empty table)"



def test_profile_without_bimodal_regime_keeps_its_row(base, monkeypatch):
    thresholds = {ProfileShape.PULSE: 0.45, ProfileShape.QUADRATIC: 0.35}

    def mode_counts(self, amplitude, half_width):
        limit = thresholds.get(self.config.shape, 2.0)
        return {k: 2 if amplitude >= limit else 1 for k in self.config.ks}

    monkeypatch.setattr(optimize._Runner, "mode_counts", mode_counts)
    table = critical_amplitude_by_profile(["pulse", "triangular", "quadratic"], base)
    assert list(table["profile"]) == ["quadratic", "pulse", "triangular"]
    failed = table.iloc[-1]
    assert np.isnan(failed["a_star"])
    assert "no bimodal regime" in failed["error"]
    assert table["error"].iloc[:2].eq("").all()


def test_mcm_simulates_each_amplitude_once_across_k(base, monkeypatch):
    calls = []

    def mode_counts(self, amplitude, half_width):
        calls.append(round(amplitude, 12))
        return {k: 2 if amplitude >= BIMODAL_FROM + 0.01 * k else 1 for k in self.config.ks}

    monkeypatch.setattr(optimize._Runner, "mode_counts", mode_counts)
    results = mcm_optimize(base.model_copy(update={"ks": [1, 2, 3]}))
    assert [r.k for r in results] == [1, 2, 3]
    assert [r.amplitude for r in results] == sorted(r.amplitude for r in results)
    assert len(calls) == len(set(calls))


def test_compare_cell_shares_one_runner(base, synthetic_runner, monkeypatch):
    built = []
    original = optimize._Runner.__init__

    def counting_init(self, config):
        built.append(config)
        original(self, config)

    monkeypatch.setattr(optimize._Runner, "__init__", counting_init)
    compare_table([GAUSSIAN], ["pulse"], [1, 2, 3], base)
    assert len(built) == 1


def test_unverified_acm_switch_is_reported(base, monkeypatch, caplog):
    # bisection ends at a* = 0.40083984375; the check one tolerance below lands in the stray band
    def invades(self, amplitude, half_width):
        return amplitude >= INVADES_FROM or 0.3998 <= amplitude < 0.3999

    monkeypatch.setattr(optimize._Runner, "invades", invades)
    monkeypatch.setattr(optimize._Runner, "mode_counts", lambda self, a, w: {k: 1 for k in self.config.ks})
    with caplog.at_level("WARNING", logger="wlde.optimize"):
        result = acm_optimize(base)
    assert result.amplitude == pytest.approx(0.40083984375)
    assert result.diagnostics["verified_flip"] is False
    assert "not monotone" in caplog.text
    table = compare_table([GAUSSIAN], ["pulse"], [1], base, criteria=["ACM"])
    assert "not verified" in table.loc[0, "error"]


@pytest.mark.slow
def test_mcm_on_simulated_release():
    config = OptimizeConfig(
        kernel=GAUSSIAN, params=GrowthParams(s_f=0.3, s_h=0.7), delta=0.5, extent=200, generations=400,
        half_widths=[2.0], a_lo=0.2, a_hi=0.5, step=0.05, tolerance=0.01, min_separation=2,
        outbreak_method=OutbreakMethod.POISSON,
    )
    (result,) = mcm_optimize(config)
    assert 0.2 < result.amplitude <= 0.5
    trace = result.diagnostics["trace"]
    assert trace[0][1] == 1 and trace[-1][1] == 2
    assert result.cost == pytest.approx(2 * 2.0 * result.amplitude)
