import numpy as np
import pytest
from pydantic import ValidationError

from cosparse.harness import (
    RHO_BIN, ExperimentPlan, NoTransitionError, PhaseGrid, emit, fit_alpha, load_grid, monotone_violations, rho_bin,
    run_plan, theory_rho, transition_points, transition_rho,
)
from util.storage import Storage


def synthetic_grid(dim=2, num_dirs=3, known=False, d_values=(20, 30, 40), alpha=1.0, width=0.01):
    grid = PhaseGrid(dim, num_dirs, known)
    for d in d_values:
        center = alpha * theory_rho(dim, d, num_dirs, known)
        for b in range(1, 80):
            rate = 1.0 / (1.0 + np.exp((b * RHO_BIN - center) / width))
            successes = int(round(rate * 1000))
            for trial in range(1000):
                grid.record(d, b * RHO_BIN, trial < successes)
    return grid


def small_plan(**overrides):
    fields = dict(dim=2, d_values=[6, 8], rho_values=[0.005], num_dirs=3, trials_per_cell=2, background=0.5)
    fields.update(overrides)
    return ExperimentPlan(**fields)


def test_rho_bins():
    assert rho_bin(0.1) == 20
    assert rho_bin(0.0049) == 1
    assert rho_bin(0.0) == 0


@pytest.mark.parametrize('overrides', [
    dict(trials_per_cell=0),
    dict(rho_values=[1.9]),
    dict(rho_values=[-0.1]),
    dict(num_dirs=2),
    dict(d_values=[]),
    dict(perturbation='gauss:1'),
])
def test_plan_validation(overrides):
    with pytest.raises(ValidationError):
        small_plan(**overrides)


def test_plan_mode_and_presets():
    assert small_plan().mode.value == 'tv'
    assert small_plan(cosupport_known=True).mode.value == 'tv-known'
    plan = ExperimentPlan.preset('desk-2d-3dirs', master_seed=5)
    assert plan.d_values == [40, 60, 80] and plan.master_seed == 5
    with pytest.raises(KeyError):
        ExperimentPlan.preset('full-3d')


def test_plan_trials_default_follows_mode():
    fields = dict(d_values=[24], rho_values=[0.05], num_dirs=3)
    assert ExperimentPlan(dim=2, cosupport_known=True, **fields).trials_per_cell == 30
    assert ExperimentPlan(dim=2, **fields).trials_per_cell == 10
    assert ExperimentPlan(dim=3, d_values=[8], rho_values=[0.05], num_dirs=3, cosupport_known=True).trials_per_cell == 10
    assert ExperimentPlan(dim=2, cosupport_known=True, trials_per_cell=4, **fields).trials_per_cell == 4
    assert ExperimentPlan.preset('desk-2d-known').trials_per_cell == 30


def test_plan_from_json(store):
    Storage().json_put('plan.json', small_plan().model_dump())
    assert ExperimentPlan.load('plan.json') == small_plan()


def test_near_constant_plan_all_success():
    grid = run_plan(small_plan())
    assert grid.complete
    for cell in grid.cells.values():
        assert cell.trials == 2 and cell.successes == 2


def test_run_plan_is_reproducible_across_workers():
    plan = small_plan(d_values=[8], rho_values=[0.05, 0.2], perturbed=True)
    first = run_plan(plan)
    again = run_plan(plan, workers=2)
    assert first.rows() == again.rows()
    for cell in first.cells.values():
        assert cell.trials + cell.skipped == 2
        assert 0 <= cell.successes <= cell.trials


def test_grid_record_and_merge():
    grid = PhaseGrid(2, 3)
    grid.record(10, 0.1, True)
    grid.record(10, 0.1, False)
    other = PhaseGrid(2, 3)
    other.record(10, 0.1, True)
    other.record(10, 0.2, None, 'phantom unreachable')
    grid.merge(other)
    cell = grid.cells[(10, 20)]
    assert (cell.successes, cell.trials) == (2, 3)
    assert grid.cells[(10, 40)].skipped == 1
    assert not grid.complete
    assert grid.rows()[0] == [10, '0.100', 3, 2, '0.6667']
    assert grid.rows()[1] == [10, '0.200', 0, 0, '']
    assert grid.to_dict()['annotations'] == ['d=10 rho=0.200: phantom unreachable']


def test_transition_rho_logistic():
    rho = np.arange(1, 60) * RHO_BIN
    rate = 1.0 / (1.0 + np.exp((rho - 0.12) / 0.01))
    assert transition_rho(rho, rate) == pytest.approx(0.12, abs=1e-4)
    assert transition_rho(rho, np.ones_like(rho)) is None
    assert transition_rho(rho, np.zeros_like(rho)) is None


def test_transition_rho_step():
    rho = np.array([0.05, 0.1, 0.15, 0.2])
    found = transition_rho(rho, np.array([1.0, 1.0, 0.0, 0.0]))
    assert 0.1 <= found <= 0.15


def test_theory_rho_decreases_with_d():
    values = [theory_rho(2, d, 3, False) for d in (20, 30, 40)]
    assert values[0] > values[1] > values[2] > 0
    assert theory_rho(2, 30, 3, True) > theory_rho(2, 30, 3, False)


def test_fit_alpha_self_consistent():
    grid = synthetic_grid()
    assert fit_alpha(grid) == pytest.approx(1.0, abs=0.01)
    assert grid.alpha == pytest.approx(1.0, abs=0.01)
    assert sorted(grid.transitions) == [20, 30, 40]


def test_fit_alpha_scaled():
    grid = synthetic_grid(alpha=0.6)
    assert fit_alpha(grid, theory='unknown', dim=2) == pytest.approx(0.6, abs=0.01)


def test_fit_alpha_single_transition():
    grid = synthetic_grid(d_values=(30,), alpha=0.6)
    assert list(transition_points(grid)) == [30]
    assert fit_alpha(grid) == pytest.approx(0.6, abs=0.01)


def test_fit_alpha_needs_transitions():
    grid = PhaseGrid(2, 3)
    for d in (20, 30):
        for b in (2, 4, 6):
            grid.record(d, b * RHO_BIN, True)
    assert transition_points(grid) == {}
    with pytest.raises(NoTransitionError):
        fit_alpha(grid)
    with pytest.raises(ValueError):
        fit_alpha(synthetic_grid(d_values=(20, 30)), theory='both')


def test_monotone_trend():
    assert monotone_violations(synthetic_grid(d_values=(20,))) == []
    grid = PhaseGrid(2, 3)
    for trial in range(30):
        grid.record(20, 0.05, trial < 3)
        grid.record(20, 0.10, True)
    [(d, rho)] = monotone_violations(grid)
    assert d == 20 and rho == pytest.approx(0.1)


def test_emit_empty_grid(tmp_path):
    csv_path, svg_path = emit(PhaseGrid(2, 3), 'empty', Storage(str(tmp_path)))
    assert open(csv_path).read() == 'd,rho,trials,successes,rate\n'
    assert open(svg_path).read().startswith('<?xml')


def test_emit_single_cell(tmp_path):
    grid = PhaseGrid(2, 3)
    grid.record(6, 0.05, True)
    csv_path, svg_path = emit(grid, 'out/one', Storage(str(tmp_path)))
    assert open(csv_path).read().splitlines()[1] == '6,0.050,1,1,1.0000'
    assert '<svg' in open(svg_path).read()


def test_emit_csv_is_reproducible(tmp_path):
    grid = synthetic_grid(d_values=(20, 30))
    fit_alpha(grid)
    first, _ = emit(grid, 'a', Storage(str(tmp_path)))
    second, _ = emit(synthetic_grid(d_values=(20, 30)), 'b', Storage(str(tmp_path)))
    assert open(first).read() == open(second).read()


def test_refit_from_csv(tmp_path):
    storage = Storage(str(tmp_path))
    grid = synthetic_grid()
    emit(grid, 'pt', storage)
    loaded = load_grid('pt.csv', 2, 3, storage=storage)
    assert loaded.cells == grid.cells
    assert fit_alpha(loaded) == pytest.approx(fit_alpha(grid))
    storage.object_put('bad.csv', 'a,b\n1,2\n')
    with pytest.raises(ValueError):
        load_grid('bad.csv', 2, 3, storage=storage)


@pytest.mark.slow
@pytest.mark.parametrize('num_dirs, expected', [(3, 0.5560), (6, 1.0104)])
def test_desk_phase_transition(num_dirs, expected):
    plan = ExperimentPlan.preset(f'desk-2d-{num_dirs}dirs')
    grid = run_plan(plan, workers=4)
    alpha = fit_alpha(grid)
    assert alpha == pytest.approx(expected, rel=0.3)
    assert monotone_violations(grid) == []
    for d in plan.d_values:
        threshold = alpha * theory_rho(2, d, num_dirs, False)
        rho, rate, _ = grid.series(d)
        assert np.all(rate[rho <= threshold / 2] >= 0.9)
        assert np.all(rate[rho >= 2 * threshold] <= 0.1)


@pytest.mark.slow
def test_known_cosupport_dominates_and_perturbation_is_neutral():
    base = dict(dim=2, d_values=[24, 32], num_dirs=3, trials_per_cell=30,
                rho_values=[round(0.02 * i, 3) for i in range(1, 16)])
    unknown = run_plan(ExperimentPlan(**base), workers=4)
    known = run_plan(ExperimentPlan(**base, cosupport_known=True), workers=4)
    perturbed = run_plan(ExperimentPlan(**base, perturbed=True), workers=4)
    for key, cell in unknown.cells.items():
        noise = 2 * np.sqrt(0.25 / cell.trials)
        assert known.cells[key].rate >= cell.rate - noise
        assert abs(perturbed.cells[key].rate - cell.rate) <= 2 * noise
