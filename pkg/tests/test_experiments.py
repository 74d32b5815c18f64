import numpy as np
import pytest

from liftedstruct.experiments import (
    ComparisonSetup,
    away_component,
    baselines_for,
    failure_cases,
    run_comparison,
    select_learning_rates,
    step_displacement,
    summarize,
)


@pytest.mark.parametrize("case", failure_cases(), ids=lambda c: c.name)
def test_failure_geometry(case):
    assert away_component(case, step_displacement(case, "lifted-smooth")) > 0
    for method in baselines_for(case):
        assert away_component(case, step_displacement(case, method)) < 0


def test_failure_cases_are_well_formed():
    for case in failure_cases():
        assert case.points.shape == (case.labels.size, 2)
        assert len(set(case.labels[list(case.cluster)].tolist())) == 1
        assert case.labels[case.query] not in case.labels[list(case.cluster)]
        for i, j, y in case.pairing:
            assert y == int(case.labels[i] == case.labels[j])


def test_step_scales_with_learning_rate():
    case = failure_cases()[0]
    a = step_displacement(case, "lifted-smooth", 0.1)
    b = step_displacement(case, "lifted-smooth", 0.2)
    np.testing.assert_allclose(b, 2 * a)


def test_tiny_comparison_runs():
    setup = ComparisonSetup(num_classes=6, per_class=6, dim=4, max_iterations=5, batch_size=12, seeds=(0, 1))
    out = run_comparison(setup)
    assert len(out) == 6
    table = summarize(out)
    assert set(table) == {"contrastive", "triplet", "lifted-smooth"}
    assert all(0 <= row["recall_at_1"] <= 1 for row in table.values())


def test_learning_rate_selection(monkeypatch):
    import liftedstruct.experiments as ex

    scores = {0.01: 0.5, 0.03: 0.7, 0.1: 0.7}
    monkeypatch.setattr(ex, "validation_recall", lambda setup, loss, lr: scores[lr])
    chosen = select_learning_rates(ComparisonSetup(lr_grid=(0.1, 0.01, 0.03), losses=("triplet",)))
    assert chosen == {"triplet": 0.03}  # tie between 0.03 and 0.1 goes to the smaller rate


def test_tiny_selection_uses_grid():
    setup = ComparisonSetup(num_classes=10, per_class=6, dim=4, max_iterations=3, batch_size=12, seeds=(0,),
                            losses=("contrastive",), lr_grid=(0.001, 0.002))
    assert select_learning_rates(setup)["contrastive"] in (0.001, 0.002)
