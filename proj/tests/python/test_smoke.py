import numpy as np
import pytest

import pdeco


@pytest.fixture(scope="module")
def spec():
    return pdeco.instance_sampler(3, 10, 8)


def test_spec_layout(spec):
    assert spec.nodes == 80
    assert spec.source.shape == (80,)
    assert any(spec.sink)


def test_adjoint_matches_finite_differences(spec):
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.2, 0.9, spec.nodes)
    T = pdeco.solve(rho, spec)
    s = pdeco.adjoint_sensitivity(rho, T, spec)

    def J(r):
        return pdeco.objective(pdeco.solve(r, spec), r, spec)

    h = 1e-5
    for i in (0, 17, 55):
        e = np.zeros_like(rho)
        e[i] = h
        fd = (J(rho + e) - J(rho - e)) / (2 * h)
        assert fd == pytest.approx(s[i], rel=1e-5, abs=1e-9)


def test_evaluate_state_is_consistent(spec):
    rho = np.full(spec.nodes, 0.4)
    state = pdeco.evaluate_state(rho, spec)
    assert state["J"] == pytest.approx(pdeco.objective(state["T"], rho, spec))
    np.testing.assert_allclose(state["s"], pdeco.adjoint_sensitivity(rho, state["T"], spec))


def test_shape_errors_are_typed(spec):
    with pytest.raises(pdeco.DimensionError):
        pdeco.solve(np.zeros(3), spec)
    with pytest.raises(pdeco.PdecoError):
        pdeco.optimize(spec, mode="hybrid", steps=2)


def test_numerical_trajectory_descends(spec):
    records = pdeco.numerical_trajectory(spec, steps=5, step_size=0.02)
    assert len(records) == 6
    assert records[-1]["J"] < records[0]["J"]


def test_store_round_trip(tmp_path):
    final_J = pdeco.generate_store(tmp_path / "store", num_traj=2, nx=6, ny=6, steps=2, step_size=0.02, seed=1)
    trajs = pdeco.load_store(tmp_path / "store")
    assert len(trajs) == 2
    assert [t["records"][-1]["J"] for t in trajs] == final_J
    with pytest.raises(pdeco.PathError):
        pdeco.load_store(tmp_path / "missing")


def test_model_predicts_and_persists(tmp_path, spec):
    model = pdeco.Model.random(seed=4)
    rng = np.random.default_rng(1)
    design = rng.uniform(0.2, 0.8, spec.nodes)
    u = model.predict(spec, design)
    assert u.shape == (spec.nodes,)
    ref = pdeco.solve(design, spec)
    with_ref = model.predict(spec, design, ref_solution=ref, ref_design=design, sensitivity=True)
    assert np.all(np.isfinite(with_ref))

    model.save(tmp_path / "m.rno")
    back = pdeco.Model.load(tmp_path / "m.rno")
    np.testing.assert_array_equal(back.predict(spec, design), u)
    assert back.layer == "vf"


def test_hybrid_run_log(spec):
    model = pdeco.Model.random(seed=2)
    log = pdeco.optimize(spec, mode="hybrid", model=model, steps=3, step_size=0.02, seed=5)
    assert log["mode"] == "hybrid"
    assert [r["step"] for r in log["steps"]] == [0, 1, 2, 3]
    assert log["final_true_J"] is not None
    assert log["csv"].startswith("step,solver_calls,predicted_J,true_J")


def test_gradcheck_suite_passes():
    results = pdeco.gradcheck(random_graphs=3)
    assert results and all(r["passed"] for r in results)
