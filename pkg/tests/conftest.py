import numpy as np
import pytest

from meanet import arch, data, nn, trainer


def small_plan(seed=0, epochs=25, num_hard=4, **kw):
    cfg = arch.MEAConfig.from_stack("B", 16, (8, 16), 8, num_hard, adaptive=(16,), extension=(32, 32))
    sgd = lambda lr: nn.SgdConfig(initial_lr=lr, milestones=(15, 20), seed=seed)
    return trainer.TrainingPlan(
        model=cfg, main_sgd=sgd(0.05), edge_sgd=sgd(0.02), cloud_sgd=sgd(0.05),
        main_epochs=epochs, edge_epochs=epochs, cloud_epochs=epochs,
        cloud_widths=(32, 32, 32), seed=seed, **kw,
    )


def small_dataset(seed=0, samples=150):
    ds = data.gen_synthetic(data.SyntheticSpec(seed=seed, samples_per_class=samples))
    return data.normalize(ds)[0]


@pytest.fixture(scope="session")
def pipeline():
    ds = small_dataset(0)
    fit, test = data.split_train_val(ds, 0.3, 101)
    result = trainer.run_pipeline(fit, small_plan(0))
    return result, test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
