"""Shared fixtures for the acceptance suite.

Trained networks and experiment tables are session-scoped: the zoo
experiments train their own networks internally, while single-network
experiments share one checkpoint.  Acceptance criteria register their
outcome so the terminal summary prints one pass/fail line per criterion.
"""

import time

import pytest

_ACCEPTANCE_RESULTS: list[tuple[str, str, bool, str]] = []


def record_criterion(cid: str, name: str, ok: bool, detail: str = "") -> None:
    _ACCEPTANCE_RESULTS.append((cid, name, bool(ok), detail))
    assert ok, f"acceptance criterion {cid} ({name}) failed: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    order = {}
    for cid, name, ok, detail in _ACCEPTANCE_RESULTS:
        # keep the last record per criterion id, in first-seen order
        order[cid] = (name, ok, detail)
    for cid, (name, ok, detail) in order.items():
        status = "PASS" if ok else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"[{status}] criterion {cid}: {name}{suffix}")


# ---------------------------------------------------------------------------
# acceptance-scale setup (desk-scale stand-in for the reference protocol)
# ---------------------------------------------------------------------------

ACCEPT_BASE = dict(
    dataset="synth:blobs,n=2420,dims=64,classes=10,seed=5",
    train_samples=2000,
    eval_samples=200,
    epochs=50,
    batch=128,
    train_seed=7,
    net_seed=1,
    adversarial=True,
    adv_steps=20,
    adv_step_size=0.03,
    adv_epsilon=0.3,
    attack_steps=500,
    attack_step_size=0.02,
    zoo_width=200,
)

MLP_ZOO = ("mlp-1", "mlp-2", "mlp-3", "mlp-4", "mlp-5")
FULL_ZOO = MLP_ZOO + ("resmlp-3", "resmlp-4", "resmlp-5")


def accept_config(kind, **extra):
    from gatelab.experiments import ExperimentConfig

    params = dict(ACCEPT_BASE)
    params.update(extra)
    return ExperimentConfig(kind=kind, **params)


@pytest.fixture(scope="session")
def acceptance_out(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def mlp2_checkpoint(acceptance_out):
    """One adversarially trained 2-layer network shared by the single-net
    experiments."""
    from gatelab.experiments import run_training

    out = str(acceptance_out / "mlp2")
    cfg = accept_config("growth", out=out, net_layers=(64, 200, 10))
    paths = run_training(cfg)
    return paths["checkpoint"]


@pytest.fixture(scope="session")
def kappa_table(acceptance_out):
    from gatelab.experiments import run_experiment

    cfg = accept_config("kappa-table", out=str(acceptance_out / "kappa"), zoo=FULL_ZOO)
    start = time.time()
    tables = run_experiment(cfg)
    elapsed = time.time() - start
    return tables["kappa-table"], elapsed


@pytest.fixture(scope="session")
def growth_table(acceptance_out, mlp2_checkpoint):
    from gatelab.experiments import run_experiment

    cfg = accept_config(
        "growth", out=str(acceptance_out / "growth"), net_checkpoint=mlp2_checkpoint
    )
    return run_experiment(cfg)["growth"]


@pytest.fixture(scope="session")
def effect_fit_table(acceptance_out):
    from gatelab.experiments import run_experiment

    cfg = accept_config("effect-fit", out=str(acceptance_out / "effects"), zoo=FULL_ZOO)
    return run_experiment(cfg)["effect-fit"]


@pytest.fixture(scope="session")
def impact_table(acceptance_out, mlp2_checkpoint):
    from gatelab.experiments import run_experiment

    cfg = accept_config(
        "impact-vs-a",
        out=str(acceptance_out / "impact"),
        net_checkpoint=mlp2_checkpoint,
        eval_samples=220,
    )
    return run_experiment(cfg)["impact-vs-a"]


@pytest.fixture(scope="session")
def cosine_table(acceptance_out, mlp2_checkpoint):
    from gatelab.experiments import run_experiment

    cfg = accept_config(
        "cosine-vs-a",
        out=str(acceptance_out / "cosine"),
        net_checkpoint=mlp2_checkpoint,
        eval_samples=220,
        effects_bins=10,
    )
    return run_experiment(cfg)["cosine-vs-a"]


@pytest.fixture(scope="session")
def oscillation_tables(acceptance_out, mlp2_checkpoint):
    from gatelab.experiments import run_experiment

    cfg = accept_config(
        "oscillation", out=str(acceptance_out / "osc"), net_checkpoint=mlp2_checkpoint
    )
    normal = run_experiment(cfg)["oscillation"]
    degenerate_cfg = accept_config("oscillation", net_checkpoint=mlp2_checkpoint, osc_steps=0)
    degenerate = run_experiment(degenerate_cfg)["oscillation"]
    return normal, degenerate


@pytest.fixture(scope="session")
def binary_mlp2():
    """Adversarially trained two-class network with a single sigmoid output,
    for the scalar-head curvature factorization check."""
    import numpy as np

    from gatelab.attack import AttackConfig, GradientRule
    from gatelab.data import synth_dataset
    from gatelab.network import NetworkSpec, ReluNetwork
    from gatelab.training import TrainConfig, sgd_train

    ds = synth_dataset("two-class-gaussian", n=1200, dims=64, classes=2, seed=9)
    train = ds.subset(np.arange(1000))
    eval_ds = ds.subset(np.arange(1000, 1200))
    net = ReluNetwork.initialize(NetworkSpec((64, 200, 1), seed=3))
    pgd = AttackConfig(
        step_size=0.03, steps=20, rule=GradientRule.SIGN_LINF, epsilon=0.3, norm_p=float("inf"), project=True
    )
    trained, _ = sgd_train(net, train, TrainConfig(learning_rate=0.01, epochs=50, batch_size=128, seed=4, adversary=pgd))
    return trained, eval_ds
