"""Experiment drivers: train networks, run attacks, emit deterministic CSVs.

Six experiment kinds map onto the lab's verification questions:

* ``growth``       per-step perturbation/gradient norms along attacks
* ``kappa-table``  analytic-vs-real perturbation error across a network zoo
                   and four baselines (gate freezing x loss head)
* ``effect-fit``   measured vs predicted training-effect projections
* ``impact-vs-a``  per-sample attack amplification against effect sizes
* ``cosine-vs-a``  alignment of per-sample gradient shifts with their mean,
                   bucketed by amplification
* ``oscillation``  gradient response to fixed-length weight steps, clean
                   versus attacked inputs

Every run is a pure function of its configuration: seeds fix the dataset,
the initialization, the shuffling, and the evaluation split, and CSV cells
are printed with 17 significant digits, so identical configurations produce
byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np

from .analytic import (
    DegenerateDecomposition,
    fit_report,
    perturbation_limit,
    perturbation_m_step,
    spectral_decomposition,
)
from .attack import AttackConfig, GradientRule, batch_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .configfile import ConfigError
from .data import Dataset, parse_dataset_spec
from .effects import EffectsError, cosine_report, measure_effect, oscillation_probe
from .heads import BinaryReduced, Quadratic, SigmoidBCE, SoftmaxCE, reduce_to_binary
from .network import NetworkSpec, ReluNetwork, forward
from .training import TrainConfig, head_batch_for, sgd_train, sigmoid_labels

EXPERIMENT_KINDS = ("growth", "kappa-table", "effect-fit", "impact-vs-a", "cosine-vs-a", "oscillation")

KAPPA_BASELINES = ("frozen-quadratic", "free-quadratic", "frozen-ce", "free-ce")

CSV_HEADERS = {
    "growth": ["sample_id", "t", "t_over_m_success", "delta_norm", "grad_norm", "rule"],
    "kappa-table": ["network", "baseline", "kappa", "n_samples"],
    "effect-fit": ["network", "kappa", "kappa_prime"],
    "impact-vs-a": ["sample_id", "H_z", "Hz_gx2", "A_hat", "abs_phi_star", "delta_gw_norm"],
    "cosine-vs-a": ["bin", "a_hat_mid", "mean_cosine", "n"],
    "oscillation": ["sample_id", "delta_ori", "delta_adv"],
    "history": ["epoch", "mean_loss", "clean_accuracy", "robust_accuracy"],
    "trajectory": ["sample_id", "t", "delta_norm", "grad_norm", "h_z", "g_tilde_norm"],
}


class ExperimentError(ValueError):
    """Invalid experiment configuration or missing prerequisite."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


@dataclass
class CsvTable:
    """Rectangular text table; floats carry 17 significant digits."""

    header: list[str]
    rows: list[list[str]] = field(default_factory=list)

    def append(self, *values) -> None:
        row = [_fmt(v) for v in values]
        if len(row) != len(self.header):
            raise ExperimentError(f"row width {len(row)} != header width {len(self.header)}")
        self.rows.append(row)

    def to_text(self) -> str:
        lines = [",".join(self.header)]
        lines.extend(",".join(row) for row in self.rows)
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())

    def column(self, name: str) -> list[str]:
        i = self.header.index(name)
        return [row[i] for row in self.rows]


DEFAULT_ZOO = ("mlp-1", "mlp-2", "mlp-3", "mlp-4", "mlp-5", "resmlp-3", "resmlp-4", "resmlp-5")


@dataclass
class ExperimentConfig:
    """Typed configuration shared by all experiment kinds and the CLI.

    Defaults mirror the lab's reference protocol: SGD at 0.01 for 50
    epochs with batches of 128; 500 raw verification steps of size 0.02
    (200 for the norm-rescaled rule, 20 for the sign rule); sign-rule
    robust training with 20 projected steps; weight-probe length 0.001.
    """

    kind: str = "kappa-table"
    seed: int = 0
    out: str | None = None
    dataset: str = "synth:blobs,n=2200,dims=64,classes=10,seed=5"
    train_samples: int = 2000
    eval_samples: int = 200

    net_layers: tuple[int, ...] | None = None
    net_skips: tuple[bool, ...] | None = None
    net_seed: int = 1
    net_checkpoint: str | None = None

    lr: float = 0.01
    epochs: int = 50
    batch: int = 128
    train_seed: int = 7
    adversarial: bool = True
    adv_steps: int = 20
    adv_step_size: float = 0.2
    adv_epsilon: float = 2.0
    adv_rule: str = "linf"

    attack_steps: int = 500
    attack_step_size: float = 0.02
    attack_rule: str = "raw"
    attack_freeze: bool = False
    attack_project: bool = False
    attack_epsilon: float | None = None
    attack_norm: str = "inf"
    attack_record_every: int = 1
    attack_samples: int = 8  # `attack` subcommand only

    analytic_regime: str = "mstep"
    trim_frozen: float = 1.0
    trim_free: float = 0.9

    effects_layer: int = 1
    effects_eta: float = 0.01
    effects_steps: int = 100
    effects_step_size: float = 0.02
    effects_strength: float | None = None
    effects_bins: int = 10

    probe_length: float = 0.001
    probe_layer: int = 1
    osc_steps: int = 20
    osc_step_size: float = 0.2

    zoo: tuple[str, ...] = DEFAULT_ZOO
    zoo_width: int = 200

    growth_raw_steps: int = 500
    growth_l2_steps: int = 200
    growth_linf_steps: int = 20


# config-file key -> (field name, parser)
def _parse_bool(text: str) -> bool:
    if text in ("1", "true", "yes"):
        return True
    if text in ("0", "false", "no"):
        return False
    raise ValueError(f"expected a boolean flag, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _parse_bools(text: str) -> tuple[bool, ...]:
    return tuple(_parse_bool(v.strip()) for v in text.split(",") if v.strip() != "")


def _parse_names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip() != "")


CONFIG_KEYS = {
    "kind": ("kind", str),
    "seed": ("seed", int),
    "out": ("out", str),
    "dataset": ("dataset", str),
    "train.samples": ("train_samples", int),
    "eval.samples": ("eval_samples", int),
    "net.layers": ("net_layers", _parse_ints),
    "net.skips": ("net_skips", _parse_bools),
    "net.seed": ("net_seed", int),
    "net.checkpoint": ("net_checkpoint", str),
    "train.lr": ("lr", float),
    "train.epochs": ("epochs", int),
    "train.batch": ("batch", int),
    "train.seed": ("train_seed", int),
    "train.adversarial": ("adversarial", _parse_bool),
    "train.adv_steps": ("adv_steps", int),
    "train.adv_step_size": ("adv_step_size", float),
    "train.adv_epsilon": ("adv_epsilon", float),
    "train.adv_rule": ("adv_rule", str),
    "attack.steps": ("attack_steps", int),
    "attack.step_size": ("attack_step_size", float),
    "attack.rule": ("attack_rule", str),
    "attack.freeze_gates": ("attack_freeze", _parse_bool),
    "attack.project": ("attack_project", _parse_bool),
    "attack.epsilon": ("attack_epsilon", float),
    "attack.norm": ("attack_norm", str),
    "attack.record_every": ("attack_record_every", int),
    "attack.samples": ("attack_samples", int),
    "analytic.regime": ("analytic_regime", str),
    "analytic.trim_frozen": ("trim_frozen", float),
    "analytic.trim_free": ("trim_free", float),
    "effects.layer": ("effects_layer", int),
    "effects.eta": ("effects_eta", float),
    "effects.steps": ("effects_steps", int),
    "effects.step_size": ("effects_step_size", float),
    "effects.strength": ("effects_strength", float),
    "effects.bins": ("effects_bins", int),
    "probe.length": ("probe_length", float),
    "probe.layer": ("probe_layer", int),
    "osc.steps": ("osc_steps", int),
    "osc.step_size": ("osc_step_size", float),
    "zoo.networks": ("zoo", _parse_names),
    "zoo.width": ("zoo_width", int),
    "growth.raw_steps": ("growth_raw_steps", int),
    "growth.l2_steps": ("growth_l2_steps", int),
    "growth.linf_steps": ("growth_linf_steps", int),
}


def config_from_mapping(mapping: dict[str, str], overrides: dict | None = None) -> ExperimentConfig:
    """Build a typed config from parsed ``key = value`` pairs.

    Unknown keys are errors; ``overrides`` (already typed) win over the file.
    """
    values = {}
    for key, raw in mapping.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        name, caster = CONFIG_KEYS[key]
        try:
            values[name] = caster(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**values)
    valid_fields = {f.name for f in fields(ExperimentConfig)}
    assert set(values) <= valid_fields
    return cfg


_RULES = {
    "raw": GradientRule.RAW,
    "l2": GradientRule.L2_NORMALIZED,
    "linf": GradientRule.SIGN_LINF,
}


def _rule(name: str) -> GradientRule:
    if name not in _RULES:
        raise ExperimentError(f"unknown gradient rule {name!r} (expected raw, l2, or linf)")
    return _RULES[name]


def _norm_p(name: str) -> float:
    if name in ("inf", "linf"):
        return np.inf
    if name == "2":
        return 2.0
    raise ExperimentError(f"unknown projection norm {name!r} (expected 2 or inf)")


def split_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Leading samples train, trailing samples evaluate; no overlap."""
    ds = parse_dataset_spec(cfg.dataset)
    if cfg.train_samples + cfg.eval_samples > len(ds):
        raise ExperimentError(
            f"dataset holds {len(ds)} samples, needs train {cfg.train_samples} + eval {cfg.eval_samples}"
        )
    train = ds.subset(np.arange(cfg.train_samples))
    eval_ds = ds.subset(np.arange(len(ds) - cfg.eval_samples, len(ds)))
    return train, eval_ds


def zoo_architecture(name: str, input_dim: int, output_dim: int, width: int) -> tuple[tuple[int, ...], tuple[bool, ...]]:
    """``mlp-k``: k linear layers (k-1 hidden blocks of ``width``);
    ``resmlp-k``: same with identity skips on the equal-width blocks."""
    try:
        family, depth_text = name.split("-")
        depth = int(depth_text)
    except ValueError:
        raise ExperimentError(f"bad zoo network name {name!r} (expected mlp-<k> or resmlp-<k>)") from None
    if family not in ("mlp", "resmlp") or depth < 1:
        raise ExperimentError(f"bad zoo network name {name!r}")
    dims = (input_dim,) + (width,) * (depth - 1) + (output_dim,)
    if family == "mlp":
        skips = (False,) * (depth - 1)
    else:
        if depth < 3:
            raise ExperimentError(f"{name}: residual variants need at least 3 layers")
        skips = (False,) + (True,) * (depth - 2)
    return dims, skips


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    adversary = None
    if cfg.adversarial and cfg.adv_steps > 0:
        adversary = AttackConfig(
            step_size=cfg.adv_step_size,
            steps=cfg.adv_steps,
            rule=_rule(cfg.adv_rule),
            epsilon=cfg.adv_epsilon,
            norm_p=_norm_p(cfg.attack_norm),
            project=True,
        )
    return TrainConfig(
        learning_rate=cfg.lr,
        epochs=cfg.epochs,
        batch_size=cfg.batch,
        seed=cfg.train_seed,
        adversary=adversary,
    )


def prepare_network(cfg: ExperimentConfig, train_ds: Dataset, name: str | None = None):
    """Load a checkpoint when given; otherwise build and train per config.

    ``name`` selects a zoo architecture; otherwise ``net.layers`` is used
    (default: one hidden block of ``zoo.width``).
    """
    if cfg.net_checkpoint is not None and name is None:
        return load_checkpoint(cfg.net_checkpoint), None
    output_dim = 1 if train_ds.num_classes == 2 and cfg.net_layers is None and name is None else train_ds.num_classes
    if name is not None:
        dims, skips = zoo_architecture(name, train_ds.dims, train_ds.num_classes, cfg.zoo_width)
    elif cfg.net_layers is not None:
        dims, skips = tuple(cfg.net_layers), cfg.net_skips or ()
    else:
        dims, skips = (train_ds.dims, cfg.zoo_width, output_dim), ()
    net = ReluNetwork.initialize(NetworkSpec(dims, skips, seed=cfg.net_seed))
    trained, history = sgd_train(net, train_ds, _train_config(cfg))
    return trained, history


def _scalar_head_for(net: ReluNetwork, label: int, z_clean: np.ndarray):
    """Native sigmoid head for one-output nets, top-two reduction otherwise."""
    if net.output_dim == 1:
        return SigmoidBCE(label=int(sigmoid_labels(np.array([label]))[0]))
    _, _, reduced = reduce_to_binary(z_clean)
    return reduced


def _attack_heads(net: ReluNetwork, labels: np.ndarray, loss: str):
    """Per-sample heads for a kappa baseline's attacking loss."""
    if loss == "quadratic":
        if net.output_dim == 1:
            targets = sigmoid_labels(labels)[:, None]
        else:
            targets = np.eye(net.output_dim)[labels]
        return [Quadratic(t) for t in targets]
    if net.output_dim == 1:
        return [SigmoidBCE(label=int(y)) for y in sigmoid_labels(labels)]
    return [SoftmaxCE(true_class=int(c)) for c in labels]


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _run_growth(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    net, _ = prepare_network(cfg, train_ds)
    table = CsvTable(CSV_HEADERS["growth"])
    rule_steps = {
        "raw": cfg.growth_raw_steps,
        "l2": cfg.growth_l2_steps,
        "linf": cfg.growth_linf_steps,
    }
    heads = head_batch_for(eval_ds.labels, net)
    for rule_name, steps in rule_steps.items():
        attack = AttackConfig(step_size=cfg.attack_step_size, steps=steps, rule=_rule(rule_name))
        res = batch_attack(net, heads, eval_ds.inputs, attack, with_stats=True)
        for i in range(len(eval_ds)):
            m_success = int(res.success_step[i])
            if m_success < 0:
                continue  # never-successful samples have no progress axis
            for t in range(1, steps + 1):
                table.append(
                    i, t, t / m_success, res.delta_norms[i, t - 1], res.grad_norms[i, t - 1], rule_name
                )
    return {"growth": table}


def _analytic_delta(cfg: ExperimentConfig, dec, steps: int, step_size: float):
    if cfg.analytic_regime == "mstep":
        return perturbation_m_step(dec, step_size, steps).delta
    if cfg.analytic_regime == "infinite":
        return perturbation_limit(dec, step_size * steps).delta
    raise ExperimentError(f"unknown analytic regime {cfg.analytic_regime!r} (expected mstep or infinite)")


def _run_kappa_table(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    table = CsvTable(CSV_HEADERS["kappa-table"])
    for name in cfg.zoo:
        net, _ = prepare_network(cfg, train_ds, name=name)
        for baseline in KAPPA_BASELINES:
            frozen = baseline.startswith("frozen")
            loss = "quadratic" if baseline.endswith("quadratic") else "ce"
            heads = _attack_heads(net, eval_ds.labels, loss)
            attack = AttackConfig(
                step_size=cfg.attack_step_size,
                steps=cfg.attack_steps,
                rule=_rule(cfg.attack_rule),
                freeze_gates=frozen,
            )
            res = batch_attack(net, heads, eval_ds.inputs, attack, with_stats=False)
            real, analytic = [], []
            for i in range(len(eval_ds)):
                try:
                    dec = spectral_decomposition(net, heads[i], eval_ds.inputs[i])
                except DegenerateDecomposition:
                    continue
                real.append(res.deltas[i])
                analytic.append(_analytic_delta(cfg, dec, cfg.attack_steps, cfg.attack_step_size))
            trim = cfg.trim_frozen if frozen else cfg.trim_free
            rep = fit_report(real, analytic, trim=trim)
            table.append(name, baseline, rep.kappa, rep.retained)
    return {"kappa-table": table}


def _effect_rows(cfg: ExperimentConfig, net: ReluNetwork, eval_ds: Dataset):
    """Shared per-sample effect pipeline: returns per-sample dicts."""
    heads = []
    for i in range(len(eval_ds)):
        z_clean = forward(net, eval_ds.inputs[i]).z
        heads.append(_scalar_head_for(net, int(eval_ds.labels[i]), z_clean))
    attack = AttackConfig(
        step_size=cfg.effects_step_size, steps=cfg.effects_steps, rule=GradientRule.RAW
    )
    res = batch_attack(net, heads, eval_ds.inputs, attack, with_stats=True)
    a_hats = res.a_hat(cfg.effects_step_size)
    strength_free = cfg.effects_step_size * cfg.effects_steps
    rows = []
    for i in range(len(eval_ds)):
        x = eval_ds.inputs[i]
        head = heads[i]
        try:
            measurement = measure_effect(
                net,
                head,
                x,
                res.deltas[i],
                layer_j=cfg.effects_layer,
                eta=cfg.effects_eta,
                strength=strength_free,
                variant="additional",
                gate_mode="free",
                a_hat=float(a_hats[i]),
            )
        except (DegenerateDecomposition, EffectsError):
            continue  # flat margin or saturated curvature: no effect to measure
        rows.append({"index": i, "head": head, "free": measurement})
    return rows


def _run_effect_fit(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    table = CsvTable(CSV_HEADERS["effect-fit"])
    strength = (
        cfg.effects_strength
        if cfg.effects_strength is not None
        else cfg.effects_step_size * cfg.effects_steps
    )
    for name in cfg.zoo:
        net, _ = prepare_network(cfg, train_ds, name=name)
        free_errors, frozen_errors = [], []
        rows = _effect_rows(cfg, net, eval_ds)
        for row in rows:
            x = eval_ds.inputs[row["index"]]
            head = row["head"]
            free = row["free"]
            if free.phi_star != 0.0:
                free_errors.append(abs(free.phi_star - free.phi_hat) / abs(free.phi_star))
            try:
                dec = spectral_decomposition(net, head, x)
                delta_hat = perturbation_limit(dec, strength).delta
            except DegenerateDecomposition:
                continue
            frozen = measure_effect(
                net,
                head,
                x,
                delta_hat,
                layer_j=cfg.effects_layer,
                eta=cfg.effects_eta,
                strength=strength,
                variant="additional",
                gate_mode="frozen",
            )
            if frozen.phi_star != 0.0:
                frozen_errors.append(abs(frozen.phi_star - frozen.phi_hat) / abs(frozen.phi_star))
        kappa = _trimmed_mean(free_errors, cfg.trim_free)
        kappa_prime = _trimmed_mean(frozen_errors, cfg.trim_frozen)
        table.append(name, kappa, kappa_prime)
    return {"effect-fit": table}


def _trimmed_mean(errors, trim: float) -> float:
    if not errors:
        raise ExperimentError("no usable samples for a fit metric")
    errors = np.sort(np.asarray(errors))
    k = max(1, int(round(trim * errors.size)))
    return float(np.mean(errors[:k]))


def _run_impact(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    net, _ = prepare_network(cfg, train_ds)
    table = CsvTable(CSV_HEADERS["impact-vs-a"])
    for row in _effect_rows(cfg, net, eval_ds):
        m = row["free"]
        table.append(
            row["index"],
            m.h_z,
            m.h_z * m.g_tilde_x_norm**2,
            m.a_hat,
            abs(m.phi_star),
            m.delta_g_w_norm,
        )
    return {"impact-vs-a": table}


def _run_cosine(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    net, _ = prepare_network(cfg, train_ds)
    heads = []
    for i in range(len(eval_ds)):
        z_clean = forward(net, eval_ds.inputs[i]).z
        heads.append(_scalar_head_for(net, int(eval_ds.labels[i]), z_clean))
    attack = AttackConfig(step_size=cfg.effects_step_size, steps=cfg.effects_steps, rule=GradientRule.RAW)
    res = batch_attack(net, heads, eval_ds.inputs, attack, with_stats=True)
    a_hats = res.a_hat(cfg.effects_step_size)
    from .effects import weight_gradient_shift

    samples = []
    for i in range(len(eval_ds)):
        pair = weight_gradient_shift(
            net, heads[i], eval_ds.inputs[i], res.deltas[i], cfg.effects_layer, cfg.effects_eta, gate_mode="free"
        )
        samples.append((pair.delta_g_w, float(a_hats[i])))
    rep = cosine_report(samples, bins=cfg.effects_bins)
    table = CsvTable(CSV_HEADERS["cosine-vs-a"])
    for b in range(rep.bin_mean_cosine.size):
        table.append(b, rep.bin_mid_a_hat[b], rep.bin_mean_cosine[b], rep.bin_counts[b])
    return {"cosine-vs-a": table}


def _run_oscillation(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    train_ds, eval_ds = split_dataset(cfg)
    net, _ = prepare_network(cfg, train_ds)
    heads = head_batch_for(eval_ds.labels, net)
    attack = AttackConfig(step_size=cfg.osc_step_size, steps=cfg.osc_steps, rule=GradientRule.L2_NORMALIZED)
    res = batch_attack(net, heads, eval_ds.inputs, attack, with_stats=False)
    table = CsvTable(CSV_HEADERS["oscillation"])
    head_objs = (
        [SigmoidBCE(label=int(y)) for y in sigmoid_labels(eval_ds.labels)]
        if net.output_dim == 1
        else [SoftmaxCE(true_class=int(c)) for c in eval_ds.labels]
    )
    for i in range(len(eval_ds)):
        probe = oscillation_probe(
            net, head_objs[i], eval_ds.inputs[i], res.deltas[i], cfg.probe_length, cfg.probe_layer
        )
        if probe.skipped:
            continue
        table.append(i, probe.delta_ori, probe.delta_adv)
    return {"oscillation": table}


_RUNNERS = {
    "growth": _run_growth,
    "kappa-table": _run_kappa_table,
    "effect-fit": _run_effect_fit,
    "impact-vs-a": _run_impact,
    "cosine-vs-a": _run_cosine,
    "oscillation": _run_oscillation,
}


def run_experiment(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    """Run one experiment kind; writes ``<kind>.csv`` under ``cfg.out``."""
    if cfg.kind not in _RUNNERS:
        raise ExperimentError(f"unknown experiment kind {cfg.kind!r} (expected one of {EXPERIMENT_KINDS})")
    try:
        tables = _RUNNERS[cfg.kind](cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        raise ExperimentError(f"experiment {cfg.kind!r} failed: {exc}") from exc
    if cfg.out is not None:
        os.makedirs(cfg.out, exist_ok=True)
        for name, table in tables.items():
            table.write(os.path.join(cfg.out, f"{name}.csv"))
    return tables


# ---------------------------------------------------------------------------
# train / attack entry points (CLI subcommands beyond the experiment kinds)
# ---------------------------------------------------------------------------

def run_training(cfg: ExperimentConfig) -> dict[str, str]:
    """Train per config; writes checkpoint.txt and history.csv under out."""
    if cfg.out is None:
        raise ExperimentError("training needs an output directory")
    train_ds, _ = split_dataset(cfg)
    net, history = prepare_network(cfg, train_ds)
    os.makedirs(cfg.out, exist_ok=True)
    ckpt_path = os.path.join(cfg.out, "checkpoint.txt")
    save_checkpoint(net, ckpt_path)
    table = CsvTable(CSV_HEADERS["history"])
    if history is not None:
        for e in range(history.mean_loss.size):
            robust = history.robust_accuracy[e] if history.robust_accuracy is not None else float("nan")
            table.append(e, history.mean_loss[e], history.clean_accuracy[e], robust)
    hist_path = os.path.join(cfg.out, "history.csv")
    table.write(hist_path)
    return {"checkpoint": ckpt_path, "history": hist_path}


def run_attack_dump(cfg: ExperimentConfig) -> dict[str, CsvTable]:
    """Attack the first eval samples, dumping per-step trajectory scalars."""
    train_ds, eval_ds = split_dataset(cfg)
    net, _ = prepare_network(cfg, train_ds)
    count = min(cfg.attack_samples, len(eval_ds))
    subset = eval_ds.subset(np.arange(count))
    heads = head_batch_for(subset.labels, net)
    attack = AttackConfig(
        step_size=cfg.attack_step_size,
        steps=cfg.attack_steps,
        rule=_rule(cfg.attack_rule),
        freeze_gates=cfg.attack_freeze,
        epsilon=cfg.attack_epsilon,
        norm_p=_norm_p(cfg.attack_norm) if cfg.attack_project else None,
        project=cfg.attack_project,
    )
    res = batch_attack(net, heads, subset.inputs, attack, with_stats=True)
    table = CsvTable(CSV_HEADERS["trajectory"])
    for i in range(count):
        for t in range(1, cfg.attack_steps + 1):
            table.append(
                i,
                t,
                res.delta_norms[i, t - 1],
                res.grad_norms[i, t - 1],
                res.h_z[i, t - 1],
                res.g_tilde_norms[i, t - 1],
            )
    tables = {"trajectory": table}
    if cfg.out is not None:
        os.makedirs(cfg.out, exist_ok=True)
        table.write(os.path.join(cfg.out, "trajectory.csv"))
    return tables
