import numpy as np
import pytest

from gatelab.attack import AttackConfig, GradientRule
from gatelab.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from gatelab.data import synth_dataset
from gatelab.network import NetworkSpec, ReluNetwork, forward, grad_weights
from gatelab.training import (
    TrainConfig,
    TrainError,
    adversarial_train,
    evaluate,
    head_batch_for,
    sgd_train,
    sigmoid_labels,
)


def make_net(dims, seed=0):
    return ReluNetwork.initialize(NetworkSpec(tuple(dims), seed=seed))


def nets_equal(a, b):
    return all(np.array_equal(w1, w2) for w1, w2 in zip(a.weights, b.weights)) and all(
        np.array_equal(b1, b2) for b1, b2 in zip(a.biases, b.biases)
    )


def test_zero_learning_rate_keeps_parameters():
    ds = synth_dataset("blobs", n=32, dims=4, classes=2, seed=1)
    net = make_net([4, 6, 2], seed=2)
    trained, _ = sgd_train(net, ds, TrainConfig(learning_rate=0.0, epochs=3, batch_size=8, seed=0))
    assert nets_equal(net, trained)


def test_single_sample_single_step_is_gradient_step():
    ds = synth_dataset("blobs", n=2, dims=4, classes=2, seed=3).subset([0])
    net = make_net([4, 5, 2], seed=4)
    eta = 0.05
    trained, _ = sgd_train(net, ds, TrainConfig(learning_rate=eta, epochs=1, batch_size=1, seed=0))
    from gatelab.heads import SoftmaxCE

    trace = forward(net, ds.inputs[0])
    grads = grad_weights(net, trace, SoftmaxCE(true_class=int(ds.labels[0])))
    for j in range(net.num_layers):
        np.testing.assert_allclose(trained.weights[j], net.weights[j] - eta * grads[j][0], rtol=0, atol=1e-16)
        np.testing.assert_allclose(trained.biases[j], net.biases[j] - eta * grads[j][1], rtol=0, atol=1e-16)


def test_training_is_deterministic():
    ds = synth_dataset("blobs", n=64, dims=6, classes=3, seed=5)
    net = make_net([6, 10, 3], seed=6)
    cfg = TrainConfig(learning_rate=0.05, epochs=4, batch_size=16, seed=9)
    a, _ = sgd_train(net, ds, cfg)
    b, _ = sgd_train(net, ds, cfg)
    assert nets_equal(a, b)


def test_separable_blobs_reach_high_accuracy():
    ds = synth_dataset("two-class-gaussian", n=200, dims=8, classes=2, seed=7)
    net = make_net([8, 12, 2], seed=8)
    trained, hist = sgd_train(net, ds, TrainConfig(learning_rate=0.5, epochs=30, batch_size=32, seed=1))
    clean, _ = evaluate(trained, ds)
    assert clean >= 0.95
    assert hist.mean_loss.size == 30 and hist.robust_accuracy is None


def test_two_class_gaussian_linear_classifier():
    # centers three sigmas either side of the midpoint: a 1-layer sigmoid
    # classifier separates a held-out split at >= 0.99
    ds = synth_dataset("two-class-gaussian", n=800, dims=8, classes=2, seed=11)
    train, held = ds.subset(np.arange(400)), ds.subset(np.arange(400, 800))
    net = make_net([8, 1], seed=13)
    trained, _ = sgd_train(net, train, TrainConfig(learning_rate=1.0, epochs=40, batch_size=64, seed=2))
    clean, _ = evaluate(trained, held)
    assert clean >= 0.99


def test_convex_sigmoid_full_batch_loss_nonincreasing():
    ds = synth_dataset("two-class-gaussian", n=80, dims=5, classes=2, seed=20)
    net = make_net([5, 1], seed=21)
    _, hist = sgd_train(net, ds, TrainConfig(learning_rate=0.1, epochs=25, batch_size=80, seed=3))
    assert np.all(np.diff(hist.mean_loss) <= 1e-12)


def test_zero_step_adversary_reproduces_vanilla_training():
    ds = synth_dataset("blobs", n=48, dims=5, classes=2, seed=9)
    net = make_net([5, 8, 2], seed=10)
    cfg_plain = TrainConfig(learning_rate=0.1, epochs=3, batch_size=12, seed=4)
    null_adv = AttackConfig(step_size=0.1, steps=0)
    cfg_adv = TrainConfig(learning_rate=0.1, epochs=3, batch_size=12, seed=4, adversary=null_adv)
    a, _ = sgd_train(net, ds, cfg_plain)
    b, _ = adversarial_train(net, ds, cfg_adv)
    assert nets_equal(a, b)


def test_adversarial_training_improves_robustness():
    full = synth_dataset("blobs", n=360, dims=8, classes=2, seed=14)
    ds, held = full.subset(np.arange(240)), full.subset(np.arange(240, 360))
    net = make_net([8, 16, 2], seed=16)
    pgd = AttackConfig(
        step_size=0.02, steps=10, rule=GradientRule.SIGN_LINF, epsilon=0.1, norm_p=np.inf, project=True
    )
    epochs = 25
    vanilla, _ = sgd_train(net, ds, TrainConfig(learning_rate=0.3, epochs=epochs, batch_size=32, seed=5))
    robustified, hist = adversarial_train(
        net, ds, TrainConfig(learning_rate=0.3, epochs=epochs, batch_size=32, seed=5, adversary=pgd)
    )
    assert hist.robust_accuracy is not None and hist.robust_accuracy.size == epochs
    probe = AttackConfig(step_size=0.1, steps=1, rule=GradientRule.SIGN_LINF)
    _, robust_vanilla = evaluate(vanilla, held, adversary=probe)
    _, robust_hardened = evaluate(robustified, held, adversary=probe)
    assert robust_hardened > robust_vanilla


def test_evaluate_basics():
    ds = synth_dataset("blobs", n=30, dims=4, classes=2, seed=17)
    net = make_net([4, 6, 2], seed=18)
    clean, robust = evaluate(net, ds)
    assert 0.0 <= clean <= 1.0 and robust is None
    clean2, robust2 = evaluate(net, ds, adversary=AttackConfig(step_size=0.1, steps=0))
    assert clean2 == clean and robust2 == clean
    clean3, robust3 = evaluate(net, ds, adversary=AttackConfig(step_size=0.5, steps=5))
    assert robust3 <= clean3 + 1e-12


def test_constant_net_on_constant_class():
    spec = NetworkSpec((3, 2))
    net = ReluNetwork(spec, [np.zeros((3, 2))], [np.array([5.0, 0.0])])
    ds = synth_dataset("blobs", n=10, dims=3, classes=2, seed=19).subset(
        np.arange(10)
    )
    ds.labels[:] = 0
    clean, _ = evaluate(net, ds)
    assert clean == 1.0


def test_evaluate_empty_dataset_errors():
    ds = synth_dataset("blobs", n=10, dims=3, classes=2, seed=23).subset([])
    net = make_net([3, 4, 2], seed=0)
    with pytest.raises(TrainError):
        evaluate(net, ds)
    with pytest.raises(TrainError):
        sgd_train(net, ds, TrainConfig(learning_rate=0.1, epochs=1, batch_size=4, seed=0))


def test_sigmoid_label_parity():
    np.testing.assert_array_equal(sigmoid_labels(np.array([0, 1, 2, 3])), [1.0, -1.0, 1.0, -1.0])


def test_head_batch_label_range_checked():
    net = make_net([4, 6, 2], seed=0)
    with pytest.raises(TrainError):
        head_batch_for(np.array([0, 2]), net)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_fresh_and_trained(tmp_path):
    for seed in (0, 5):
        net = ReluNetwork.initialize(NetworkSpec((5, 7, 7, 2), (False, True), seed=seed))
        path = str(tmp_path / f"net{seed}.ckpt")
        save_checkpoint(net, path)
        back = load_checkpoint(path)
        assert nets_equal(net, back)
        assert back.spec == net.spec
    ds = synth_dataset("blobs", n=40, dims=5, classes=2, seed=1)
    net = make_net([5, 7, 2], seed=2)
    trained, _ = sgd_train(net, ds, TrainConfig(learning_rate=0.2, epochs=5, batch_size=8, seed=3))
    path = str(tmp_path / "trained.ckpt")
    save_checkpoint(trained, path)
    assert nets_equal(trained, load_checkpoint(path))


def test_checkpoint_corrupted_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("gatelab checkpoint v99\ndims: 2,1\nskips: \nseed: 0\nend\n")
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(str(path))


def test_checkpoint_shape_mismatch(tmp_path):
    net = make_net([3, 4, 2], seed=1)
    path = str(tmp_path / "net.ckpt")
    save_checkpoint(net, path)
    text = open(path).read().replace("layer 0 weight 3 4", "layer 0 weight 4 3")
    open(path, "w").write(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
