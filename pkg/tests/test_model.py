import numpy as np
import pytest
from scipy.special import softmax

from gyver.ualk.datagen import (
    SAL_TOY_COV,
    SAL_TOY_MEANS,
    LabeledSet,
    make_gaussian_classes,
    make_vos_toy,
)
from gyver.ualk.exceptions import ArgumentError, StateError
from gyver.ualk.metrics import ScoreSets, auroc
from gyver.ualk.model import (
    BinaryHead,
    EnergyHead,
    Mlp,
    MlpClassifier,
    TrainConfig,
    VosModel,
    binary_loss,
    cross_entropy,
    detect,
    energies,
    energy,
    energy_backward,
    energy_score,
    load_binary,
    load_classifier,
    load_vos,
    logit_uncertainty_loss,
    ood_probabilities,
    ood_probability,
    per_sample_gradient,
    per_sample_gradients,
    predict,
    predict_batch,
    save_binary,
    save_classifier,
    save_vos,
    train_binary,
    train_erm,
    train_vos,
    uncertainty_loss,
)
from gyver.ualk.model.optim import Sgd, learning_rate
from gyver.ualk.numerics import RngState
from gyver.ualk.synthesis import SynthesisConfig

EPS = 1e-6


def _numeric_grad(loss, array: np.ndarray) -> np.ndarray:
    """Central differences of `loss()` over every entry of `array`, in place."""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        saved = array[index]
        array[index] = saved + EPS
        upper = loss()
        array[index] = saved - EPS
        lower = loss()
        array[index] = saved
        grad[index] = (upper - lower) / (2 * EPS)
    return grad


def _classifier(seed: int = 0, input_dim: int = 3, n_classes: int = 4) -> MlpClassifier:
    return MlpClassifier.initialize(input_dim, (5, 6), n_classes, RngState(seed))


def _toy(per_class: int = 150, seed: int = 1) -> LabeledSet:
    return make_gaussian_classes(SAL_TOY_MEANS, SAL_TOY_COV, per_class, RngState(seed))


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()

    assert cfg.hidden_dims == (64, 64)
    assert cfg.start_epoch == 40
    assert cfg.replace(epochs=9).epochs == 9
    assert TrainConfig(hidden_dims=[8]).hidden_dims == (8,)

    for bad in ({'lr': 0.0}, {'epochs': 0}, {'momentum': -0.1}, {'schedule': 'linear'}):
        with pytest.raises(ArgumentError):
            TrainConfig(**bad)
    with pytest.raises(ArgumentError):
        TrainConfig(start_fraction=1.5)
    with pytest.raises(ArgumentError):
        TrainConfig(label_smoothing=1.0)


def test_cosine_schedule_and_momentum_step():
    cfg = TrainConfig(lr=0.1, epochs=10, schedule='cosine')

    assert learning_rate(cfg, 0) == pytest.approx(0.1)
    assert learning_rate(cfg, 5) == pytest.approx(0.05)
    assert learning_rate(TrainConfig(lr=0.1), 7) == 0.1

    param = np.array([1.0, 2.0])
    optimizer = Sgd([param], [True], momentum=0.5, weight_decay=0.1)
    optimizer.step([np.array([1.0, 0.0])], lr=1.0)
    assert param.tolist() == pytest.approx([1.0 - 1.1, 2.0 - 0.2])


def test_mlp_backward_matches_finite_differences():
    rng = RngState(3)
    net = Mlp.initialize([3, 4, 2], rng)
    x = rng.normal((5, 3))
    weights = rng.normal((5, 2))

    def loss() -> float:
        return float(np.sum(net(x) * weights))

    _, acts = net.forward(x)
    grads, grad_input = net.backward(acts, weights)

    for param, grad in zip(net.parameters(), grads):
        assert np.allclose(grad, _numeric_grad(loss, param), atol=1e-6)
    assert np.allclose(grad_input, _numeric_grad(loss, x), atol=1e-6)


def test_mlp_rejects_inconsistent_layers():
    with pytest.raises(ArgumentError):
        Mlp([np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ArgumentError):
        Mlp([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ArgumentError):
        MlpClassifier(Mlp.initialize([2, 3], RngState(0)))


def test_cross_entropy_gradient():
    rng = RngState(4)
    logits = rng.normal((6, 3))
    labels = np.array([0, 1, 2, 2, 1, 0])

    loss, grad = cross_entropy(logits, labels)

    assert loss > 0
    assert np.allclose(grad, _numeric_grad(lambda: cross_entropy(logits, labels)[0], logits))


def test_smoothed_cross_entropy_targets():
    rng = RngState(7)
    logits = rng.normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])

    _, grad = cross_entropy(logits, labels, smoothing=0.3)

    assert np.allclose(
        grad, _numeric_grad(lambda: cross_entropy(logits, labels, 0.3)[0], logits)
    )
    # the optimum puts 1 - 0.3 + 0.1 on the label
    best = np.log(np.array([[0.8, 0.1, 0.1]]))
    assert np.allclose(cross_entropy(best, np.array([0]), 0.3)[1], 0.0)


def test_per_sample_gradient_is_the_final_layer_gradient():
    clf = _classifier()
    x = RngState(5).normal(3)

    def loss() -> float:
        return cross_entropy(clf.logits(x), np.array([2]))[0]

    grad = per_sample_gradient(clf, x, 2).reshape(clf.feature_dim + 1, clf.n_classes)

    assert np.allclose(grad[:-1], _numeric_grad(loss, clf.head_weight), atol=1e-7)
    assert np.allclose(grad[-1], _numeric_grad(loss, clf.head_bias), atol=1e-7)


def test_per_sample_gradients_stack_rows():
    clf = _classifier(1)
    x = RngState(6).normal((7, 3))
    labels = np.array([0, 1, 2, 3, 0, 1, 2])

    rows = per_sample_gradients(clf, x, labels)

    assert rows.shape == (7, (clf.feature_dim + 1) * clf.n_classes)
    for index in range(7):
        assert np.allclose(rows[index], per_sample_gradient(clf, x[index], labels[index]))

    with pytest.raises(ArgumentError):
        per_sample_gradient(clf, x[0], 4)
    with pytest.raises(ArgumentError):
        per_sample_gradients(clf, x, labels[:3])


def test_predict_breaks_ties_towards_the_lowest_index():
    clf = _classifier(2, n_classes=3)
    for weight in clf.net.weights:
        weight[...] = 0.0

    logits, label = predict(clf, np.ones(3))

    assert label == 0
    assert logits.tolist() == [0.0, 0.0, 0.0]
    assert predict_batch(clf, np.ones((2, 3)))[1].tolist() == [0, 0]

    with pytest.raises(ArgumentError):
        clf.logits(np.ones((1, 4)))


def test_energy_is_negative_logsumexp_with_weights():
    head = EnergyHead.initialize(3, RngState(0))
    logits = np.array([1.0, 2.0, 3.0])

    assert energy(logits, head) == pytest.approx(-np.log(np.exp(logits).sum()))

    head.log_weights[:] = np.log([1.0, 2.0, 0.5])
    expected = -np.log(np.sum([1.0, 2.0, 0.5] * np.exp(logits)))
    assert energy(logits, head) == pytest.approx(expected)

    with pytest.raises(ArgumentError):
        energy(np.ones(2), head)


def test_energy_backward_matches_finite_differences():
    head = EnergyHead.initialize(3, RngState(1))
    head.log_weights[:] = [0.1, -0.3, 0.2]
    logits = RngState(2).normal((4, 3))

    expected = _numeric_grad(lambda: float(energies(logits, head).sum()), logits)

    assert np.allclose(energy_backward(logits, head), expected)


def test_uncertainty_loss_gradients():
    head = EnergyHead.initialize(2, RngState(7))
    id_energies = np.array([-3.0, -2.5, -4.0])
    outlier_energies = np.array([-0.5, 0.2])

    def loss() -> float:
        return uncertainty_loss(id_energies, outlier_energies, head)[0]

    value, grads = uncertainty_loss(id_energies, outlier_energies, head)

    assert value > 0
    assert np.allclose(grads.id_energies, _numeric_grad(loss, id_energies), atol=1e-7)
    assert np.allclose(grads.outlier_energies, _numeric_grad(loss, outlier_energies), atol=1e-7)
    for param, grad in zip(head.phi.parameters(), grads.phi):
        assert np.allclose(grad, _numeric_grad(loss, param), atol=1e-7)

    with pytest.raises(ArgumentError):
        uncertainty_loss([], outlier_energies, head)


def test_logit_uncertainty_loss_reaches_the_class_weights():
    head = EnergyHead.initialize(3, RngState(8))
    rng = RngState(9)
    id_logits = rng.normal((4, 3)) + 2
    outlier_logits = rng.normal((3, 3))

    def loss() -> float:
        return logit_uncertainty_loss(id_logits, outlier_logits, head)[0]

    _, grads = logit_uncertainty_loss(id_logits, outlier_logits, head)

    assert np.allclose(grads.log_weights, _numeric_grad(loss, head.log_weights), atol=1e-7)
    assert np.allclose(grads.id_logits, _numeric_grad(loss, id_logits), atol=1e-7)
    assert np.allclose(grads.outlier_logits, _numeric_grad(loss, outlier_logits), atol=1e-7)


def test_binary_loss_gradients():
    positives = np.array([0.5, -1.0, 2.0])
    negatives = np.array([0.3, -0.7])

    value, d_pos, d_neg = binary_loss(positives, negatives)

    assert value > 0
    def loss() -> float:
        return binary_loss(positives, negatives)[0]

    assert np.allclose(d_pos, _numeric_grad(loss, positives))
    assert np.allclose(d_neg, _numeric_grad(loss, negatives))


def test_train_erm_fits_the_toy():
    data = _toy()
    cfg = TrainConfig(epochs=20, hidden_dims=(16, 16), batch_size=64)

    clf = train_erm(data, cfg)
    _, labels = predict_batch(clf, data.points)

    assert np.mean(labels == data.labels) > 0.95
    assert np.array_equal(train_erm(data, cfg).logits(data.points), clf.logits(data.points))


def test_label_smoothing_caps_erm_confidence():
    data = _toy()
    cfg = TrainConfig(epochs=20, hidden_dims=(16, 16), batch_size=64)

    sharp = softmax(train_erm(data, cfg).logits(data.points), axis=1).max(axis=1)
    smooth_clf = train_erm(data, cfg.replace(label_smoothing=0.5))
    smooth = softmax(smooth_clf.logits(data.points), axis=1).max(axis=1)
    _, labels = predict_batch(smooth_clf, data.points)

    assert np.mean(labels == data.labels) > 0.95
    assert np.median(smooth) < 0.8
    assert np.median(sharp) > np.median(smooth) + 0.1


def test_train_erm_needs_two_classes():
    with pytest.raises(ArgumentError):
        train_erm(LabeledSet(np.zeros((4, 2)), [0, 0, 0, 0]), TrainConfig(epochs=1))


def test_binary_head_separates_blobs():
    rng = RngState(10)
    positives = rng.normal((200, 2))
    negatives = rng.normal((200, 2)) + 6

    head = train_binary(positives, negatives, TrainConfig(epochs=15, batch_size=32))

    assert head.detect(positives).mean() > 0.95
    assert head.detect(negatives).mean() < 0.05
    assert ood_probability(head, positives[0]) == pytest.approx(head.probability(positives[:1])[0])


def test_untrained_binary_head_refuses_to_score():
    head = BinaryHead.initialize(2, RngState(0))

    with pytest.raises(StateError):
        head.logit(np.zeros((1, 2)))


def test_joint_binary_training_leaves_the_backbone_untouched():
    data = _toy(40)
    backbone = train_erm(data, TrainConfig(epochs=3, hidden_dims=(8,)))
    before = [param.copy() for param in backbone.net.parameters()]
    negatives = RngState(11).normal((40, 2)) * 0.5 + [0.0, 8.0]

    head = train_binary(
        data.points,
        negatives,
        TrainConfig(epochs=3),
        width=8,
        backbone=backbone,
        positive_labels=data.labels,
    )

    assert head.backbone is not backbone
    assert head.input_dim == 2
    for param, saved in zip(backbone.net.parameters(), before):
        assert np.array_equal(param, saved)

    with pytest.raises(ArgumentError):
        train_binary(data.points, negatives, TrainConfig(epochs=1), positive_labels=data.labels)


def test_train_vos_produces_a_trained_head():
    data = _toy(60)
    cfg = TrainConfig(epochs=6, batch_size=30, hidden_dims=(8, 8), start_fraction=0.5)
    synthesis = SynthesisConfig(t=5, pool_size=200, n_outliers=2)

    model = train_vos(data, cfg, synthesis, queue_capacity=20)
    probabilities = model.id_probability(data.points)

    assert model.head.trained
    assert np.all((probabilities >= 0) & (probabilities <= 1))
    assert np.allclose(ood_probabilities(model, data.points), probabilities)
    assert np.allclose(
        ood_probabilities((model.classifier, model.head), data.points), probabilities
    )


@pytest.mark.acceptance
def test_vos_toy_separates_the_outer_ring():
    toy = make_vos_toy(RngState(0))
    cfg = TrainConfig(beta=0.1)

    model = train_vos(toy.train, cfg, SynthesisConfig(t=1))
    baseline = train_erm(toy.train, cfg)

    vos = auroc(
        ScoreSets(model.id_probability(toy.test.points), model.id_probability(toy.ring))
    )
    plain = auroc(
        ScoreSets(energy_score(baseline, toy.test.points), energy_score(baseline, toy.ring))
    )
    assert vos >= 0.95
    assert plain < vos


def test_energy_score_without_head_is_logsumexp():
    clf = _classifier(3)
    x = RngState(12).normal((4, 3))
    logits = clf.logits(x)

    assert np.allclose(energy_score(clf, x), np.log(np.exp(logits).sum(axis=1)))


def test_detect_thresholds_probabilities():
    assert detect(np.array([0.2, 0.5, 0.9])).tolist() == [False, True, True]
    assert detect(np.array([0.2, 0.5, 0.9]), gamma=0.95).tolist() == [False, False, False]


def test_vos_model_requires_a_trained_head():
    clf = _classifier(4, n_classes=3)
    model = VosModel(clf, EnergyHead.initialize(3, RngState(0)))

    with pytest.raises(StateError):
        model.id_probability(np.zeros((1, 3)))
    with pytest.raises(ArgumentError):
        VosModel(clf, EnergyHead.initialize(2, RngState(0)))


def test_models_survive_persistence(tmp_path):
    clf = _classifier(5)
    x = RngState(13).normal((6, 3))
    save_classifier(tmp_path / 'clf.ualk', clf)
    assert np.array_equal(load_classifier(tmp_path / 'clf.ualk').logits(x), clf.logits(x))

    head = EnergyHead.initialize(4, RngState(1))
    head.log_weights[:] = [0.1, 0.2, -0.3, 0.0]
    head.trained = True
    model = VosModel(clf, head)
    save_vos(tmp_path / 'vos.ualk', model)
    restored = load_vos(tmp_path / 'vos.ualk')
    assert np.array_equal(restored.id_probability(x), model.id_probability(x))

    binary = BinaryHead.initialize(3, RngState(2), width=4, backbone=clf)
    binary.trained = True
    save_binary(tmp_path / 'binary.ualk', binary)
    assert np.array_equal(load_binary(tmp_path / 'binary.ualk').logit(x), binary.logit(x))
