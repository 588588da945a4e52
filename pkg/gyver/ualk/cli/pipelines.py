"""Pipeline runners behind the `ualk` subcommands.

Each runner takes a resolved `ExperimentConfig`, writes its matrices, model
containers and plot-ready score tables under `cfg.out`, and returns the
metric record that `run` stores as `metrics.json`."""

import logging
import os
import time
import typing
from collections.abc import Callable

import numpy as np

from gyver.ualk.cli.config import ExperimentConfig, write_resolved
from gyver.ualk.datagen import (
    VMF_TOY_CENTROIDS,
    LabeledSet,
    WildSet,
    make_sal_toy,
    make_subspace_mixture,
    make_vmf_classes,
    make_vos_toy,
)
from gyver.ualk.exceptions import ArgumentError, ConfigError, FormatError
from gyver.ualk.io import load_matrix, write_csv, write_json, write_matrix
from gyver.ualk.metrics import (
    ScoreSets,
    auroc,
    contamination,
    fpr_at_tpr,
    reveal_membership,
    score_sets,
)
from gyver.ualk.model import (
    energy_score,
    save_binary,
    save_classifier,
    save_vos,
    train_erm,
    train_vos,
)
from gyver.ualk.numerics import RngState
from gyver.ualk.subspace import membership_scores, train_halo, tune_k
from gyver.ualk.vmf import knn_scores, save_mixture, save_siren, train_siren, vmf_log_scores
from gyver.ualk.wildfilter import err_rates, save_filter_result, train_sal

logger = logging.getLogger(__name__)

METRICS_NAME = 'metrics.json'

Metrics = dict[str, typing.Any]


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _detection(s: ScoreSets, tpr: float, prefix: str = '') -> Metrics:
    return {f'{prefix}fpr95': fpr_at_tpr(s, tpr), f'{prefix}auroc': auroc(s)}


def _write_scores(cfg: ExperimentConfig, name: str, s: ScoreSets) -> None:
    """Two-column table (score, is_ood) for plotting score histograms."""
    scores = np.concatenate((s.id_scores, s.ood_scores))
    flags = np.concatenate((np.zeros(s.id_scores.size), np.ones(s.ood_scores.size)))
    write_csv(_path(cfg, name), np.column_stack((scores, flags)), ['score', 'is_ood'])


def _write_labeled(cfg: ExperimentConfig, prefix: str, data: LabeledSet) -> None:
    write_matrix(_path(cfg, f'{prefix}_points.ualk'), data.points)
    write_matrix(_path(cfg, f'{prefix}_labels.ualk'), data.labels[:, None].astype(np.float64))


def _write_wild(cfg: ExperimentConfig, prefix: str, wild: WildSet) -> None:
    write_matrix(_path(cfg, f'{prefix}_points.ualk'), wild.points)
    flags = reveal_membership(wild)
    write_matrix(_path(cfg, f'{prefix}_is_ood.ualk'), flags[:, None].astype(np.float64))


def run_gen(cfg: ExperimentConfig) -> Metrics:
    """Writes one toy dataset as binary matrices."""
    rng = RngState(cfg.seed).spawn('gen')
    if cfg.dataset == 'sal':
        toy = make_sal_toy(
            cfg.scenario,
            rng,
            per_class=cfg.per_class,
            wild_per_class=cfg.wild_per_class,
            test_per_class=cfg.test_per_class,
        )
        _write_labeled(cfg, 'train', toy.train)
        _write_wild(cfg, 'wild', toy.wild)
        _write_labeled(cfg, 'test_id', toy.test_id)
        write_matrix(_path(cfg, 'test_ood_points.ualk'), toy.test_ood)
        rows = {'train': len(toy.train), 'wild': len(toy.wild), 'test_ood': toy.test_ood.shape[0]}
    elif cfg.dataset == 'vos':
        vos = make_vos_toy(
            rng,
            per_class=cfg.per_class,
            test_per_class=cfg.test_per_class,
            ring_radius=cfg.ring_radius,
        )
        _write_labeled(cfg, 'train', vos.train)
        _write_labeled(cfg, 'test', vos.test)
        write_matrix(_path(cfg, 'ring.ualk'), vos.ring)
        rows = {'train': len(vos.train), 'test': len(vos.test), 'ring': vos.ring.shape[0]}
    elif cfg.dataset == 'vmf':
        data = make_vmf_classes(VMF_TOY_CENTROIDS, cfg.kappa, cfg.per_class, rng)
        _write_labeled(cfg, 'train', data)
        rows = {'train': len(data)}
    else:
        wild = make_subspace_mixture(cfg.n, cfg.dim, cfg.pi, cfg.shift, rng)
        _write_wild(cfg, 'embeddings', wild)
        rows = {'embeddings': len(wild)}
    return {'dataset': cfg.dataset, 'rows': rows}


def run_vos(cfg: ExperimentConfig) -> Metrics:
    """Joint training with virtual outliers on the 2-D mixture toy; the ID
    test set is scored against a ring of far-away points."""
    toy = make_vos_toy(
        RngState(cfg.seed).spawn('data'),
        per_class=cfg.per_class,
        test_per_class=cfg.test_per_class,
        ring_radius=cfg.ring_radius,
    )
    train_cfg = cfg.train_config()
    model = train_vos(
        toy.train, train_cfg, cfg.synthesis_config(), queue_capacity=cfg.queue_capacity
    )
    save_vos(_path(cfg, 'vos.ualk'), model)
    s = ScoreSets(model.id_probability(toy.test.points), model.id_probability(toy.ring))
    _write_scores(cfg, 'scores.csv', s)
    metrics = _detection(s, cfg.tpr)
    if cfg.erm_baseline:
        baseline = train_erm(toy.train, train_cfg)
        plain = ScoreSets(
            energy_score(baseline, toy.test.points), energy_score(baseline, toy.ring)
        )
        _write_scores(cfg, 'scores_erm_energy.csv', plain)
        metrics.update(_detection(plain, cfg.tpr, 'erm_energy_'))
    return metrics


def run_siren(cfg: ExperimentConfig) -> Metrics:
    """Representation shaping on the 2-D mixture toy, scored with both the
    parametric vMF score and the k-NN score."""
    toy = make_vos_toy(
        RngState(cfg.seed).spawn('data'),
        per_class=cfg.per_class,
        test_per_class=cfg.test_per_class,
        ring_radius=cfg.ring_radius,
    )
    model, mixture = train_siren(toy.train, cfg.train_config(), cfg.siren_config())
    save_siren(_path(cfg, 'siren.ualk'), model)
    save_mixture(_path(cfg, 'mixture.ualk'), mixture)
    test, ring = model.embed(toy.test.points), model.embed(toy.ring)
    parametric = ScoreSets(vmf_log_scores(test, mixture), vmf_log_scores(ring, mixture))
    bank = model.embed(toy.train.points)
    k = min(cfg.knn_k, bank.shape[0])
    knn = ScoreSets(knn_scores(test, bank, k), knn_scores(ring, bank, k))
    _write_scores(cfg, 'scores_vmf.csv', parametric)
    _write_scores(cfg, 'scores_knn.csv', knn)
    return {
        **_detection(parametric, cfg.tpr),
        **_detection(knn, cfg.tpr, 'knn_'),
        'kappas': mixture.kappas.tolist(),
    }


def run_sal(cfg: ExperimentConfig) -> Metrics:
    """Wild filtering and outlier-head training on the three-Gaussian toy."""
    toy = make_sal_toy(
        cfg.scenario,
        RngState(cfg.seed).spawn('data'),
        per_class=cfg.per_class,
        wild_per_class=cfg.wild_per_class,
        test_per_class=cfg.test_per_class,
    )
    clf, result, head = train_sal(toy.train, toy.wild, cfg.sal_config())
    save_classifier(_path(cfg, 'classifier.ualk'), clf)
    save_binary(_path(cfg, 'binary.ualk'), head)
    save_filter_result(_path(cfg, 'filter.ualk'), result)
    flags = reveal_membership(toy.wild)
    write_csv(
        _path(cfg, 'filter_scores.csv'),
        np.column_stack((result.scores, result.sample_thresholds, flags)),
        ['tau', 'threshold', 'is_ood'],
    )
    err_in, err_out = err_rates(result, toy.wild)
    filtering = score_sets(-result.scores, toy.wild)
    s = ScoreSets(head.probability(toy.test_id.points), head.probability(toy.test_ood))
    _write_scores(cfg, 'scores.csv', s)
    return {
        **_detection(s, cfg.tpr),
        'err_in': err_in,
        'err_out': err_out,
        'candidates': int(result.candidate_indices.size),
        'contamination': contamination(result.candidate_indices, toy.wild),
        'filter_auroc': auroc(filtering),
    }


def _halo_inputs(cfg: ExperimentConfig) -> tuple[np.ndarray, typing.Optional[np.ndarray]]:
    if not cfg.embeddings:
        wild = make_subspace_mixture(
            cfg.n, cfg.dim, cfg.pi, cfg.shift, RngState(cfg.seed).spawn('data')
        )
        return wild.points, reveal_membership(wild)
    embeddings = load_matrix(cfg.embeddings)
    if not cfg.flags:
        return embeddings, None
    flags = load_matrix(cfg.flags).reshape(-1) != 0
    if flags.size != embeddings.shape[0]:
        raise FormatError(
            f'{flags.size} flags given for {embeddings.shape[0]} embeddings', cfg.flags
        )
    return embeddings, flags


def run_halo(cfg: ExperimentConfig) -> Metrics:
    """Subspace membership scoring and the truthfulness head.

    Metrics need hallucination flags, which synthetic mixtures carry and
    external embeddings may supply through `flags`. With `tune_k` the first
    `validation_fraction` of the rows, with their flags, pick k and the rest
    is scored."""
    embeddings, flags = _halo_inputs(cfg)
    k = cfg.k
    if cfg.tune_k:
        if flags is None:
            raise ConfigError('tune_k needs hallucination flags', 'flags')
        cut = max(1, int(cfg.validation_fraction * embeddings.shape[0]))
        k = tune_k(
            embeddings[cut:],
            embeddings[:cut],
            flags[:cut],
            range(1, cfg.max_k + 1),
            weighted=cfg.weighted,
            normalize=cfg.normalize,
        )
        embeddings, flags = embeddings[cut:], flags[cut:]
    model, zeta, detector = train_halo(embeddings, cfg.halo_config(k))
    write_matrix(_path(cfg, 'membership_scores.ualk'), zeta[:, None])
    save_binary(_path(cfg, 'truthfulness.ualk'), detector.head)
    metrics: Metrics = {'k': k, 'singular_values': model.singular_values.tolist()}
    if flags is None:
        return metrics
    if flags.all() or not flags.any():
        raise ArgumentError('flags must mark both truthful and hallucinated rows')
    membership = ScoreSets(-zeta[~flags], -zeta[flags])
    unweighted = -membership_scores(model, embeddings, weighted=False)
    truthful = detector.score(embeddings)
    classifier = ScoreSets(truthful[~flags], truthful[flags])
    _write_scores(cfg, 'scores_membership.csv', membership)
    _write_scores(cfg, 'scores.csv', classifier)
    metrics.update(_detection(classifier, cfg.tpr))
    metrics.update(_detection(membership, cfg.tpr, 'membership_'))
    metrics['unweighted_auroc'] = auroc(ScoreSets(unweighted[~flags], unweighted[flags]))
    return metrics


def run_eval(cfg: ExperimentConfig) -> Metrics:
    """FPR at the configured TPR and AUROC of two score files (higher
    means in-distribution)."""
    for key in ('id_scores', 'ood_scores'):
        if not getattr(cfg, key):
            raise ConfigError(f'eval needs {key!r}', key)
    s = ScoreSets(
        load_matrix(cfg.id_scores).reshape(-1), load_matrix(cfg.ood_scores).reshape(-1)
    )
    return _detection(s, cfg.tpr)


RUNNERS: dict[str, Callable[[ExperimentConfig], Metrics]] = {
    'gen': run_gen,
    'vos': run_vos,
    'siren': run_siren,
    'sal': run_sal,
    'halo': run_halo,
    'eval': run_eval,
}


def run(cfg: ExperimentConfig) -> Metrics:
    """Runs `cfg.pipeline` and writes the resolved config and `metrics.json`
    under `cfg.out`."""
    os.makedirs(cfg.out, exist_ok=True)
    write_resolved(cfg, cfg.out)
    logger.info('running pipeline=%s seed=%d out=%s', cfg.pipeline, cfg.seed, cfg.out)
    started = time.perf_counter()
    metrics = RUNNERS[cfg.pipeline](cfg)
    metrics.update(
        pipeline=cfg.pipeline, seed=cfg.seed, wall_time=time.perf_counter() - started
    )
    write_json(_path(cfg, METRICS_NAME), metrics)
    logger.info('pipeline=%s finished in %.2fs', cfg.pipeline, metrics['wall_time'])
    return metrics
