import json

import numpy as np
import pytest

from gyver.ualk.cli import ExperimentConfig, load_config, resolve_config, run
from gyver.ualk.cli.config import FORMAT_VERSION, RESOLVED_NAME
from gyver.ualk.cli.main import EXIT_ERROR, EXIT_OK, main
from gyver.ualk.cli.pipelines import METRICS_NAME
from gyver.ualk.exceptions import ConfigError
from gyver.ualk.io import read_json, read_matrix, write_csv

SMALL_GEN = {'per_class': 20, 'wild_per_class': 30, 'test_per_class': 10}


def _write_config(path, **values):
    path.write_text(json.dumps(values), encoding='utf-8')
    return path


def test_resolve_config_fills_defaults():
    cfg = resolve_config({'pipeline': 'sal', 'seed': 3})

    assert cfg.seed == 3
    assert cfg.quantile == 0.95
    assert cfg.train_config().hidden_dims == (64, 64)
    assert cfg.sal_config().binary.beta == 1.0
    assert cfg.sal_config().erm.epochs == 20
    assert cfg.sal_config().erm.label_smoothing == 0.5
    assert cfg.halo_config(k=3).k == 3
    assert cfg.siren_config().beta == 1.5


def test_overrides_win_and_none_is_ignored():
    cfg = resolve_config({'pipeline': 'gen', 'seed': 1, 'out': 'a'}, {'seed': 9, 'out': None})

    assert cfg.seed == 9
    assert cfg.out == 'a'


@pytest.mark.parametrize(
    'raw, key',
    [
        ({'pipeline': 'gen', 'seed': 1, 'bogus': 2}, 'bogus'),
        ({'pipeline': 'gen'}, 'seed'),
        ({'seed': 1}, 'pipeline'),
        ({'pipeline': 'gen', 'seed': '1'}, 'seed'),
        ({'pipeline': 'gen', 'seed': 1, 'epochs': True}, 'epochs'),
        ({'pipeline': 'gen', 'seed': 1, 'weighted': 1}, 'weighted'),
    ],
)
def test_resolve_config_names_the_offending_key(raw, key):
    with pytest.raises(ConfigError) as info:
        resolve_config(raw)

    assert info.value.key == key
    assert repr(key) in str(info.value)


def test_resolve_config_accepts_integers_for_floats():
    assert resolve_config({'pipeline': 'halo', 'seed': 0, 'pi': 1}).pi == 1


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError):
        resolve_config({'pipeline': 'train', 'seed': 0})
    with pytest.raises(ConfigError):
        resolve_config({'pipeline': 'gen', 'seed': 0, 'dataset': 'cifar'})


def test_load_config_reads_json(tmp_path):
    path = _write_config(tmp_path / 'cfg.json', pipeline='eval', seed=2, tpr=0.9)

    cfg = load_config(path, {'seed': 5})

    assert isinstance(cfg, ExperimentConfig)
    assert (cfg.pipeline, cfg.seed, cfg.tpr) == ('eval', 5, 0.9)


def test_gen_pipeline_writes_the_dataset(tmp_path):
    out = tmp_path / 'gen'
    path = _write_config(tmp_path / 'cfg.json', pipeline='gen', seed=4, **SMALL_GEN)

    assert main(['run', str(path), '--out', str(out)]) == EXIT_OK

    assert read_matrix(out / 'train_points.ualk').shape == (60, 2)
    assert read_matrix(out / 'wild_points.ualk').shape == (1_090, 2)
    metrics = read_json(out / METRICS_NAME)
    assert metrics['rows'] == {'train': 60, 'wild': 1_090, 'test_ood': 1_000}
    assert metrics['pipeline'] == 'gen'
    assert metrics['seed'] == 4
    resolved = read_json(out / RESOLVED_NAME)
    assert resolved['format_version'] == FORMAT_VERSION
    assert resolved['per_class'] == 20


def test_runs_are_deterministic(tmp_path):
    base = {'pipeline': 'gen', 'seed': 7, **SMALL_GEN}
    first = run(resolve_config({**base, 'out': str(tmp_path / 'a')}))
    second = run(resolve_config({**base, 'out': str(tmp_path / 'b')}))

    first.pop('wall_time')
    second.pop('wall_time')
    assert first == second
    for name in ('train_points.ualk', 'wild_points.ualk', 'wild_is_ood.ualk'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


SMALL_TRAIN = {'epochs': 3, 'hidden_width': 8, 'batch_size': 32, 'start_fraction': 0.34}
SMALL_RUNS = {
    'vos': {
        **SMALL_TRAIN,
        'per_class': 30,
        'test_per_class': 10,
        'pool_size': 200,
        'queue_capacity': 20,
    },
    'siren': {**SMALL_TRAIN, 'per_class': 30, 'test_per_class': 10, 'projection_dim': 4},
    'sal': {**SMALL_TRAIN, **SMALL_GEN, 'erm_epochs': 3, 'binary_epochs': 3, 'binary_width': 8},
    'halo': {**SMALL_TRAIN, 'n': 1_200, 'dim': 8, 'halo_epochs': 3, 'binary_width': 8},
}


def _outputs(directory) -> dict:
    files = {path.name: path.read_bytes() for path in directory.iterdir()}
    metrics = json.loads(files.pop(METRICS_NAME))
    metrics.pop('wall_time')
    resolved = json.loads(files.pop(RESOLVED_NAME))
    resolved.pop('out')
    return {**files, METRICS_NAME: metrics, RESOLVED_NAME: resolved}


@pytest.mark.parametrize('pipeline', sorted(SMALL_RUNS))
def test_pipelines_do_not_depend_on_the_thread_count(pipeline, tmp_path, monkeypatch):
    base = {'pipeline': pipeline, 'seed': 5, **SMALL_RUNS[pipeline]}
    outputs = []
    for threads in ('1', '4'):
        monkeypatch.setenv('UAL_THREADS', threads)
        out = tmp_path / threads
        run(resolve_config({**base, 'out': str(out)}))
        outputs.append(_outputs(out))

    assert outputs[0].keys() == outputs[1].keys()
    assert len(outputs[0]) > 2
    for name, content in outputs[0].items():
        assert content == outputs[1][name], name


def test_subcommand_sets_the_pipeline(tmp_path):
    out = tmp_path / 'sub'
    config = _write_config(
        tmp_path / 'cfg.json', pipeline='sal', seed=0, dataset='vmf', per_class=5
    )

    assert main(['gen', '--config', str(config), '--out', str(out)]) == EXIT_OK
    assert read_json(out / METRICS_NAME)['rows'] == {'train': 15}


def test_eval_pipeline(tmp_path):
    write_csv(tmp_path / 'id.csv', np.array([[0.9], [0.8], [0.7]]), ['score'])
    write_csv(tmp_path / 'ood.csv', np.array([[0.1], [0.2]]), ['score'])
    cfg = resolve_config(
        {
            'pipeline': 'eval',
            'seed': 0,
            'out': str(tmp_path / 'eval'),
            'id_scores': str(tmp_path / 'id.csv'),
            'ood_scores': str(tmp_path / 'ood.csv'),
        }
    )

    metrics = run(cfg)

    assert metrics['auroc'] == 1.0
    assert metrics['fpr95'] == 0.0
    assert read_json(tmp_path / 'eval' / METRICS_NAME)['auroc'] == 1.0


def test_eval_without_scores_names_the_key(tmp_path, capsys):
    assert main(['eval', '--seed', '0', '--out', str(tmp_path)]) == EXIT_ERROR

    assert "'id_scores'" in capsys.readouterr().err


def test_halo_pipeline_on_a_small_mixture(tmp_path):
    cfg = resolve_config(
        {
            'pipeline': 'halo',
            'seed': 1,
            'out': str(tmp_path),
            'n': 400,
            'dim': 8,
            'halo_epochs': 3,
            'tune_k': True,
            'max_k': 2,
        }
    )

    metrics = run(cfg)

    assert metrics['k'] in (1, 2)
    assert {'auroc', 'fpr95', 'membership_auroc', 'unweighted_auroc'} <= set(metrics)
    assert read_matrix(tmp_path / 'membership_scores.ualk').shape == (320, 1)


def test_convert_command_round_trips(tmp_path):
    source = tmp_path / 'm.csv'
    write_csv(source, np.array([[1.5, -2.0], [0.25, 3.0]]), ['a', 'b'])

    assert main(['convert', str(source), str(tmp_path / 'm.ualk')]) == EXIT_OK
    assert main(['convert', str(tmp_path / 'm.ualk'), str(tmp_path / 'n.csv')]) == EXIT_OK

    assert (tmp_path / 'n.csv').read_text(encoding='utf-8') == '1.5,-2.0\n0.25,3.0\n'


def test_config_errors_exit_with_the_key(tmp_path, capsys):
    config = _write_config(tmp_path / 'cfg.json', pipeline='gen', seed=0, colour='red')

    assert main(['run', str(config)]) == EXIT_ERROR

    err = capsys.readouterr().err
    assert "unknown key 'colour'" in err
    assert err.startswith('gyver.ualk.cli.config:')


def test_missing_files_exit_with_an_error(tmp_path, capsys):
    assert main(['run', str(tmp_path / 'absent.json')]) == EXIT_ERROR

    assert capsys.readouterr().err.startswith('ualk:')
