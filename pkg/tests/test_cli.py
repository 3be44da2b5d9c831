import json
import math

import numpy as np
import pytest

from boltzmap.__main__ import (EXIT_DATA, EXIT_OK, EXIT_USAGE, MANIFEST_NAME,
                               THREADS_ENV, dispatch)
from boltzmap.model import (InteractionModel, RbmModel, load_interactions,
                            load_model, save_interactions, save_model)
from boltzmap.potentials import ActivationKind


def three_body_model() -> RbmModel:
    signs = np.array([[1, 1, -1, -1],
                      [1, -1, 1, -1],
                      [1, -1, -1, 1]], dtype=np.float64)
    return RbmModel(ActivationKind.EXPONENTIAL, np.zeros(3), np.zeros(4),
                    np.log1p(0.5 * signs))


@pytest.fixture
def model_path(tmp_path) -> str:
    path = str(tmp_path / 'three.rbm')
    save_model(path, three_body_model())
    return path


def body(text: str) -> list:
    lines = text.splitlines()
    assert lines[0].startswith('# boltzmap manifest ')
    return lines[1:]


class TestUsage:

    @pytest.mark.parametrize('argv', [
        [],
        ['frobnicate'],
        ['map'],
        ['map', '--model', 'm.rbm', '--colour'],
        ['cumulants', '--kind', 'tanh'],
        ['sample', '--model', 'm.rbm', '--n-samples', '0'],
    ])
    def test_usage_errors(self, argv: list, capsys) -> None:
        assert dispatch(argv) == EXIT_USAGE
        assert 'usage' in capsys.readouterr().err

    def test_version(self, capsys) -> None:
        assert dispatch(['--version']) == EXIT_OK
        assert capsys.readouterr().out.startswith('boltzmap ')

    def test_missing_file(self, tmp_path) -> None:
        missing = str(tmp_path / 'missing.rbm')

        assert dispatch(['map', '--model', missing]) == EXIT_DATA

    def test_bad_model(self, tmp_path, capsys) -> None:
        path = tmp_path / 'bad.rbm'
        path.write_text('boltzmap-rbm v1\n2 1 step\n0\n')

        assert dispatch(['map', '--model', str(path), '--threads', '1']) == \
            EXIT_DATA
        assert 'line' in capsys.readouterr().err

    def test_bad_thread_env(self, model_path, monkeypatch) -> None:
        monkeypatch.setenv(THREADS_ENV, 'many')

        assert dispatch(['map', '--model', model_path]) == EXIT_USAGE


class TestCumulants:

    def test_step(self, capsys) -> None:
        code = dispatch(['cumulants', '--kind', 'step', '--orders', '1', '2',
                         '--threads', '1'])

        assert code == EXIT_OK
        assert body(capsys.readouterr().out) == [
            'kind,bias,order,cumulant', 'step,0,1,0.5', 'step,0,2,0.25']


class TestMap:

    def test_three_body(self, model_path, tmp_path) -> None:
        out = str(tmp_path / 'terms.csv')

        code = dispatch(['map', '--model', model_path, '--max-order', '3',
                         '--out', out, '--threads', '2'])

        assert code == EXIT_OK
        terms = load_interactions(out)
        assert len(terms) == 7
        assert terms[(0, 1, 2)] == pytest.approx(0.5, abs=1e-12)
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert manifest['seed'] == 0
        assert manifest['config']['max_order'] == 3
        assert model_path in manifest['input_digests']
        with open(out) as f:
            assert f.readline() == (
                f'# boltzmap manifest {manifest["digest"]}\n')

    def test_digest_is_stable(self, model_path, capsys) -> None:
        argv = ['map', '--model', model_path, '--threads', '1']

        dispatch(argv)
        first = capsys.readouterr().out
        dispatch(argv)
        second = capsys.readouterr().out

        assert first == second

    def test_budget(self, model_path, capsys) -> None:
        code = dispatch(['map', '--model', model_path, '--max-order', '3',
                         '--budget', '10', '--threads', '1'])

        assert code == EXIT_USAGE
        assert 'budget' in capsys.readouterr().err

    def test_max_order_too_large(self, model_path) -> None:
        assert dispatch(['map', '--model', model_path, '--max-order', '4',
                         '--threads', '1']) == EXIT_USAGE

    def test_indices(self, model_path, tmp_path, capsys) -> None:
        indices = tmp_path / 'pool.txt'
        indices.write_text('2, 0\n')

        code = dispatch(['map', '--model', model_path, '--indices',
                         str(indices), '--threads', '1'])

        assert code == EXIT_OK
        lines = body(capsys.readouterr().out)
        assert [line.split(',')[1] for line in lines[1:]] == ['0', '2',
                                                              '0;2']

    def test_small_w(self, model_path, capsys) -> None:
        assert dispatch(['map', '--model', model_path, '--small-w',
                         '--threads', '1']) == EXIT_OK
        assert len(body(capsys.readouterr().out)) == 1 + 3 + 3


class TestEmbed:

    def test_round_trip(self, tmp_path) -> None:
        '''
        GIVEN a symmetric coupling matrix in a CSV file
        WHEN it is embedded with boltzmap embed and expanded with
            boltzmap map
        THEN the pairwise terms reproduce the couplings within 1e-9
        '''

        rng = np.random.default_rng(1)
        j = np.triu(rng.normal(size=(5, 5)), 1)
        j = j + j.T
        couplings = tmp_path / 'J.csv'
        np.savetxt(str(couplings), j, delimiter=',', fmt='%.17g')
        model = str(tmp_path / 'm.rbm')
        terms = str(tmp_path / 'terms.csv')

        assert dispatch(['embed', '--couplings', str(couplings), '--out',
                         model]) == EXIT_OK
        assert load_model(model).n_hidden == 4
        assert dispatch(['map', '--model', model, '--out', terms,
                         '--threads', '1']) == EXIT_OK

        result = load_interactions(terms)
        for (a, b), value in result.order(2).items():
            assert value == pytest.approx(j[a, b], abs=1e-9)

    def test_asymmetric(self, tmp_path) -> None:
        couplings = tmp_path / 'J.csv'
        couplings.write_text('0,1\n2,0\n')

        assert dispatch(['embed', '--couplings', str(couplings), '--out',
                         str(tmp_path / 'm.rbm')]) == EXIT_DATA


class TestSampling:

    def test_sample(self, model_path, capsys) -> None:
        code = dispatch(['sample', '--model', model_path, '--n-samples', '5',
                         '--trials', '2', '--burn-in', '3', '--seed', '4',
                         '--threads', '1'])

        assert code == EXIT_OK
        rows = body(capsys.readouterr().out)
        assert len(rows) == 10
        assert all(set(row.split(',')) <= {'0', '1'} for row in rows)

    def test_validate(self, model_path, tmp_path, capsys) -> None:
        table = str(tmp_path / 'table.csv')

        code = dispatch(['validate', '--model', model_path, '--samples',
                         '200', '--trials', '3', '--burn-in', '10',
                         '--seed', '7', '--table', table, '--threads', '1'])

        assert code == EXIT_OK
        lines = body(capsys.readouterr().out)
        assert lines[0] == ('mask,state,probability,mean_frequency,'
                            'std_frequency')
        assert lines[8].startswith('7,111,')
        assert lines[9].startswith('# total_variation ')
        assert lines[10].startswith('# chi_square ')
        frequencies = [float(line.split(',')[3]) for line in lines[1:9]]
        assert sum(frequencies) == pytest.approx(1.0)
        with open(table) as f:
            assert len(f.read().splitlines()) == 1 + 1 + 8

    def test_manifest_next_to_table(self, model_path, tmp_path) -> None:
        '''
        GIVEN a validate run whose only file output is --table
        WHEN it finishes
        THEN the run manifest is written next to the table and its digest
            heads the table
        '''

        directory = tmp_path / 'tables'
        directory.mkdir()
        table = str(directory / 'table.csv')

        code = dispatch(['validate', '--model', model_path, '--samples',
                         '50', '--trials', '2', '--burn-in', '5',
                         '--table', table, '--threads', '1'])

        assert code == EXIT_OK
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
        with open(table) as f:
            assert f.readline() == (
                f'# boltzmap manifest {manifest["digest"]}\n')


class TestEval:

    def test_exact_and_ais(self, model_path, tmp_path, capsys) -> None:
        data = tmp_path / 'data.csv'
        data.write_text('1,1,1\n0,0,0\n1,0,1\n')

        code = dispatch(['eval', '--model', model_path, '--data', str(data),
                         '--pl', '--ais', '--exact', '--runs', '10',
                         '--temps', '50', '--threads', '1'])

        assert code == EXIT_OK
        rows = {line.split(',')[0]: line.split(',')[1:]
                for line in body(capsys.readouterr().out)}
        exact = float(rows['log_partition_exact'][0])
        assert exact == pytest.approx(math.log(7 + math.exp(0.5)),
                                      abs=1e-12)
        assert float(rows['log_partition_ais'][0]) == pytest.approx(
            exact, abs=0.3)
        assert 'pseudo_likelihood' in rows
        assert 'mean_log_likelihood_exact' in rows

    @pytest.mark.parametrize('option', [['--runs', '1'], ['--temps', '1']])
    def test_ais_too_small(self, model_path, option: list, capsys) -> None:
        code = dispatch(['eval', '--model', model_path, '--ais',
                         '--threads', '1'] + option)

        assert code == EXIT_USAGE
        assert 'at least 2' in capsys.readouterr().err

    def test_base_data(self, model_path, tmp_path) -> None:
        data = tmp_path / 'test.csv'
        data.write_text('1,1,1\n')
        base = tmp_path / 'train.csv'
        base.write_text('1,0,1\n0,1,0\n1,1,0\n')
        out = str(tmp_path / 'eval.csv')

        code = dispatch(['eval', '--model', model_path, '--data', str(data),
                         '--base-data', str(base), '--ais', '--runs', '10',
                         '--temps', '50', '--out', out, '--threads', '1'])

        assert code == EXIT_OK
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert str(base) in manifest['input_digests']
        with open(out) as f:
            rows = {line.split(',')[0]: line.split(',')[1:]
                    for line in body(f.read())}
        assert float(rows['log_partition_ais'][0]) == pytest.approx(
            math.log(7 + math.exp(0.5)), abs=0.3)

    def test_base_data_mismatch(self, model_path, tmp_path) -> None:
        base = tmp_path / 'train.csv'
        base.write_text('1,0\n')

        assert dispatch(['eval', '--model', model_path, '--ais',
                         '--base-data', str(base), '--runs', '10',
                         '--temps', '50', '--threads', '1']) == EXIT_DATA

    def test_no_metric(self, model_path) -> None:
        assert dispatch(['eval', '--model', model_path]) == EXIT_USAGE

    def test_feature_mismatch(self, model_path, tmp_path) -> None:
        data = tmp_path / 'data.csv'
        data.write_text('1,1\n')

        assert dispatch(['eval', '--model', model_path, '--data', str(data),
                         '--pl', '--threads', '1']) == EXIT_DATA


class TestStats:

    def test_compare(self, tmp_path, capsys) -> None:
        a = str(tmp_path / 'a.csv')
        b = str(tmp_path / 'b.csv')
        save_interactions(a, InteractionModel(3, {(0, 1): 1.0, (1, 2): 2.0}))
        save_interactions(b, InteractionModel(3, {(0, 1): 0.5, (1, 2): 1.0}))

        code = dispatch(['stats', '--a', a, '--b', b, '--threads', '1'])

        assert code == EXIT_OK
        lines = body(capsys.readouterr().out)
        assert lines[0] == 'order,slope,nrmse,rms_a,rms_b,n_terms'
        assert lines[1].startswith('2,2,1,')

    def test_profile(self, model_path, capsys) -> None:
        code = dispatch(['stats', '--model', model_path, '--order', '2', '3',
                         '--threads', '1'])

        assert code == EXIT_OK
        lines = body(capsys.readouterr().out)
        assert lines[0] == 'order,rms,log_rms,n_subsets'
        assert lines[-1].startswith('# rms_weight ')

    def test_needs_inputs(self) -> None:
        assert dispatch(['stats', '--threads', '1']) == EXIT_USAGE


class TestTrain:

    def test_train(self, tmp_path) -> None:
        data = tmp_path / 'data.csv'
        rows = (np.random.default_rng(2).random((30, 4)) < 0.5).astype(int)
        data.write_text(''.join(','.join(map(str, row)) + '\n'
                                for row in rows.tolist()))
        config = tmp_path / 'train.cfg'
        config.write_text('minibatch = 10\n')
        out = str(tmp_path / 'm.rbm')
        log = str(tmp_path / 'log.csv')

        code = dispatch(['train', '--data', str(data), '--activation', 'relu',
                         '--hidden', '3', '--epochs', '2', '--config',
                         str(config), '--out', out, '--log', log])

        assert code == EXIT_OK
        model = load_model(out)
        assert (model.n_visible, model.n_hidden) == (4, 3)
        assert model.activation is ActivationKind.RELU
        with open(log) as f:
            assert len(f.read().splitlines()) == 1 + 1 + 6
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert manifest['config']['train_config']['minibatch'] == 10

    def test_manifest_next_to_log(self, tmp_path) -> None:
        data = tmp_path / 'data.csv'
        data.write_text('0,1\n1,0\n1,1\n')
        models = tmp_path / 'models'
        logs = tmp_path / 'logs'
        models.mkdir()
        logs.mkdir()

        code = dispatch(['train', '--data', str(data), '--activation',
                         'step', '--hidden', '1', '--epochs', '1',
                         '--out', str(models / 'm.rbm'),
                         '--log', str(logs / 'log.csv')])

        assert code == EXIT_OK
        assert (models / MANIFEST_NAME).exists()
        assert (logs / MANIFEST_NAME).exists()

    def test_bad_config(self, tmp_path) -> None:
        data = tmp_path / 'data.csv'
        data.write_text('0,1\n')
        config = tmp_path / 'train.cfg'
        config.write_text('momentum = 0.9\n')

        assert dispatch(['train', '--data', str(data), '--activation',
                         'step', '--hidden', '1', '--config', str(config),
                         '--out', str(tmp_path / 'm.rbm')]) == EXIT_USAGE
