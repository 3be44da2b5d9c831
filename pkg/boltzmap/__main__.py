import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import platform
import re
import sys
import typing

import numpy as np
import scipy

import boltzmap
from boltzmap.errors import (BudgetExceededError, DataError, NumericalError,
                             UsageError)
from boltzmap.evaluation import (AisConfig, ais_log_partition,
                                 base_biases_from_data, comparison_stats,
                                 fit_strength_decay, interaction_strengths,
                                 mean_log_likelihood_ais, pseudo_likelihood,
                                 rms_weight)
from boltzmap.mapping import (DEFAULT_BUDGET, expand, linear_embed,
                              small_w_expand)
from boltzmap.mnist import DEFAULT_THRESHOLD, BinaryDataset, load_dataset
from boltzmap.model import (InteractionModel, format_interactions,
                            load_interactions, load_model, save_model)
from boltzmap.oracle import (compare_frequencies, enumerate_states,
                             format_table, mean_log_likelihood)
from boltzmap.potentials import ActivationKind, cumulant
from boltzmap.sampling import (DEFAULT_BURN_IN, DEFAULT_THINNING,
                               sample_trials)
from boltzmap.training import TrainConfig, format_training_log, train


logger = logging.getLogger('boltzmap')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

MANIFEST_NAME = 'boltzmap-manifest.json'
THREADS_ENV = 'BOLTZMAP_THREADS'
OUTPUT_OPTIONS = ('out', 'log', 'table')


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> typing.NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f'{self.prog}: {message}')


@dataclasses.dataclass
class RunManifest:
    """1 回の実行の記録。

    digest は時刻を除いた内容の SHA-256 で、同じ入力と設定からは同じ値に
    なります。出力 CSV の先頭行に書かれます。
    """

    command: typing.List[str]
    config: typing.Dict[str, typing.Any]
    seed: int
    versions: typing.Dict[str, str]
    input_digests: typing.Dict[str, str]
    started: str = ''
    finished: str = ''

    def digest(self) -> str:
        content = dataclasses.asdict(self)
        del content['started'], content['finished']
        text = json.dumps(content, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def write(self, directory: str) -> None:
        content = dataclasses.asdict(self)
        content['digest'] = self.digest()
        with open(os.path.join(directory, MANIFEST_NAME), 'w') as f:
            json.dump(content, f, indent=2, sort_keys=True)
            f.write('\n')


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _file_digest(path: str) -> str:
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f'expected a positive integer, '
                                         f'got {text}')
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f'expected a nonnegative integer, '
                                         f'got {text}')
    return value


def _resolve_threads(value: typing.Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise UsageError(f'{THREADS_ENV} must be an integer, '
                             f'got {env!r}') from None
        if threads < 1:
            raise UsageError(f'{THREADS_ENV} must be positive')
        return threads
    return os.cpu_count() or 1


def _read_matrix(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=',', comments='#', ndmin=2)
    except ValueError as e:
        raise DataError(f'{path}: {e}') from None


def _read_indices(path: str) -> typing.List[int]:
    with open(path) as f:
        tokens = [token for token in re.split(r'[\s,]+', f.read()) if token]
    try:
        return [int(token) for token in tokens]
    except ValueError as e:
        raise DataError(f'{path}: {e}') from None


class _Run:
    """サブコマンドの実行中の状態 (マニフェストと出力先)。"""

    def __init__(self, args: argparse.Namespace,
                 argv: typing.Sequence[str],
                 inputs: typing.Sequence[typing.Optional[str]]) -> None:
        config = {key: value for key, value in vars(args).items()
                  if key not in ('handler', 'log_level', 'threads')}
        digests = {path: _file_digest(path) for path in inputs
                   if path is not None}
        versions = {'boltzmap': boltzmap.__version__,
                    'numpy': np.__version__, 'scipy': scipy.__version__,
                    'python': platform.python_version()}
        self.manifest = RunManifest(list(argv), config, args.seed, versions,
                                    digests, started=_now())
        self.threads = _resolve_threads(args.threads)
        self._outputs = [path for path in (getattr(args, name, None)
                                           for name in OUTPUT_OPTIONS)
                         if path is not None]

    def emit(self, text: str, path: typing.Optional[str] = None) -> None:
        """CSV を書き出します。先頭にマニフェストの digest を付けます。"""
        content = f'# boltzmap manifest {self.manifest.digest()}\n' + text
        if path is None:
            sys.stdout.write(content)
        else:
            with open(path, 'w', newline='\n') as f:
                f.write(content)

    def finish(self) -> int:
        """出力ファイルのあるディレクトリにマニフェストを書きます。"""
        self.manifest.finished = _now()
        directories = {os.path.dirname(os.path.abspath(path))
                       for path in self._outputs}
        for directory in sorted(directories):
            self.manifest.write(directory)
        return EXIT_OK


def _load_data(path: str, threshold: int,
               limit: typing.Optional[int] = None) -> BinaryDataset:
    dataset = load_dataset(path, threshold, limit)
    if dataset.n_items == 0:
        raise DataError(f'{path}: no data')
    return dataset


def _train(args: argparse.Namespace, run: _Run) -> int:
    try:
        config = (TrainConfig.from_file(args.config) if args.config
                  else TrainConfig())
        overrides = {key: getattr(args, key)
                     for key in ('minibatch', 'epochs', 'eta0',
                                 'eval_subset')
                     if getattr(args, key) is not None}
        config = config.replace(seed=args.seed, **overrides)
    except ValueError as e:
        raise UsageError(str(e)) from None
    run.manifest.config['train_config'] = dataclasses.asdict(config)

    data = _load_data(args.data, args.threshold, args.subset).to_array()
    eval_data = (None if args.eval_data is None
                 else _load_data(args.eval_data, args.threshold).to_array())
    if eval_data is not None and eval_data.shape[1] != data.shape[1]:
        raise DataError('evaluation data has a different number of '
                        'features')
    activation = ActivationKind.parse(args.activation)
    result = train(data, config, activation, args.hidden, eval_data)
    save_model(args.out, result.model)
    if args.log is not None:
        run.emit(format_training_log(result.log), args.log)
    return run.finish()


def _map(args: argparse.Namespace, run: _Run) -> int:
    model = load_model(args.model)
    pool = None if args.indices is None else _read_indices(args.indices)
    if pool is not None and any(not 0 <= i < model.n_visible for i in pool):
        raise DataError(f'{args.indices}: index out of range for '
                        f'N = {model.n_visible}')
    pool_size = model.n_visible if pool is None else len(set(pool))
    if not 1 <= args.max_order <= pool_size:
        raise UsageError(f'--max-order must be in [1, {pool_size}]')
    if args.small_w:
        result = small_w_expand(model, args.max_order, pool, args.budget)
    else:
        result = expand(model, args.max_order, pool, args.budget,
                        run.threads)
    run.emit(format_interactions(result), args.out)
    return run.finish()


def _embed(args: argparse.Namespace, run: _Run) -> int:
    couplings = _read_matrix(args.couplings)
    n = couplings.shape[0]
    fields = (np.zeros(n) if args.fields is None
              else _read_matrix(args.fields).ravel())
    if args.rank is not None and not 1 <= args.rank <= max(1, n - 1):
        raise UsageError(f'--rank must be in [1, {max(1, n - 1)}]')
    try:
        model = linear_embed(couplings, fields, args.rank)
    except ValueError as e:
        raise DataError(str(e)) from None
    save_model(args.out, model)
    return run.finish()


def _sample(args: argparse.Namespace, run: _Run) -> int:
    model = load_model(args.model)
    samples = sample_trials(model, args.n_samples, args.trials, args.seed,
                            args.burn_in, args.thinning, run.threads)
    rows = samples.reshape(-1, model.n_visible).astype(np.int64)
    run.emit(''.join(','.join(map(str, row)) + '\n' for row in rows.tolist()),
             args.out)
    return run.finish()


def _validate(args: argparse.Namespace, run: _Run) -> int:
    model = load_model(args.model)
    summary = enumerate_states(model, run.threads)
    if args.table is not None:
        run.emit(format_table(summary), args.table)
    samples = sample_trials(model, args.samples, args.trials, args.seed,
                            args.burn_in, args.thinning, run.threads)
    report = compare_frequencies(summary, samples)

    n = model.n_visible
    lines = ['mask,state,probability,mean_frequency,std_frequency']
    for mask in range(1 << n):
        state = ''.join(str(mask >> i & 1) for i in range(n))
        lines.append(f'{mask},{state},{report.probabilities[mask]:.17g},'
                     f'{report.frequencies[mask]:.17g},'
                     f'{report.std[mask]:.17g}')
    lines.append(f'# total_variation {report.tv_distance:.17g}')
    lines.append(f'# chi_square {report.chi_square:.17g} dof {report.dof} '
                 f'p_value {report.p_value:.17g}')
    logger.info('validate: TV %.4g, chi-square %.4g (dof %d, p %.4g)',
                report.tv_distance, report.chi_square, report.dof,
                report.p_value)
    run.emit('\n'.join(lines) + '\n', args.out)
    return run.finish()


def _eval(args: argparse.Namespace, run: _Run) -> int:
    if not (args.pl or args.ais or args.exact):
        raise UsageError('choose at least one of --pl, --ais, --exact')
    model = load_model(args.model)
    data = None
    if args.data is not None:
        data = _load_data(args.data, args.threshold).to_array()
        if data.shape[1] != model.n_visible:
            raise DataError(f'data has {data.shape[1]} features, model has '
                            f'{model.n_visible} visible units')
    if args.pl and data is None:
        raise UsageError('--pl needs --data')

    lines = ['metric,value,lower,upper']
    if args.pl:
        assert data is not None
        value = pseudo_likelihood(model, data)
        lines.append(f'pseudo_likelihood,{value:.17g},,')
    if args.ais:
        base_data = data
        if args.base_data is not None:
            base_data = _load_data(args.base_data, args.threshold).to_array()
            if base_data.shape[1] != model.n_visible:
                raise DataError(f'base data has {base_data.shape[1]} '
                                f'features, model has {model.n_visible} '
                                f'visible units')
        try:
            config = AisConfig(
                n_runs=args.runs, n_temperatures=args.temps, seed=args.seed,
                base_biases=(None if base_data is None
                             else base_biases_from_data(base_data)))
        except ValueError as e:
            raise UsageError(str(e)) from None
        estimate = ais_log_partition(model, config, run.threads)
        lines.append(f'log_partition_ais,{estimate.log_z:.17g},'
                     f'{estimate.lower:.17g},{estimate.upper:.17g}')
        lines.append(f'outliers_removed,{estimate.n_outliers_removed},,')
        if data is not None:
            value = mean_log_likelihood_ais(model, data, estimate.log_z)
            lines.append(f'mean_log_likelihood_ais,{value:.17g},'
                         f'{value + estimate.log_z - estimate.upper:.17g},'
                         f'{value + estimate.log_z - estimate.lower:.17g}')
    if args.exact:
        summary = enumerate_states(model, run.threads)
        lines.append(f'log_partition_exact,{summary.log_partition:.17g},,')
        if data is not None:
            value = mean_log_likelihood(summary, data)
            lines.append(f'mean_log_likelihood_exact,{value:.17g},,')
    run.emit('\n'.join(lines) + '\n', args.out)
    return run.finish()


def _stats(args: argparse.Namespace, run: _Run) -> int:
    lines = []
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise UsageError('--a and --b go together')
        a = load_interactions(args.a)
        b = load_interactions(args.b)
        n = max(a.n_visible, b.n_visible)
        a = InteractionModel(n, dict(a.items()))
        b = InteractionModel(n, dict(b.items()))
        lines.append('order,slope,nrmse,rms_a,rms_b,n_terms')
        for order in args.order:
            stats = comparison_stats(a, b, order)
            lines.append(f'{order},{stats.slope:.17g},{stats.nrmse:.17g},'
                         f'{stats.rms_a:.17g},{stats.rms_b:.17g},'
                         f'{stats.n_terms}')
    elif args.model is not None:
        model = load_model(args.model)
        if max(args.order) > model.n_visible:
            raise UsageError(f'--order must be at most {model.n_visible}')
        profile = interaction_strengths(model, args.order, args.max_subsets,
                                        args.seed, threads=run.threads)
        lines.append('order,rms,log_rms,n_subsets')
        for order, rms, log_rms, count in zip(
                profile.orders, profile.rms, profile.log_rms,
                profile.n_subsets):
            lines.append(f'{order},{rms:.17g},{log_rms:.17g},{count}')
        if len(profile.orders) >= 2 and all(x > 0.0 for x in profile.rms):
            fit = fit_strength_decay(profile)
            lines.append(f'# fit slope {fit.slope:.17g} intercept '
                         f'{fit.intercept:.17g} r_squared '
                         f'{fit.r_squared:.17g}')
        lines.append(f'# rms_weight {rms_weight(model):.17g}')
    else:
        raise UsageError('give --a and --b, or --model')
    run.emit('\n'.join(lines) + '\n', args.out)
    return run.finish()


def _cumulants(args: argparse.Namespace, run: _Run) -> int:
    kind = ActivationKind.parse(args.kind)
    lines = ['kind,bias,order,cumulant']
    for bias in args.bias:
        for order in args.orders:
            value = float(cumulant(kind, bias, order))
            lines.append(f'{kind},{bias:.17g},{order},{value:.17g}')
    run.emit('\n'.join(lines) + '\n', args.out)
    return run.finish()


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('--seed', type=_nonnegative_int, default=0,
                        help='master seed (default: %(default)s)')
    common.add_argument('--threads', type=_positive_int, default=None,
                        help=f'worker threads (default: ${THREADS_ENV} or '
                        f'the number of CPUs)')
    common.add_argument('--log-level', default='WARNING',
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'),
                        help='logging level (default: %(default)s)')

    parser = ArgumentParser(
        prog='boltzmap',
        description='Generalized RBMs and their interaction models.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {boltzmap.__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command',
                                     parser_class=ArgumentParser)
    commands.required = True
    kinds = [kind.value for kind in ActivationKind]

    sub = commands.add_parser('train', parents=[common],
                              help='train an RBM with CD-k')
    sub.add_argument('--data', required=True,
                     help='IDX images or 0/1 CSV')
    sub.add_argument('--activation', required=True, choices=kinds)
    sub.add_argument('--hidden', type=_positive_int, required=True,
                     help='number of hidden units M')
    sub.add_argument('--epochs', type=_positive_int, default=None,
                     help='default: 500')
    sub.add_argument('--minibatch', type=_positive_int, default=None,
                     help='default: 100')
    sub.add_argument('--eta0', type=float, default=None,
                     help='initial learning rate (default: per activation)')
    sub.add_argument('--eval-subset', type=_positive_int, default=None,
                     help='points for the pseudo-likelihood (default: 100)')
    sub.add_argument('--eval-data', default=None,
                     help='data for the pseudo-likelihood (default: --data)')
    sub.add_argument('--subset', type=_positive_int, default=None,
                     help='use only the first SUBSET items')
    sub.add_argument('--threshold', type=int, default=DEFAULT_THRESHOLD,
                     help='binarization threshold (default: %(default)s)')
    sub.add_argument('--config', default=None, help='key=value config file')
    sub.add_argument('--out', required=True, help='output model file')
    sub.add_argument('--log', default=None, help='training log CSV')
    sub.set_defaults(handler=_train)

    sub = commands.add_parser('map', parents=[common],
                              help='expand an RBM into interaction terms')
    sub.add_argument('--model', required=True)
    sub.add_argument('--max-order', type=_positive_int, default=2,
                     help='default: %(default)s')
    sub.add_argument('--indices', default=None,
                     help='file of visible indices to expand over')
    sub.add_argument('--small-w', action='store_true',
                     help='leading-order small-weight approximation')
    sub.add_argument('--budget', type=float, default=DEFAULT_BUDGET,
                     help='max K evaluations (default: %(default).0e)')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_map)

    sub = commands.add_parser('embed', parents=[common],
                              help='embed a pairwise model in a Linear RBM')
    sub.add_argument('--couplings', required=True,
                     help='dense symmetric N x N CSV')
    sub.add_argument('--fields', default=None, help='CSV of N fields')
    sub.add_argument('--rank', type=_positive_int, default=None,
                     help='hidden units (default: N - 1)')
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler=_embed)

    sub = commands.add_parser('sample', parents=[common],
                              help='draw visible states by Gibbs sampling')
    sub.add_argument('--model', required=True)
    sub.add_argument('--n-samples', type=_positive_int, required=True,
                     help='samples per trial')
    sub.add_argument('--trials', type=_positive_int, default=1)
    sub.add_argument('--burn-in', type=_nonnegative_int,
                     default=DEFAULT_BURN_IN, help='default: %(default)s')
    sub.add_argument('--thinning', type=_positive_int,
                     default=DEFAULT_THINNING, help='default: %(default)s')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_sample)

    sub = commands.add_parser('validate', parents=[common],
                              help='compare Gibbs samples with enumeration')
    sub.add_argument('--model', required=True)
    sub.add_argument('--samples', type=_positive_int, default=1000,
                     help='samples per trial (default: %(default)s)')
    sub.add_argument('--trials', type=_positive_int, default=20,
                     help='default: %(default)s')
    sub.add_argument('--burn-in', type=_nonnegative_int,
                     default=DEFAULT_BURN_IN, help='default: %(default)s')
    sub.add_argument('--thinning', type=_positive_int,
                     default=DEFAULT_THINNING, help='default: %(default)s')
    sub.add_argument('--table', default=None,
                     help='also write the exact state table CSV')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_validate)

    sub = commands.add_parser('eval', parents=[common],
                              help='pseudo-likelihood and log Z estimates')
    sub.add_argument('--model', required=True)
    sub.add_argument('--data', default=None)
    sub.add_argument('--threshold', type=int, default=DEFAULT_THRESHOLD)
    sub.add_argument('--pl', action='store_true', help='pseudo-likelihood')
    sub.add_argument('--ais', action='store_true', help='AIS estimate')
    sub.add_argument('--exact', action='store_true',
                     help='exact log Z by enumeration (N <= 24)')
    sub.add_argument('--runs', type=_positive_int, default=100,
                     help='AIS runs (default: %(default)s)')
    sub.add_argument('--temps', type=_positive_int, default=14000,
                     help='AIS temperatures (default: %(default)s)')
    sub.add_argument('--base-data', default=None,
                     help='data for the AIS base-rate biases, usually the '
                     'training set (default: --data)')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_eval)

    sub = commands.add_parser('stats', parents=[common],
                              help='compare interaction models')
    sub.add_argument('--a', default=None, help='interaction CSV')
    sub.add_argument('--b', default=None, help='reference interaction CSV')
    sub.add_argument('--model', default=None,
                     help='RBM for strength-vs-order statistics')
    sub.add_argument('--order', type=_positive_int, nargs='+', default=[2],
                     help='default: %(default)s')
    sub.add_argument('--max-subsets', type=_positive_int, default=10 ** 5,
                     help='subsets sampled per order (default: %(default)s)')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_stats)

    sub = commands.add_parser('cumulants', parents=[common],
                              help='cumulants of a hidden potential')
    sub.add_argument('--kind', required=True, choices=kinds)
    sub.add_argument('--bias', type=float, nargs='+', default=[0.0],
                     help='default: %(default)s')
    sub.add_argument('--orders', type=_positive_int, nargs='+',
                     default=[1, 2, 3, 4], help='default: %(default)s')
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler=_cumulants)

    return parser


def _input_paths(args: argparse.Namespace
                 ) -> typing.List[typing.Optional[str]]:
    names = ('data', 'eval_data', 'base_data', 'config', 'model', 'indices',
             'couplings', 'fields', 'a', 'b')
    return [getattr(args, name, None) for name in names]


def dispatch(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    """コマンドラインを解釈して実行し、終了コードを返します。

    0: 成功、1: 使い方の誤り (計算量の上限超過を含む)、2: データの誤り、
    3: 数値計算の破綻。
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        run = _Run(args, ['boltzmap'] + argv, _input_paths(args))
        return typing.cast(int, args.handler(args, run))
    except (UsageError, BudgetExceededError) as e:
        print(f'boltzmap: error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f'boltzmap: data error: {e}', file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f'boltzmap: numerical error: {e}', file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(dispatch())


if __name__ == '__main__':
    main()
