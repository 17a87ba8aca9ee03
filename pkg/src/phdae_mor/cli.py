"""Command-line interface: generate, validate, analyze, reduce, certify.

Exit codes: 0 success, 1 validation failure, 2 configuration or input error,
3 numerical refusal (improper norm, rank ambiguity, failed pinning).

The number of worker processes used for multi-seed ``reduce`` runs is taken
from the environment variable ``PHDAE_MOR_WORKERS`` (default 1).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bench import LadderSpec, StaircaseSpec, random_staircase, rcl_ladder
from .bundle import (BundleError, MissingFileError, load_model, save_model, save_theta,
                     write_matrix)
from .core import Tolerances, validate
from .param import PinningError, assemble_rom
from .spectral import (ImproperError, StateSpace, error_system, h2_norm, hinf_norm,
                       logspace_grid, polynomial_part, sigma_samples, state_space)
from .staircase import IrregularPencilError, RankAmbiguityError, index_of, to_staircase

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
WORKERS_ENV = 'PHDAE_MOR_WORKERS'
REFUSALS = (ImproperError, RankAmbiguityError, IrregularPencilError, PinningError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings of a ``reduce`` run.

    Config files hold one ``key = value`` pair per line; ``#`` starts a
    comment. Keys are the field names below; ``seeds`` is a comma-separated
    list.
    """

    method: str = 'hinf'
    order: int = 2
    ell: str = 'auto'
    seeds: list = field(default_factory=lambda: [0])
    init: str = 'identity-dissipative'
    pin: bool = True
    tol_rank: float = 1e-8
    max_iter: int = 2000          # quasi-Newton iterations (h2)
    max_inner: int = 300          # quasi-Newton iterations per level (hinf)
    max_stages: int = 400
    max_time: float = math.inf    # seconds per seed (hinf)
    beta: float = 0.9
    gap_tol: float = 1e-3

    def check(self):
        if self.method not in ('hinf', 'h2'):
            raise ConfigError(f'method must be hinf or h2, got {self.method!r}')
        if self.order < 0:
            raise ConfigError('order must be nonnegative')
        if min(self.max_iter, self.max_inner) <= 0 or self.max_stages <= 0 or not self.max_time > 0:
            raise ConfigError('budgets must be positive')
        if not 0 < self.beta < 1:
            raise ConfigError('beta must lie in (0, 1)')
        if not self.seeds:
            raise ConfigError('at least one seed is required')
        if self.ell != 'auto':
            try:
                if int(self.ell) < 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"ell must be 'auto' or a nonnegative integer") from None
        if self.method == 'h2' and not self.pin:
            raise ConfigError('h2 reduction needs the polynomial part pinned')
        return self

    def update(self, key, value):
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f'unknown config key {key!r}')
        value = str(value).strip()
        try:
            if key == 'seeds':
                parsed = [int(v) for v in value.split(',') if v.strip()]
            elif key == 'pin':
                if value.lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
                    raise ValueError(value)
                parsed = value.lower() in ('true', '1', 'yes')
            elif types[key] == 'int':
                parsed = int(value)
            elif types[key] == 'float':
                parsed = float(value)
            else:
                parsed = value
        except ValueError:
            raise ConfigError(f'bad value {value!r} for {key}') from None
        setattr(self, key, parsed)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def read_config(path, cfg=None):
    cfg = cfg or RunConfig()
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    for k, line in enumerate(lines, 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'{path}:{k}: expected key = value')
        key, value = line.split('=', 1)
        cfg.update(key.strip(), value)
    return cfg


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x).__name__)


def _finite(obj):
    # strict JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dump(obj, path=None):
    text = json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default,
                      allow_nan=False)
    if path is not None:
        Path(path).write_text(text + '\n')
    return text


def _workers():
    raw = os.environ.get(WORKERS_ENV, '1')
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f'{WORKERS_ENV} must be an integer, got {raw!r}') from None


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    meta = {'kind': args.kind, 'seed': args.seed}
    if args.kind == 'rcl':
        if args.nbar is None or args.nbar < 1:
            raise ConfigError('--kind rcl needs --nbar >= 1')
        sys_ = rcl_ladder(LadderSpec.random(args.nbar, seed=args.seed))
        meta['nbar'] = args.nbar
    else:
        if args.dims is None:
            raise ConfigError('--kind staircase needs --dims n1,n2,n3,n4')
        try:
            dims = tuple(int(d) for d in args.dims.split(','))
        except ValueError:
            raise ConfigError(f'bad --dims {args.dims!r}') from None
        mix = None if args.mix == 'none' else args.mix
        try:
            spec = StaircaseSpec(dims, m=args.m, seed=args.seed, mix=mix)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        sys_ = random_staircase(spec)
        meta.update(dims=list(dims), m=args.m, mix=args.mix, index=index_of(dims))
    save_model(sys_, args.out, meta=meta)
    print(f'wrote {args.out} (n={sys_.n}, m={sys_.m})')
    return EXIT_OK


def cmd_validate(args):
    report = validate(load_model(args.bundle))
    for line in report.lines():
        print(line)
    print('PASS' if report.passed else 'FAIL')
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_analyze(args):
    sys_ = load_model(args.bundle)
    out = Path(args.out or args.bundle)
    out.mkdir(parents=True, exist_ok=True)
    if not (args.sigma or args.norms or args.polypart):
        args.sigma = args.norms = args.polypart = True
    summary = {'n': sys_.n, 'm': sys_.m}
    if args.sigma:
        lo, hi, num = args.grid
        samples = sigma_samples(sys_, logspace_grid(lo, hi, int(num)))
        samples.to_csv(out / 'sigma.csv')
        summary['sigma_csv'] = str(out / 'sigma.csv')
    if args.polypart or args.norms:
        st = to_staircase(sys_)
        summary['dims'] = list(st.dims)
        summary['index'] = index_of(st)
    if args.polypart:
        pp = polynomial_part(sys_)
        write_matrix(out / 'P0.mtx', pp.P0)
        write_matrix(out / 'P1.mtx', pp.P1)
        summary['P1_norm'] = float(np.linalg.norm(pp.P1))
        summary['polypart_method'] = pp.method
    if args.norms:
        ss, P1 = state_space(sys_, allow_improper=True)
        summary['hinf_proper_part'], summary['hinf_peak_omega'] = hinf_norm(ss)
        summary['h2_strictly_proper_part'] = h2_norm((ss.A, ss.B, ss.C))
    _dump(summary, out / 'analysis.json')
    print(_dump(summary))
    return EXIT_OK


def _reduce_one(fom, cfg, seed):
    """Run one seed; returns a plain dict (picklable for worker processes)."""
    from .opt_h2 import H2Problem, minimize_h2
    from .opt_hinf import HinfProblem, certified_error, minimize_hinf

    tol = Tolerances(tol_rank=cfg.tol_rank)
    if cfg.method == 'hinf':
        pb = HinfProblem.from_system(fom, cfg.order, init=cfg.init, seed=seed, pin=cfg.pin,
                                     tol=tol, beta=cfg.beta, max_stages=cfg.max_stages,
                                     max_inner=cfg.max_inner, max_time=cfg.max_time,
                                     gap_tol=cfg.gap_tol)
        res = minimize_hinf(pb)
        return {'seed': seed, 'theta': res.theta, 'error': res.certified,
                'initial_error': res.initial_certified, 'status': res.status,
                'trace': res.trace, 'all_valid': res.all_valid, 'kind': 'hinf'}
    pb = H2Problem.from_system(fom, cfg.order, init=cfg.init, seed=seed, tol=tol,
                               max_iter=cfg.max_iter)
    res = minimize_h2(pb)
    return {'seed': seed, 'theta': res.theta, 'error': res.h2_error,
            'initial_error': res.trace[0]['h2_error'], 'status': res.status,
            'trace': res.trace, 'all_valid': res.all_valid, 'kind': 'h2'}


def _write_trace(path, result):
    import csv
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['iter', 'gamma', 'objective', 'grad_norm', 'certified_error'])
        for row in result['trace']:
            gamma = repr(row['gamma']) if 'gamma' in row else ''
            cert = row.get('certified_error', row.get('h2_error'))
            w.writerow([row['iter'], gamma, repr(row['objective']), repr(row['grad_norm']),
                        repr(cert)])


def cmd_reduce(args):
    cfg = RunConfig()
    if args.config:
        read_config(args.config, cfg)
    for item in args.set or []:
        if '=' not in item:
            raise ConfigError(f'--set expects key=value, got {item!r}')
        cfg.update(*item.split('=', 1))
    if args.method is not None:
        cfg.method = args.method
    if args.order is not None:
        cfg.order = args.order
    if args.seeds is not None:
        cfg.update('seeds', args.seeds)
    if args.max_time is not None:
        cfg.max_time = args.max_time
    if args.no_pin:
        cfg.pin = False
    cfg.check()

    fom = load_model(args.bundle)
    if cfg.ell != 'auto':
        _, P1 = state_space(fom, Tolerances(tol_rank=cfg.tol_rank), allow_improper=True)
        rank = int(np.linalg.matrix_rank(P1, tol=cfg.tol_rank * max(np.linalg.norm(P1, 2),
                                                                    1e-300)))
        want = int(cfg.ell)
        if cfg.pin and want != rank:
            raise ConfigError(f'ell={want} differs from rank(P1)={rank}')
    workers = min(_workers(), len(cfg.seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_reduce_one, [fom] * len(cfg.seeds), [cfg] * len(cfg.seeds),
                                    cfg.seeds))
    else:
        results = [_reduce_one(fom, cfg, s) for s in cfg.seeds]
    # deterministic choice: smallest error, then the earliest seed
    best = min(results, key=lambda r: (r['error'] if math.isfinite(r['error']) else math.inf,
                                        cfg.seeds.index(r['seed'])))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rom = assemble_rom(best['theta'])
    save_model(rom.system, out / 'rom', meta={'method': cfg.method, 'r': rom.r,
                                              'ell': rom.ell, 'seed': best['seed']})
    save_theta(best['theta'], out / 'theta.json')
    _write_trace(out / 'trace.csv', best)
    summary = {'config': cfg.to_dict(), 'seed': best['seed'], 'status': best['status'],
               'budget_exhausted': best['status'] in ('budget', 'max_iter'),
               'error': best['error'], 'initial_error': best['initial_error'],
               'error_kind': best['kind'] if cfg.pin else 'uncertified',
               'all_iterates_valid': best['all_valid'],
               'per_seed': [{'seed': r['seed'], 'error': r['error'], 'status': r['status']}
                            for r in results]}
    _dump(summary, out / 'result.json')
    print(_dump(summary))
    return EXIT_OK


def cmd_certify(args):
    fom, rom = load_model(args.fom), load_model(args.rom)
    tol = Tolerances()
    fs = state_space(fom, tol, allow_improper=True)
    rs = state_space(rom, tol, allow_improper=True)
    report = {}
    code = EXIT_OK
    try:
        es = error_system(fs, rs, p1_rtol=args.p1_rtol)
    except ImproperError as exc:
        report['refused'] = f'improper error system: {exc}'
        print(_dump(report))
        return EXIT_REFUSED
    if args.norm in ('hinf', 'auto', 'both'):
        report['hinf_error'], report['hinf_peak_omega'] = hinf_norm(es)
    d_mismatch = float(np.linalg.norm(es.D))
    if args.norm in ('h2', 'auto', 'both'):
        if d_mismatch > args.p0_rtol * (1 + np.linalg.norm(fs[0].D)):
            report['h2_error'] = None
            report['h2_refused'] = f'P0 mismatch {d_mismatch:.3e}: H2 error is infinite'
            if args.norm != 'auto':
                code = EXIT_REFUSED
        else:
            report['h2_error'] = h2_norm(StateSpace(es.A, es.B, es.C, np.zeros_like(es.D)))
    print(_dump(report))
    return code


# ---------------------------------------------------------------- parser

def _grid(text):
    try:
        lo, hi, num = (float(x) for x in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError('grid must be lo,hi,num') from None
    return lo, hi, num


def build_parser():
    p = argparse.ArgumentParser(prog='phdae-mor', description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest='command', required=True)

    g = sub.add_parser('generate', help='write a benchmark model bundle')
    g.add_argument('--kind', choices=('rcl', 'staircase'), required=True)
    g.add_argument('--nbar', type=int, help='number of ladder loops (rcl)')
    g.add_argument('--dims', help='n1,n2,n3,n4 (staircase)')
    g.add_argument('--m', type=int, default=1, help='number of ports (staircase)')
    g.add_argument('--mix', choices=('orthogonal', 'permutation', 'none'), default='orthogonal')
    g.add_argument('--seed', type=int, default=0)
    g.add_argument('--out', required=True)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser('validate', help='check the pH structure of a bundle')
    v.add_argument('bundle')
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser('analyze', help='sigma data, norms and polynomial part')
    a.add_argument('bundle')
    a.add_argument('--sigma', action='store_true')
    a.add_argument('--norms', action='store_true')
    a.add_argument('--polypart', action='store_true')
    a.add_argument('--grid', type=_grid, default=(1e-3, 1e4, 400), help='lo,hi,num')
    a.add_argument('--out', help='output directory (default: the bundle)')
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser('reduce', help='fit a structured reduced model')
    r.add_argument('bundle')
    r.add_argument('--method', choices=('hinf', 'h2'))
    r.add_argument('--order', type=int)
    r.add_argument('--seeds', help='comma-separated seeds')
    r.add_argument('--seed', dest='seeds', help='single seed')
    r.add_argument('--max-time', type=float)
    r.add_argument('--no-pin', action='store_true',
                   help='do not match the polynomial part (diagnostics only)')
    r.add_argument('--config', help='key = value file')
    r.add_argument('--set', action='append', metavar='KEY=VALUE')
    r.add_argument('--out', required=True)
    r.set_defaults(func=cmd_reduce)

    c = sub.add_parser('certify', help='certified error between two bundles')
    c.add_argument('fom')
    c.add_argument('rom')
    c.add_argument('--norm', choices=('auto', 'hinf', 'h2', 'both'), default='auto')
    c.add_argument('--p1-rtol', type=float, default=1e-8)
    c.add_argument('--p0-rtol', type=float, default=1e-10)
    c.set_defaults(func=cmd_certify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except REFUSALS as exc:
        print(f'refused: {exc}', file=sys.stderr)
        return EXIT_REFUSED
    except (ConfigError, BundleError, MissingFileError, FileNotFoundError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
