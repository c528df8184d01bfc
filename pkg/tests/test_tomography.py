import json

import pytest

from cosparse.geometry import ProjectionGeometry, load_matrix
from cosparse.phantom import save_image
from tomography import main
from util.storage import Storage


def build(d, out='A.mtx', *extra):
    return main(['build-matrix', '--dim', '2', '--d', str(d), '--dirs', '3', '--out', out, *extra])


def test_build_matrix(store):
    assert build(6, 'A.mtx', '--gradient', 'B.mtx') == 0
    assert load_matrix('B.mtx').shape == (60, 36)
    A = load_matrix('A.mtx')
    assert A.shape == (ProjectionGeometry(2, 6, 3).num_rays(), 36)
    assert main(['--seed', '7', 'build-matrix', '--dim', '2', '--d', '6', '--dirs', '3',
                 '--perturb', 'interval:0.9,1.1', '--out', 'Ap.mtx']) == 0
    Ap = load_matrix('Ap.mtx')
    assert Ap.nnz == A.nnz
    assert 0.9 <= Ap.data.min() and Ap.data.max() <= 1.1


def test_build_matrix_bad_geometry(store):
    assert main(['build-matrix', '--dim', '2', '--d', '6', '--dirs', '9', '--out', 'A.mtx']) == 1


def test_bounds_report(capsys):
    assert main(['bounds', '--dim', '2', '--d', '100', '--ell', '41', '--known']) == 0
    document = json.loads(capsys.readouterr().out)
    assert document['ell'] == 41 and document['k'] == document['p'] - 41
    assert document['m_known'] <= document['m_unknown']


def test_bounds_needs_ell():
    with pytest.raises(SystemExit) as info:
        main(['bounds', '--dim', '2', '--d', '10'])
    assert info.value.code == 2


def test_bounds_empirical_csv(store):
    assert main(['--workers', '1', 'bounds', '--dim', '2', '--d', '4', '--empirical', '--trials', '3',
                 '--out', 'kappa.csv']) == 0
    lines = open('kappa.csv').read().splitlines()
    assert lines[0] == 'ell,mean_dim,bound'
    assert lines[1].startswith('0,16.000')


def test_phantom_files(store):
    assert main(['--seed', '3', 'phantom', '--dim', '2', '--d', '16', '--rho', '0.1', '--out', 'u']) == 0
    values, sidecar = Storage().array_get('u')
    assert values.shape == (16, 16)
    assert sidecar['kind'] == 'ellipses' and sidecar['seed'] == 3
    assert main(['phantom', '--dim', '2', '--d', '16', '--head', '--out', 'head']) == 0
    assert Storage().json_get('head.json')['kind'] == 'head'


def test_recover_with_certificate(store, square_image, capsys):
    build(8)
    save_image(square_image, 'u')
    assert main(['recover', '--matrix', 'A.mtx', '--image', 'u.raw', '--certificate']) == 0
    document = json.loads(capsys.readouterr().out)
    assert document['mode'] == 'tv'
    assert document['solver']['status'] == 'Optimal'
    assert document['certificate']['verdict'] in ('Violated', 'NotViolated')


def test_recover_size_mismatch(store, square_image):
    build(6)
    save_image(square_image, 'u')
    assert main(['recover', '--matrix', 'A.mtx', '--image', 'u.raw']) == 1


def test_phase_transition_and_refit(store):
    plan = dict(dim=2, d_values=[6, 8], rho_values=[0.005], num_dirs=3, trials_per_cell=1, background=0.5)
    Storage().json_put('plan.json', plan)
    assert main(['--workers', '1', 'phase-transition', '--config', 'plan.json', '--out', 'results/pt']) == 0
    lines = open('results/pt.csv').read().splitlines()
    assert lines == ['d,rho,trials,successes,rate', '6,0.005,1,1,1.0000', '8,0.005,1,1,1.0000']
    assert open('results/pt.svg').read().startswith('<?xml')
    # all cells succeed, so there is no transition to fit
    assert main(['fit', '--csv', 'results/pt.csv', '--dim', '2', '--dirs', '3']) == 1


def test_unknown_preset(store):
    assert main(['phase-transition', '--preset', 'nope', '--out', 'x']) == 1


def test_analyze(store, capsys):
    build(5)
    capsys.readouterr()
    assert main(['--workers', '1', 'analyze', '--matrix', 'A.mtx', '--spark-max-k', '6', '--trials', '2']) == 0
    document = json.loads(capsys.readouterr().out)
    assert document['rank'] == 16
    assert document['spark_exact'] == 6
    assert document['spark_upper'] == 6
