import math

import pytest

from models.config import ExperimentConfig, FlowConfig
from models.errors import ConfigError
from models.manifest import CheckResult, RunManifest, check_at_least, check_at_most


def test_defaults():
    config = ExperimentConfig.from_dict({'scenario': 'flow'})
    assert config.rank == 2
    assert (config.n_theta, config.n_phi) == (64, 128)
    assert config.flow == FlowConfig()
    assert config.family.kind == 'exp_quadratic'
    assert config.log_level == 'INFO'


def test_family_with_complex_entries():
    config = ExperimentConfig.from_dict({
        'scenario': 'l2metric',
        'family': {
            'kind': 'congruence',
            'matrix': [[2.0, [0.5, 0.25]], [[0.5, -0.25], 1.0]],
            'shear': [[0, 1], [0, 0]],
            'perturbations': [{'kind': 're_z_sq', 'amplitude': 0.05, 'base': True}],
        },
    })
    assert config.family.matrix[0][1] == complex(0.5, 0.25)
    assert config.family.perturbations[0].base
    echoed = config.to_dict()
    assert echoed['family']['matrix'][0][1] == [0.5, 0.25]


@pytest.mark.parametrize("data,field", [
    ({'scenario': 'nope'}, 'scenario'),
    ({'scenario': 'flow', 'rank': 3}, 'rank'),
    ({'scenario': 'flow', 'flow': {'dt': -1}}, 'flow.dt'),
    ({'scenario': 'flow', 'flow': {'scheme': 'leapfrog'}}, 'flow.scheme'),
    ({'scenario': 'flow', 'grid': {'n_theta': 1.5}}, 'grid.n_theta'),
    ({'scenario': 'flow', 'family': {'kind': 'cubic'}}, 'family.kind'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 'bump'}]}},
     'family.perturbations[0].kind'),
    ({'scenario': 'flow', 'seed': -2}, 'seed'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 'eigen', 'alpha': 'x'}]}},
     'family.perturbations[0].alpha'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 'random', 'count': 1.5}]}},
     'family.perturbations[0].count'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 'eigen', 'alpha': True}]}},
     'family.perturbations[0].alpha'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 're_z_sq', 'base': 'maybe'}]}},
     'family.perturbations[0].base'),
    ({'scenario': 'flow', 'family': {'perturbations': [{'kind': 're_z_sq', 'amplitude': 'big'}]}},
     'family.perturbations[0].amplitude'),
    ({'scenario': 'flow', 'family': {'exponent': [[1, 'x'], [0, 1]]}}, 'family.exponent[0][1]'),
    ({'scenario': 'flow', 'stencil': {'richardson': 'sometimes'}}, 'stencil.richardson'),
])
def test_invalid_fields_are_named(data, field):
    with pytest.raises(ConfigError, match=field.replace('[', r'\[').replace(']', r'\]')):
        ExperimentConfig.from_dict(data)


def test_string_flags_and_numbers_are_coerced():
    config = ExperimentConfig.from_dict({
        'scenario': 'l2metric',
        'stencil': {'richardson': 'false'},
        'family': {
            'exponent': [['1e-05', 0], [0, '2.0']],
            'perturbations': [{'kind': 'eigen', 'amplitude': '1e-05', 'alpha': 2, 'base': 'false'},
                              {'kind': 're_z_sq', 'amplitude': 0.1, 'base': 'yes'}],
        },
    })
    assert config.richardson is False
    assert config.family.exponent[0][0] == complex(1e-5)
    first, second = config.family.perturbations
    assert first.amplitude == 1e-5
    assert first.alpha == 2
    assert first.base is False
    assert second.base is True


def test_checks_treat_nan_as_failure():
    assert check_at_most('a', 1e-9, 1e-8).passed
    assert not check_at_most('a', float('nan'), 1e-8).passed
    assert check_at_least('b', 2.0, 1.8).passed
    assert not check_at_least('b', float('nan'), 1.8).passed


def test_manifest_lists_every_registered_check_once():
    manifest = RunManifest('flow', {}, registered=['x', 'y', 'z'])
    manifest.record(check_at_most('x', 1.0, 2.0))
    manifest.record(check_at_most('y', 3.0, 2.0))
    manifest.record(check_at_most('y', 1.0, 2.0))
    manifest.finalize()
    names = [c.name for c in manifest.ordered_checks()]
    assert sorted(names) == ['x', 'y', 'z']
    assert names[0] == 'z'
    assert not manifest.passed


def test_manifest_json_is_finite():
    manifest = RunManifest('flow', {}, registered=['x'])
    manifest.record(CheckResult('x', False, float('nan'), 1.0))
    manifest.finalize()
    data = manifest.to_dict()
    assert data['schema'] == 'glab.manifest/1'
    assert data['checks'][0]['measured'] == 'nan'
    assert set(data['versions']) == {'python', 'numpy', 'scipy', 'glab'}
    assert not math.isnan(data['checks'][0]['tolerance'])
