import json
import math

import numpy as np
import pytest

import main
from exporter.export import DIAGNOSTIC_COLUMNS, Exporter
from flow.ricci import FlowDiagnostics
from metrics.stencil import BaseStencil
from metrics.weights import HermitianFamily, induce_weight
from models.config import SCENARIOS, ExperimentConfig
from models.errors import ConfigError
from models.manifest import RunManifest, check_at_most
from scenarios import REGISTRY, get_scenario
from scenarios.check_theorem1 import FRAME_EXPONENT, FRAME_MATRIX, CheckTheorem1Scenario
from scenarios.l2metric import L2MetricScenario
from scenarios.verify_identities import VerifyIdentitiesScenario


def _run(tmp_path, *extra):
    out = tmp_path / 'out'
    code = main.main(['verify-identities', '--resolution', '16x32', '--out', str(out), *extra])
    return code, out


def test_every_configured_scenario_is_registered():
    assert set(REGISTRY) == set(SCENARIOS)
    for name, cls in REGISTRY.items():
        assert cls.checks
        assert len(set(cls.checks)) == len(cls.checks)
    with pytest.raises(ConfigError):
        get_scenario('plotting')


def test_verify_identities_passes(tmp_path, capsys):
    code, out = _run(tmp_path)
    assert code == 0
    manifest = json.loads((out / 'manifest.json').read_text(encoding='utf-8'))
    assert manifest['passed']
    names = [c['name'] for c in manifest['checks']]
    assert sorted(names) == sorted(VerifyIdentitiesScenario.checks)
    assert manifest['config']['n_theta'] == 16
    assert (out / 'report.txt').exists()
    assert 'fs_moment.two_index' in capsys.readouterr().out


def test_json_report_on_stdout(tmp_path, capsys):
    code, _ = _run(tmp_path, '--format', 'json')
    assert code == 0
    assert json.loads(capsys.readouterr().out)['scenario'] == 'verify-identities'


def test_crash_is_recorded(tmp_path, monkeypatch):
    def explode(self, manifest):
        raise RuntimeError("boom")

    monkeypatch.setattr(VerifyIdentitiesScenario, 'run', explode)
    code, out = _run(tmp_path)
    assert code == 1
    checks = json.loads((out / 'manifest.json').read_text(encoding='utf-8'))['checks']
    crashed = [c for c in checks if c['name'] == 'verify-identities.crashed']
    assert crashed and 'boom' in crashed[0]['detail']
    assert all(not c['passed'] for c in checks)
    assert sum(c['detail'] == 'not evaluated' for c in checks) == len(VerifyIdentitiesScenario.checks)


def test_yaml_error_reports_position(tmp_path, capsys):
    path = tmp_path / 'bad.yaml'
    path.write_text("grid:\n  n_theta: [16\n", encoding='utf-8')
    assert main.main(['flow', '--config', str(path)]) == 2
    assert 'bad.yaml:' in capsys.readouterr().err


def test_invalid_field_exits_with_config_code(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'flow': {'dt': 0}}), encoding='utf-8')
    assert main.main(['flow', '--config', str(path)]) == 2
    assert main.main(['flow', '--config', str(tmp_path / 'missing.yaml')]) == 2


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'scenario': 'l2metric', 'seed': 1, 'flow': {'tol': 1e-6}}),
                    encoding='utf-8')
    args = main.build_parser().parse_args(['flow', '--seed', '7', '--dt', '0.001',
                                           '--resolution', '8x16'])
    data = main.apply_overrides(main.load_config(str(path)), args)
    assert data['scenario'] == 'flow'
    assert data['seed'] == 7
    assert data['flow'] == {'tol': 1e-6, 'dt': 0.001}
    assert data['grid'] == {'n_theta': 8, 'n_phi': 16}
    with pytest.raises(ConfigError):
        main.parse_resolution('64by128')


@pytest.mark.parametrize("name,text", [
    ('run.json', '{"scenario": "flow", "family": {"exponent": [[1e-05, 0], [0, 1]]}}'),
    ('run.yaml', "scenario: flow\nfamily:\n  exponent: [[1e-05, 0], [0, 1]]\n"),
])
def test_exponent_notation_in_config_files(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    config = ExperimentConfig.from_dict(main.load_config(str(path)))
    assert config.family.exponent[0][0] == complex(1e-5)


def test_json_error_reports_position(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{"scenario": "flow",\n "seed": }\n', encoding='utf-8')
    with pytest.raises(ConfigError, match=r'bad\.json:2:'):
        main.load_config(str(path))


def test_diagnostics_csv_is_exact():
    diagnostics = FlowDiagnostics(times=[0.0, 0.1], sup_u=[0.1, 1 / 3], min_c_over_r=[1.0, 1.0],
                                  iso_defect=[0.0, 0.0], psi_ss=[2.0, 2.0])
    text = Exporter.render_diagnostics_csv(diagnostics)
    lines = text.splitlines()
    assert lines[0] == ','.join(DIAGNOSTIC_COLUMNS)
    values = lines[2].split(',')
    assert float(values[1]) == 1 / 3
    assert math.isnan(float(values[-1]))
    assert text == Exporter.render_diagnostics_csv(diagnostics)


def test_weight_snapshot_file(tmp_path, coarse_grid):
    weight = induce_weight(HermitianFamily.exp_quadratic(), coarse_grid, BaseStencil(h=0.02))
    path = tmp_path / 'weight.json'
    Exporter.save_weight(weight, str(path))
    restored = Exporter.load_weight(str(path))
    assert restored.k == weight.k
    assert restored.stencil.h == 0.02
    assert abs(restored.values - weight.values).max() < 1e-12


def test_text_report_lists_failures_first():
    manifest = RunManifest('flow', {}, registered=['ok', 'bad'])
    manifest.record(check_at_most('ok', 0.0, 1.0))
    manifest.record(check_at_most('bad', 2.0, 1.0))
    manifest.finalize()
    rows = [line for line in Exporter.emit_report(manifest, 'text').splitlines()
            if line.startswith('| 1') or line.startswith('| 2')]
    assert 'bad' in rows[0] and 'FAIL' in rows[0]
    assert Exporter.emit_report(manifest, 'json') == Exporter.emit_report(manifest, 'json')


def test_l2metric_richardson_routes_agree(tmp_path):
    config = ExperimentConfig.from_dict({'scenario': 'l2metric',
                                         'grid': {'n_theta': 128, 'n_phi': 256},
                                         'stencil': {'richardson': True}})
    scenario = L2MetricScenario(config, output_dir=str(tmp_path))
    manifest = RunManifest('l2metric', config.to_dict(), registered=list(scenario.checks))
    scenario.run(manifest)
    manifest.finalize()
    checks = {c.name: c for c in manifest.ordered_checks()}
    assert checks['curvature.route_agreement'].passed
    assert checks['curvature.route_agreement'].tolerance == 5e-3


def test_check_theorem1_replaces_default_family(coarse_grid):
    stencil = BaseStencil(h=1e-2)
    config = ExperimentConfig.from_dict({'scenario': 'check-theorem1'})
    weight = CheckTheorem1Scenario(config).configured_weight(coarse_grid, stencil)
    framed = HermitianFamily.exp_quadratic(matrix=FRAME_MATRIX, exponent=FRAME_EXPONENT)
    assert np.array_equal(weight.reduced, induce_weight(framed, coarse_grid, stencil).reduced)

    config = ExperimentConfig.from_dict({'scenario': 'check-theorem1',
                                         'family': {'exponent': [[1, 0], [0, 2]]}})
    scenario = CheckTheorem1Scenario(config)
    weight = scenario.configured_weight(coarse_grid, stencil)
    assert np.array_equal(weight.reduced, scenario.initial_weight(coarse_grid, stencil).reduced)
