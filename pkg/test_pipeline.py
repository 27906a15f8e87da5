"""
Tests for the pipeline engine and the command-line runner, including the
desk-scale experiment runs marked ``slow``.
"""

import dataclasses
import json
import os

import numpy as np
import pytest

from affinity import train_pairwise
from config import BenchConfig, EvalConfig, PipelineConfig, SolveConfig, TrainingConfig, preset_config
from errors import ConfigError
from evaluation import evaluate
from global_solver import benchmark_local_vs_global
from main import main
from models import JointType, PredictedPose
from pipeline import PipelineEngine, setting_label, solve_scenes, solve_settings
from reporting import ReportGenerator
from scene_synth import generate_scenes, region_count
from storage import read_predictions, timing_path, write_model, write_scene_set
from utils import read_json


def engine_with(**solve_fields):
    base = PipelineConfig()
    return PipelineEngine(dataclasses.replace(base, solve=dataclasses.replace(base.solve, **solve_fields)))


def predictions_of(outcomes):
    return [PredictedPose(o.scene_id, o.region_id, o.pose) for o in outcomes if o.pose is not None]


def test_argmax_solve_writes_full_poses(tmp_path, scene_dir, test_scenes):
    out = str(tmp_path / 'argmax.json')
    predictions, timing = engine_with(mode='argmax').solve(scene_dir, None, out)
    assert len(predictions) == region_count(test_scenes)
    assert all(len(p.pose.visible_joints()) == 14 for p in predictions)
    header, loaded = read_predictions(out)
    assert header['settings']['mode'] == 'argmax'
    assert header['skipped_regions'] == 0
    assert loaded == predictions
    assert read_json(timing_path(out))['skipped_regions'] == timing['skipped_regions'] == 0


def test_ljpa_needs_a_model(tmp_path, scene_dir):
    with pytest.raises(ConfigError):
        engine_with(mode='ljpa').solve(scene_dir, None, str(tmp_path / 'p.json'))


def test_ljpa_solve_and_evaluate(tmp_path, scene_dir, model_path):
    engine = engine_with(mode='ljpa')
    out = str(tmp_path / 'ljpa.json')
    predictions, timing = engine.solve(scene_dir, model_path, out)
    assert timing['median_ms'] is not None
    assert len(timing['per_region_ms']) == len(predictions)
    row = engine.evaluate(out, scene_dir)
    assert row.setting == 'ljpa N=5 tau=0.2'
    assert 0.0 <= row.report.total <= 1.0
    assert row.median_solve_ms == timing['median_ms']


def test_clean_ljpa_picks_argmax_locations(neutral_model):
    scenes = generate_scenes(preset_config('clean', seed=9), 3)
    argmax = solve_scenes(scenes, None, SolveConfig(mode='argmax'))
    ljpa = solve_scenes(scenes, neutral_model, SolveConfig(mode='ljpa'))
    for a, b in zip(argmax, ljpa):
        assert (a.scene_id, a.region_id) == (b.scene_id, b.region_id)
        assert b.pose.visible_joints()
        for joint in b.pose.visible_joints():
            assert (b.pose.get(joint).u, b.pose.get(joint).v) == (a.pose.get(joint).u, a.pose.get(joint).v)


def test_worker_pool_keeps_order(test_scenes, trained_model):
    cfg = SolveConfig(mode='ljpa', n_candidates=2)
    serial = solve_scenes(test_scenes, trained_model, cfg)
    pooled = solve_scenes(test_scenes, trained_model, dataclasses.replace(cfg, workers=2))
    assert predictions_of(serial) == predictions_of(pooled)


def test_global_mode_skips_oversized_regions(tmp_path, scene_dir, model_path, test_scenes):
    predictions, timing = engine_with(mode='global').solve(scene_dir, model_path, str(tmp_path / 'g.json'))
    assert predictions == []
    assert timing['skipped_regions'] == region_count(test_scenes)
    assert timing['median_ms'] is None


def test_global_mode_on_joint_subset(tmp_path, scene_dir, model_path):
    engine = engine_with(mode='global', joints=('head', 'neck'), n_candidates=2)
    predictions, timing = engine.solve(scene_dir, model_path, str(tmp_path / 'g.json'))
    assert timing['skipped_regions'] == 0
    for prediction in predictions:
        assert set(prediction.pose.visible_joints()) <= {JointType.HEAD, JointType.NECK}


def test_settings_label():
    assert setting_label(solve_settings(SolveConfig(mode='argmax'))) == 'argmax'
    assert setting_label(solve_settings(SolveConfig(n_candidates=3, tau=0.35))) == 'ljpa N=3 tau=0.35'


def test_sweep_rows(scene_dir, model_path):
    rows = engine_with().sweep(scene_dir, model_path, 'n_candidates', [1, 2])
    assert [(row.parameter, row.value) for row in rows] == [('n_candidates', 1.0), ('n_candidates', 2.0)]
    assert all(0.0 <= row.map <= 1.0 for row in rows)
    with pytest.raises(ConfigError):
        engine_with().sweep(scene_dir, model_path, 'sigma', [1.0])


def test_bench_phase(scene_dir, model_path):
    config = dataclasses.replace(PipelineConfig(), bench=BenchConfig(sizes=(2,), trials=1, scenes=1))
    rows = PipelineEngine(config).bench(scene_dir, model_path)
    assert [row.solver for row in rows] == ['global', 'local']


def test_synth_rejects_zero_count(tmp_path):
    with pytest.raises(ConfigError):
        PipelineEngine(PipelineConfig()).synth(str(tmp_path), 0)


def test_cli_bad_preset_exits_2(tmp_path):
    assert main(['synth', '--out', str(tmp_path), '--preset', 'stadium']) == 2


def test_cli_missing_directory_exits_2(tmp_path):
    code = main(['solve', '--scenes', str(tmp_path / 'absent'), '--mode', 'argmax', '--out', str(tmp_path / 'p.json')])
    assert code == 2


def test_cli_json_errors_go_to_stderr(tmp_path, capsys):
    code = main(['synth', '--out', str(tmp_path), '--preset', 'stadium', '--json'])
    captured = capsys.readouterr()
    assert code == 2
    error = json.loads(captured.err.strip().splitlines()[-1])
    assert error['error'] == 'ConfigError'
    assert error['context'] == {'preset': 'stadium'}
    assert captured.out == ''


def test_cli_eval_on_other_scenes_exits_3(tmp_path, scene_dir):
    other = tmp_path / 'other'
    write_scene_set(str(other), generate_scenes(preset_config('clean', seed=5), 1), 5, 'clean', 'x')
    preds = str(tmp_path / 'preds.json')
    assert main(['solve', '--scenes', scene_dir, '--mode', 'argmax', '--out', preds]) == 0
    assert main(['eval', '--predictions', preds, '--scenes', str(other)]) == 3
    assert main(['eval', '--predictions', preds, '--scenes', scene_dir]) == 0
    assert os.path.exists(str(tmp_path / 'preds.results.csv'))


def test_cli_unwritable_output_exits_3(tmp_path, scene_dir, capsys):
    blocker = tmp_path / 'blocker'
    blocker.write_text('not a directory')
    preds = str(blocker / 'preds.json')
    assert main(['solve', '--scenes', scene_dir, '--mode', 'argmax', '--out', preds, '--json']) == 3
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error['error'] == 'DataError'
    assert error['context'] == {'path': preds}

    good = str(tmp_path / 'preds.json')
    assert main(['solve', '--scenes', scene_dir, '--mode', 'argmax', '--out', good]) == 0
    assert main(['eval', '--predictions', good, '--scenes', scene_dir,
                 '--csv', str(blocker / 'results.csv')]) == 3


def test_cli_sweep_and_bench_write_csv(tmp_path, scene_dir, model_path, capsys):
    sweep_csv, bench_csv = str(tmp_path / 'sweep.csv'), str(tmp_path / 'bench.csv')
    assert main(['sweep', '--scenes', scene_dir, '--model', model_path, '--parameter', 'N',
                 '--grid', '1,2', '--out', sweep_csv, '--json']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert [row['value'] for row in payload['rows']] == ['1', '2']
    with open(sweep_csv) as f:
        assert len(f.read().splitlines()) == 3

    assert main(['bench', '--scenes', scene_dir, '--model', model_path, '--sizes', '2',
                 '--trials', '1', '--out', bench_csv]) == 0
    with open(bench_csv) as f:
        lines = f.read().splitlines()
    assert [line.split(',')[:2] for line in lines[1:]] == [['2', 'global'], ['2', 'local']]


def test_cli_train_writes_accuracy_table(tmp_path, train_scenes):
    scenes = str(tmp_path / 'scenes')
    write_scene_set(scenes, train_scenes, 11, 'occluded', 'test')
    model = str(tmp_path / 'model.json')
    assert main(['train', '--scenes', scenes, '--model-out', model, '--report-dir', str(tmp_path)]) == 0
    with open(tmp_path / 'accuracy.csv') as f:
        assert len(f.read().splitlines()) == 106


def run_cli_pipeline(root):
    scenes, model, preds = str(root / 'scenes'), str(root / 'model.json'), str(root / 'preds.json')
    csv_path = str(root / 'results.csv')
    assert main(['synth', '--out', scenes, '--count', '8', '--seed', '11', '--preset', 'occluded']) == 0
    assert main(['train', '--scenes', scenes, '--model-out', model, '--seed', '11']) == 0
    assert main(['solve', '--scenes', scenes, '--model', model, '--out', preds, '--n-candidates', '3']) == 0
    assert main(['eval', '--predictions', preds, '--scenes', scenes, '--csv', csv_path]) == 0
    with open(csv_path) as f:
        # drop the solve time column
        results = [line.rsplit(',', 1)[0] for line in f.read().splitlines()]
    with open(preds, 'rb') as f:
        return f.read(), results


def test_pipeline_is_deterministic(tmp_path):
    first = run_cli_pipeline(tmp_path / 'a')
    second = run_cli_pipeline(tmp_path / 'b')
    assert first[0] == second[0]
    assert first[1] == second[1]
    assert first[1][0].startswith('setting,head,shoulder')


# ----------------------------------------------------------------------------
# Desk-scale experiment runs
# ----------------------------------------------------------------------------

@pytest.fixture(scope='module')
def benchmark_scenes():
    return generate_scenes(preset_config('occluded', seed=2024), 200)


@pytest.fixture(scope='module')
def benchmark_model():
    return train_pairwise(generate_scenes(preset_config('occluded', seed=1), 40), TrainingConfig())


@pytest.mark.slow
def test_association_beats_argmax(benchmark_scenes, benchmark_model):
    argmax = solve_scenes(benchmark_scenes, None, SolveConfig(mode='argmax'))
    ljpa = solve_scenes(benchmark_scenes, benchmark_model, SolveConfig(mode='ljpa', n_candidates=5, tau=0.2))
    argmax_map = evaluate(predictions_of(argmax), benchmark_scenes, EvalConfig()).total
    ljpa_map = evaluate(predictions_of(ljpa), benchmark_scenes, EvalConfig()).total
    assert ljpa_map >= argmax_map + 0.02
    assert float(np.median([o.solve_ms for o in ljpa])) <= 1000.0


@pytest.mark.slow
def test_global_solver_is_far_slower(benchmark_scenes, benchmark_model):
    rows = benchmark_local_vs_global(benchmark_scenes, benchmark_model,
                                     BenchConfig(sizes=(10,), trials=2, scenes=8), TrainingConfig())
    assert all(row.trials > 0 for row in rows)
    by_solver = {row.solver: row.median_ms for row in rows}
    assert by_solver['global'] >= 100.0 * by_solver['local']


@pytest.mark.slow
def test_tau_sweep_drops_at_high_threshold(tmp_path, benchmark_scenes, benchmark_model):
    scenes_dir = str(tmp_path / 'scenes')
    model_path = str(tmp_path / 'model.json')
    write_scene_set(scenes_dir, benchmark_scenes, 2024, 'occluded', 'bench')
    write_model(model_path, benchmark_model)

    grid = [round(0.1 * k, 1) for k in range(10)]
    rows = engine_with(mode='ljpa').sweep(scenes_dir, model_path, 'tau', grid)
    csv_path = ReportGenerator(str(tmp_path)).write_sweep(rows)
    with open(csv_path) as f:
        assert len(f.read().splitlines()) == 11
    maps = [row.map for row in rows]
    assert maps[-1] < max(maps)
