"""
Tests for the CSV and terminal tables.
"""

from evaluation import MapReport
from global_solver import BenchmarkRow
from models import POOLED_COLUMNS
from reporting import (
    ACCURACY_COLUMNS, BENCH_COLUMNS, RESULT_COLUMNS, ReportGenerator, ResultRow, SweepRow, csv_text,
    format_results_table, report_to_dict, result_records,
)


def sample_report():
    columns = {name: 0.5 for name, _ in POOLED_COLUMNS}
    columns['ankle'] = None
    return MapReport(columns=columns, total=0.5, per_joint={})


def test_result_records_format_values():
    records = result_records([ResultRow('ljpa N=5 tau=0.2', sample_report(), 1.23456)])
    assert records[0][0] == 'ljpa N=5 tau=0.2'
    assert records[0][1] == '0.500000'
    assert records[0][RESULT_COLUMNS.index('ankle')] == ''
    assert records[0][-1] == '1.235'
    assert len(records[0]) == len(RESULT_COLUMNS) == 10


def test_generator_writes_every_table(tmp_path):
    generator = ReportGenerator(str(tmp_path / 'reports'))
    results = generator.write_results([ResultRow('argmax', sample_report(), None)])
    sweep = generator.write_sweep([SweepRow('tau', 0.1, 0.42, 2.5), SweepRow('tau', 0.9, None, 1.0)])
    bench = generator.write_bench([BenchmarkRow(4, 'global', 12.0, 3), BenchmarkRow(4, 'local', 0.1, 3)])
    accuracy = generator.write_accuracy([('head-neck', 40, 60, 0.9, 1), ('neck-neck', 30, 30, 0.4, -1)])

    with open(results, newline='') as f:
        lines = f.read().split('\n')
    assert lines[0] == ','.join(RESULT_COLUMNS)
    assert lines[1].endswith(',0.500000,')

    with open(sweep, newline='') as f:
        assert f.read() == 'parameter,value,map,median_ms\ntau,0.1,0.420000,2.500\ntau,0.9,,1.000\n'
    with open(bench, newline='') as f:
        assert f.read().split('\n')[0] == ','.join(BENCH_COLUMNS)
    with open(accuracy, newline='') as f:
        assert f.read().split('\n')[:3] == [','.join(ACCURACY_COLUMNS), 'head-neck,40,60,0.9000,1',
                                              'neck-neck,30,30,0.4000,-1']


def test_terminal_table_in_percent():
    text = format_results_table([ResultRow('ljpa', sample_report(), 3.0)])
    assert text.splitlines()[0] == 'Average precision (%)'
    row = text.splitlines()[-1].split()
    assert row[0] == 'ljpa'
    assert row[1] == '50.0'
    assert '-' in row


def test_csv_text_and_json_form():
    assert csv_text(['a', 'b'], [['1', '2']]) == 'a,b\n1,2\n'
    payload = report_to_dict(sample_report())
    assert payload['total'] == 0.5
    assert payload['columns']['ankle'] is None


def test_generator_for_file(tmp_path):
    generator, name = ReportGenerator.for_file(str(tmp_path / 'out' / 'sweep.csv'))
    assert name == 'sweep.csv'
    path = generator.write_sweep([SweepRow('n_candidates', 3, 0.5, None)], name)
    with open(path, newline='') as f:
        assert f.read() == 'parameter,value,map,median_ms\nn_candidates,3,0.500000,\n'
    assert ReportGenerator.for_file('bare.csv')[0].report_dir == '.'
