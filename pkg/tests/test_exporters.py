import meshio
import numpy as np
import pytest

from solvers.errors import ExportError
from solvers.mesh import build_uniform_mesh, interpolate
from tools.exporters import (
    TABLE_COLUMNS,
    export_control_field,
    read_table_csv,
    write_table_csv,
    write_trace_csv,
)
from utils.run_tracker import LevelRecord, RunReport


def make_report():
    report = RunReport(config={'case': 'linear'})
    for n, iterations in ((8, 15), (16, 16)):
        record = LevelRecord(case='linear', n=n, nodes=(n + 1) ** 2, iterations=iterations, converged=True)
        record.factorizations = 1
        record.solves = 30 * iterations
        record.wall_time = 0.123456 * n
        report.add(record)
    return report


class TestControlField:
    def test_sign_of_first_coordinate(self, tmp_path):
        mesh = build_uniform_mesh(7)
        w = interpolate(mesh, lambda x1, x2: x1 + 0.0 * x2)
        path = export_control_field(mesh, w, 1.0, tmp_path / 'control.vtk')

        data = meshio.read(path)
        control = np.asarray(data.cell_data['control'][0])
        assert set(np.unique(control)) == {-1.0, 1.0}

        triangles = data.cells_dict['triangle']
        centroids = data.points[triangles][:, :, 0].mean(axis=1)
        assert np.array_equal(control < 0, centroids < 0)
        assert data.point_data['w'].shape == (data.points.shape[0],)

    def test_positive_field_is_not_subdivided(self, tmp_path):
        mesh = build_uniform_mesh(4)
        path = export_control_field(mesh, np.ones(mesh.num_nodes), 50.0, tmp_path / 'ones.vtk')
        data = meshio.read(path)
        assert len(data.cells_dict['triangle']) == mesh.num_elements
        assert np.all(np.asarray(data.cell_data['control'][0]) == 50.0)

    def test_file_is_ascii(self, tmp_path, mesh4):
        path = export_control_field(mesh4, np.ones(mesh4.num_nodes), 1.0, tmp_path / 'ascii.vtk')
        header = path.read_text().splitlines()[:3]
        assert header[0].startswith('# vtk DataFile')
        assert header[2] == 'ASCII'

    def test_missing_directory(self, tmp_path, mesh4):
        with pytest.raises(ExportError) as info:
            export_control_field(mesh4, np.ones(mesh4.num_nodes), 1.0, tmp_path / 'missing' / 'x.vtk')
        assert 'missing' in str(info.value)


class TestTable:
    def test_header_only_for_empty_report(self, tmp_path):
        path = write_table_csv(RunReport(), tmp_path / 'table.csv')
        assert path.read_text() == 'nodes,iters,facts,solves,time_s,converged\n'

    def test_rows_and_formatting(self, tmp_path):
        path = write_table_csv(make_report(), tmp_path / 'table.csv')
        lines = path.read_text().splitlines()
        assert lines[0] == ','.join(TABLE_COLUMNS)
        assert lines[1] == '81,15,1,450,0.9877,True'
        assert len(lines) == 3

    def test_read_back(self, tmp_path):
        report = make_report()
        frame = read_table_csv(write_table_csv(report, tmp_path / 'table.csv'))
        assert frame['nodes'].tolist() == [level.nodes for level in report.levels]
        assert frame['iters'].tolist() == [level.iterations for level in report.levels]
        assert frame['facts'].tolist() == [level.factorizations for level in report.levels]
        assert frame['solves'].tolist() == [level.solves for level in report.levels]
        assert frame['converged'].tolist() == [True, True]
        assert frame['time_s'].tolist() == pytest.approx([round(level.wall_time, 4) for level in report.levels])

    def test_without_timings(self, tmp_path):
        path = write_table_csv(make_report(), tmp_path / 'table.csv', record_timings=False)
        assert all(line.split(',')[4] == '0.0000' for line in path.read_text().splitlines()[1:])

    def test_read_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / 'other.csv'
        path.write_text('a,b\n1,2\n')
        with pytest.raises(ExportError):
            read_table_csv(path)

    def test_read_missing_file(self, tmp_path):
        with pytest.raises(ExportError):
            read_table_csv(tmp_path / 'nothing.csv')


class TestTrace:
    def test_columns_follow_rows(self, tmp_path):
        rows = [
            {'iteration': 1, 'residual': 0.5, 'solves': 4},
            {'iteration': 2, 'residual': 0.25, 'solves': 9},
        ]
        path = write_trace_csv(rows, tmp_path / 'trace.csv')
        lines = path.read_text().splitlines()
        assert lines[0] == 'iteration,residual,solves'
        assert lines[2] == '2,2.5000000000e-01,9'

    def test_empty_trace(self, tmp_path):
        path = write_trace_csv([], tmp_path / 'trace.csv')
        assert path.read_text() == 'iteration\n'
