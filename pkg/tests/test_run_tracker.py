import threading

import numpy as np

from utils.run_tracker import LevelRecord, RunCounters, RunReport


def test_counters_are_thread_safe():
    counters = RunCounters()

    def work():
        for _ in range(1000):
            counters.add_solve()
            counters.add_cg_iterations(2)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert counters.snapshot() == {'factorizations': 0, 'solves': 4000, 'cg_iterations': 8000}


def test_finish_copies_counters():
    counters = RunCounters()
    counters.add_factorization()
    counters.add_solve(7)
    record = LevelRecord(case='linear', n=8, nodes=81)
    record.finish(counters, 1.5)
    assert (record.factorizations, record.solves, record.wall_time) == (1, 7, 1.5)


def test_to_dict_drops_fields():
    record = LevelRecord(case='linear', n=4, nodes=25, w=np.ones(25), xi=np.zeros(25))
    data = record.to_dict()
    assert 'w' not in data and 'xi' not in data
    assert data['nodes'] == 25


def test_summary_table():
    report = RunReport()
    assert report.summary() == "No levels run."
    report.add(LevelRecord(case='linear', n=8, nodes=81, iterations=15, converged=True, objective=0.25))
    summary = report.summary()
    assert '# nodes' in summary
    assert '81' in summary
    assert 'yes' in summary
    assert report.converged


def test_json_round_trip(tmp_path):
    report = RunReport(config={'case': 'semilinear', 'levels': [8]})
    record = LevelRecord(case='semilinear', n=8, nodes=81, iterations=40, w=np.ones(81))
    record.trace.append({'iteration': 1, 'objective': 2.0})
    record.warnings.append('trial state solve failed')
    report.add(record)

    path = tmp_path / 'report.json'
    report.save_json(path)
    loaded = RunReport.load_json(path)

    assert loaded.config == report.config
    assert loaded.levels[0].iterations == 40
    assert loaded.levels[0].trace == [{'iteration': 1, 'objective': 2.0}]
    assert loaded.levels[0].w is None
    assert not loaded.converged
