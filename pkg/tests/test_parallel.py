import os
import threading
import time
import unittest
from unittest import mock

import numpy as np

from claip_emo import parallel
from claip_emo.enums import EnvVars
from claip_emo.errors import EnvVarError
from claip_emo.numerics.tensor import default_dtype, get_default_dtype, set_default_dtype


class TestParallel(unittest.TestCase):

    def test_results_come_back_in_job_order(self):
        def job(i):
            def run():
                time.sleep(0.01 * (5 - i))
                return i, threading.current_thread().name
            return run

        with mock.patch.object(parallel, "get_processes", return_value=2):
            results = parallel.run_jobs([job(i) for i in range(5)], threads=2)
        assert [i for i, _ in results] == [0, 1, 2, 3, 4]
        assert len({name for _, name in results}) == 2

    def test_single_thread_and_empty(self):
        assert parallel.run_jobs([lambda: 1, lambda: 2], threads=1) == [1, 2]
        assert parallel.run_jobs([], threads=4) == []

    def test_get_threads(self):
        assert parallel.get_threads(3) == 3
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_THREADS: "4"}):
            assert parallel.get_threads() == 4
            assert parallel.get_threads(2) == 2
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_THREADS: ""}):
            assert parallel.get_threads() == 1

    def test_bad_thread_counts(self):
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_THREADS: "many"}):
            with self.assertRaises(EnvVarError):
                parallel.get_threads()
        with self.assertRaises(EnvVarError):
            parallel.get_threads(0)

    def test_get_processes_is_capped_by_cpus(self):
        with mock.patch("os.cpu_count", return_value=2):
            assert parallel.get_processes(8) == 2
            assert parallel.get_processes(1) == 1

    def test_workers_see_the_callers_dtype(self):
        with mock.patch.object(parallel, "get_processes", return_value=2):
            with default_dtype(np.float64):
                inside = parallel.run_jobs([get_default_dtype] * 4, threads=2)
            outside = parallel.run_jobs([get_default_dtype] * 4, threads=2)
        assert inside == [np.float64] * 4
        assert outside == [np.float32] * 4

    def test_a_worker_switch_stays_in_its_thread(self):
        def switch():
            set_default_dtype(np.float64)
            return get_default_dtype()

        with mock.patch.object(parallel, "get_processes", return_value=2):
            assert parallel.run_jobs([switch, switch], threads=2) == [np.float64, np.float64]
        assert get_default_dtype() == np.float32
