import logging
import os
import unittest
from unittest import mock

from claip_emo.enums import EnvVars
from claip_emo.errors import EnvVarError
from claip_emo.logger import get_logger, log_level


class TestLogger(unittest.TestCase):

    def test_default_level_is_info(self):
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_LOG_LEVEL: ""}):
            assert log_level() == logging.INFO
            assert get_logger("claip_emo.test_default").level == logging.INFO

    def test_level_from_the_environment(self):
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_LOG_LEVEL: "debug"}):
            assert get_logger("claip_emo.test_debug").level == logging.DEBUG

    def test_unknown_level(self):
        with mock.patch.dict(os.environ, {EnvVars.CLAIP_LOG_LEVEL: "chatty"}):
            with self.assertRaises(EnvVarError):
                log_level()
