"""
InteRACT 意圖預測系統 - pytest 共用設定
"""
import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='執行耗時的訓練方向性測試')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: 需要完整訓練的測試，預設略過')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
