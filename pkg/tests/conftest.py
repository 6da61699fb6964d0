"""测试公共夹具"""
import math
import os
import tempfile

# 在导入 config 之前把日志和运行记录指到临时目录
_TMP_DIR = tempfile.mkdtemp(prefix="mpx-tests-")
os.environ.setdefault("MPX_LOG_DIR", os.path.join(_TMP_DIR, "logs"))
os.environ.setdefault("MPX_OUT_DIR", os.path.join(_TMP_DIR, "output"))
os.environ.setdefault("MPX_LEDGER_URL", f"sqlite:///{os.path.join(_TMP_DIR, 'runs.db')}")
os.environ.setdefault("MPX_WORKERS", "1")

import pytest  # noqa: E402

from modules.kinetics import PopulationHyperparams  # noqa: E402
from modules.testmodels import LfdModel, PcrModel  # noqa: E402

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture
def reference_hyper():
    """峰值约 10^8、感染后约 4 天达峰、约 12 天清除"""
    return PopulationHyperparams(
        mu_p=math.log(8.0),
        sigma_p=0.15,
        alpha_i2p=8.0,
        beta_i2p=2.0,
        alpha_p2c=16.0,
        beta_p2c=2.0,
        sigma_obs=0.5,
    )


@pytest.fixture
def reference_lfd():
    """50% 灵敏度在 10^6 拷贝/ml"""
    return LfdModel(beta0=-12.0, beta1=2.0)


@pytest.fixture
def reference_pcr():
    return PcrModel()


@pytest.fixture
def data_dir():
    return os.path.join(REPO_ROOT, "data")
