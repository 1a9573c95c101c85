import os
import shutil

import pytest


@pytest.fixture(scope="session")
def ctxlm_bin():
    path = os.environ.get("CTXLM_BIN") or shutil.which("ctxlm")
    if not path:
        pytest.skip("ctxlm binary not available")
    return path
