import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles/textgen helpers


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name: str, rows: list[dict]) -> Path:
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        return path

    return _write
