import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from scar.errors import (
    ConfigError,
    DuplicateIdError,
    MissingEntryError,
    ProtocolError,
    SchemaError,
    TransportError,
)
from scar.quality import (
    PairMask,
    QualityRecord,
    judge_remote,
    load_quality,
    pair_mask,
    quality_of,
    render_judge_prompt,
)


def table_for(triplet_id, f_direct, f_referenced, f_human):
    table = {}
    for role, f in (("direct", f_direct), ("referenced", f_referenced), ("human", f_human)):
        table[(triplet_id, role)] = QualityRecord(
            id=triplet_id, role=role, helpfulness=f, correctness=f
        )
    return table


class TestQualityOf:
    def test_mean_of_axes(self):
        assert quality_of(QualityRecord(id="a", role="single", helpfulness=4, correctness=5)) == 4.5

    def test_floor(self):
        assert quality_of(QualityRecord(id="a", role="single", helpfulness=1, correctness=1)) == 1.0

    def test_ceiling(self):
        assert quality_of(QualityRecord(id="a", role="single", helpfulness=5, correctness=5)) == 5.0

    def test_out_of_range_rejected(self):
        with pytest.raises(SchemaError):
            QualityRecord(id="a", role="single", helpfulness=6, correctness=3)
        with pytest.raises(SchemaError):
            QualityRecord(id="a", role="single", helpfulness=3, correctness=0.5)

    def test_unknown_role_rejected(self):
        with pytest.raises(SchemaError):
            QualityRecord(id="a", role="bogus", helpfulness=3, correctness=3)


class TestPairMask:
    def test_only_high_quality_pair_active(self):
        table = table_for("t", 4.5, 4.0, 2.0)
        mask = pair_mask("t", table, threshold=3.0)
        assert mask == PairMask(dr=True, rh=False, dh=False)

    def test_zero_threshold_all_active(self):
        table = table_for("t", 1.0, 1.0, 1.0)
        assert pair_mask("t", table, threshold=0.0) == PairMask(True, True, True)

    def test_threshold_five_all_inactive(self):
        table = table_for("t", 5.0, 5.0, 5.0)
        assert pair_mask("t", table, threshold=5.0) == PairMask(False, False, False)

    def test_missing_role_raises(self):
        table = table_for("t", 4.0, 4.0, 4.0)
        del table[("t", "human")]
        with pytest.raises(MissingEntryError):
            pair_mask("t", table, threshold=3.0)

    @given(
        st.floats(min_value=1, max_value=5),
        st.floats(min_value=1, max_value=5),
        st.floats(min_value=1, max_value=5),
        st.floats(min_value=0, max_value=6),
        st.floats(min_value=0, max_value=6),
    )
    def test_monotone_in_threshold(self, f_d, f_r, f_h, t1, t2):
        low, high = min(t1, t2), max(t1, t2)
        table = table_for("t", f_d, f_r, f_h)
        mask_low = pair_mask("t", table, low)
        mask_high = pair_mask("t", table, high)
        for pair in ("dr", "rh", "dh"):
            if getattr(mask_high, pair):
                assert getattr(mask_low, pair)


class TestLoadQuality:
    def test_two_lines(self, write_jsonl):
        path = write_jsonl(
            "q.jsonl",
            [
                {"id": "a", "role": "direct", "helpfulness": 4, "correctness": 5},
                {"id": "a", "role": "human", "helpfulness": 3, "correctness": 3},
            ],
        )
        table = load_quality(path)
        assert len(table) == 2
        assert quality_of(table[("a", "direct")]) == 4.5

    def test_out_of_range_score(self, write_jsonl):
        path = write_jsonl(
            "q.jsonl", [{"id": "a", "role": "direct", "helpfulness": 6, "correctness": 3}]
        )
        with pytest.raises(SchemaError):
            load_quality(path)

    def test_duplicate_entry(self, write_jsonl):
        row = {"id": "a", "role": "direct", "helpfulness": 4, "correctness": 4}
        with pytest.raises(DuplicateIdError):
            load_quality(write_jsonl("q.jsonl", [row, row]))


class TestRenderPrompt:
    def test_contains_both_texts_verbatim(self):
        x = "Sort a list in Python without sort()."
        y = "Use a simple selection loop over the items."
        for domain in ("code", "open"):
            prompt = render_judge_prompt(x, y, domain)
            assert x in prompt and y in prompt

    def test_unknown_domain(self):
        with pytest.raises(ConfigError):
            render_judge_prompt("x", "y", "poetry")


class _JudgeHandler(BaseHTTPRequestHandler):
    responses: list = []
    requests: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _JudgeHandler.requests.append(json.loads(self.rfile.read(length)))
        status, body = _JudgeHandler.responses.pop(0)
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def judge_server():
    server = HTTPServer(("127.0.0.1", 0), _JudgeHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _JudgeHandler.responses = []
    _JudgeHandler.requests = []
    yield f"http://127.0.0.1:{server.server_port}/judge"
    server.shutdown()


class TestJudgeRemote:
    def test_pass_through(self, judge_server):
        _JudgeHandler.responses = [(200, json.dumps({"helpfulness": 4, "correctness": 5}))]
        rec = judge_remote(judge_server, "inst", "resp", "open", record_id="e1")
        assert rec.helpfulness == 4.0 and rec.correctness == 5.0
        assert rec.role == "single"
        assert _JudgeHandler.requests[0] == {
            "instruction": "inst",
            "response": "resp",
            "domain": "open",
        }

    def test_retries_then_succeeds(self, judge_server):
        ok = json.dumps({"helpfulness": 3, "correctness": 3})
        _JudgeHandler.responses = [(500, "oops"), (502, "oops"), (200, ok)]
        rec = judge_remote(judge_server, "i", "r", "code", backoff=0.01)
        assert rec.helpfulness == 3.0
        assert len(_JudgeHandler.requests) == 3

    def test_persistent_500_is_transport_error(self, judge_server):
        _JudgeHandler.responses = [(500, "x"), (500, "x"), (500, "x")]
        with pytest.raises(TransportError):
            judge_remote(judge_server, "i", "r", "code", backoff=0.01)

    def test_unparsable_body_is_protocol_error(self, judge_server):
        _JudgeHandler.responses = [(200, "not json")]
        with pytest.raises(ProtocolError):
            judge_remote(judge_server, "i", "r", "open")

    def test_out_of_range_is_validation_error(self, judge_server):
        _JudgeHandler.responses = [(200, json.dumps({"helpfulness": 7, "correctness": 3}))]
        with pytest.raises(SchemaError):
            judge_remote(judge_server, "i", "r", "open")

    def test_unreachable_endpoint(self):
        with pytest.raises(TransportError):
            judge_remote(
                "http://127.0.0.1:1/judge", "i", "r", "open", backoff=0.0, max_attempts=2
            )

    def test_endpoint_from_env(self, judge_server, monkeypatch):
        monkeypatch.setenv("SCAR_JUDGE_URL", judge_server)
        _JudgeHandler.responses = [(200, json.dumps({"helpfulness": 2, "correctness": 2}))]
        rec = judge_remote(None, "i", "r", "open")
        assert rec.helpfulness == 2.0

    def test_no_endpoint_anywhere(self, monkeypatch):
        monkeypatch.delenv("SCAR_JUDGE_URL", raising=False)
        with pytest.raises(ConfigError):
            judge_remote(None, "i", "r", "open")
