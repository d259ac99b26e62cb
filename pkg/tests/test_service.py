"""Session service: moves, streams, exports, logs, recovery, wire layer."""

import json
import time

import pytest

from exdial.agents import ExplanandumRecord
from exdial.codec import validate_text
from exdial.protocol import Actor, Move, MoveKind
from exdial.service import (
    ActorMismatch,
    BadCredential,
    CorruptLog,
    MissingKnowledgeBase,
    SessionService,
    UnknownSession,
    build_app,
    parse_config,
    replay_log,
)

Q, E = Actor.Q, Actor.E

KB = [
    ExplanandumRecord(
        topic="cities",
        prediction="Opponent will extend toward Kansas City.",
        gaze_evidence="Gaze keeps returning to that path.",
    )
]

ARGUMENT_GAME = [
    (E, Move(E, MoveKind.BEGIN_EXPLANATION, "cities", "Opponent is building toward the coast.")),
    (Q, Move(Q, MoveKind.RETURN_QUESTION, "cities", "Are they after the ferry route?")),
    (E, Move(E, MoveKind.FURTHER_EXPLAIN, "cities", "The long way round, via the junction.")),
    (Q, Move(Q, MoveKind.BEGIN_ARGUMENT, "cities", "No, they want the northern tunnel.")),
    (E, Move(E, MoveKind.AFFIRM_ARGUMENT, "cities", "Right, the tunnel is the new target.")),
    (E, Move(None, MoveKind.END_ARGUMENT, "cities")),
]


@pytest.fixture()
def service(tmp_path):
    return SessionService(tmp_path / "data", session_timeout=60.0)


def creds(record):
    return record.participants


def play_table4(service, record):
    for actor, move in ARGUMENT_GAME:
        event = service.post_move(record.session_id, creds(record)[actor], move)
        assert event.type == "move_accepted", event
    return record


# -- sessions and moves -------------------------------------------------------

def test_create_session_issues_two_credentials(service):
    record = service.create_session("woz")
    assert set(record.participants) == {Q, E}
    assert record.log_path.exists()


def test_auto_mode_requires_knowledge_base(service):
    with pytest.raises(MissingKnowledgeBase):
        service.create_session("auto")


def test_unknown_session(service):
    with pytest.raises(UnknownSession):
        service.session_view("nope")


def test_accepted_moves_get_gapless_sequence_numbers(service):
    record = service.create_session("woz")
    seqs = []
    for actor, move in ARGUMENT_GAME:
        event = service.post_move(record.session_id, creds(record)[actor], move)
        seqs.append(event.seq)
    assert seqs == [1, 2, 3, 4, 5, 6]


def test_rejection_reports_reason_and_mutates_nothing(service):
    record = service.create_session("woz")
    record = play_table4(service, record)
    log_before = record.log_path.read_bytes()
    view_before = service.session_view(record.session_id)
    # argument after the game returned to the explanation frame is fine,
    # but an affirm by E is not its move in state explained
    event = service.post_move(
        record.session_id, creds(record)[E], Move(E, MoveKind.AFFIRM, "cities")
    )
    assert event.type == "move_rejected"
    assert event.payload["reason"]["error"] == "IllegalMove"
    assert record.log_path.read_bytes() == log_before
    assert service.session_view(record.session_id) == view_before


def test_rejects_the_published_illegal_game(service):
    record = service.create_session("woz")
    moves = [
        (E, Move(E, MoveKind.BEGIN_EXPLANATION, "p")),
        (Q, Move(Q, MoveKind.AFFIRM, "p")),
        (Q, Move(Q, MoveKind.RETURN_QUESTION, "p")),
    ]
    for actor, move in moves:
        assert service.post_move(record.session_id, creds(record)[actor], move).type == "move_accepted"
    event = service.post_move(
        record.session_id, creds(record)[Q], Move(Q, MoveKind.BEGIN_ARGUMENT, "p")
    )
    assert event.type == "move_rejected"
    assert event.payload["reason"]["error"] == "IllegalMove"
    assert event.payload["reason"]["kind"] == "begin_argument"


def test_credential_checks(service):
    record = service.create_session("woz")
    with pytest.raises(BadCredential):
        service.post_move(record.session_id, "forged", Move(Q, MoveKind.BEGIN_QUESTION, "p"))
    with pytest.raises(ActorMismatch):
        service.post_move(
            record.session_id, creds(record)[Q], Move(E, MoveKind.BEGIN_EXPLANATION, "p")
        )


def test_neutral_end_moves_accepted_from_either_side(service):
    record = service.create_session("woz")
    service.post_move(record.session_id, creds(record)[E], Move(E, MoveKind.BEGIN_EXPLANATION, "p"))
    event = service.post_move(
        record.session_id, creds(record)[Q], Move(None, MoveKind.END_EXPLANATION, "p")
    )
    assert event.type == "move_accepted"


def test_view_reports_per_actor_legal_moves(service):
    record = service.create_session("woz")
    view = service.session_view(record.session_id)
    assert view["legal"] == {"Q": ["begin_question"], "E": ["begin_explanation"]}
    service.post_move(record.session_id, creds(record)[Q], Move(Q, MoveKind.BEGIN_QUESTION, "p"))
    view = service.session_view(record.session_id)
    assert view["legal"] == {"Q": [], "E": ["explain", "return_question"]}
    assert view["terminal_eligible"] is False
    assert view["seq"] == 1


def test_auto_mode_explainer_replies_synchronously(service):
    record = service.create_session("auto", kb=KB)
    service.post_move(
        record.session_id,
        creds(record)[Q],
        Move(Q, MoveKind.BEGIN_QUESTION, "cities"),
    )
    view = service.session_view(record.session_id)
    kinds = [m["kind"] for m in view["history"]]
    assert kinds == ["begin_question", "explain"]
    assert "Kansas City" in view["history"][1]["content"]
    # an argument gets an immediate verdict and the argument is closed
    service.post_move(
        record.session_id,
        creds(record)[Q],
        Move(Q, MoveKind.BEGIN_ARGUMENT, "cities", "surely cities"),
    )
    kinds = [m["kind"] for m in service.session_view(record.session_id)["history"]]
    assert kinds[-2:] == ["affirm_argument", "end_argument"]


def test_cross_session_isolation(service):
    a = service.create_session("woz")
    b = service.create_session("woz")
    service.post_move(a.session_id, creds(a)[Q], Move(Q, MoveKind.BEGIN_QUESTION, "p"))
    assert service.session_view(b.session_id)["history"] == []
    assert service.session_view(a.session_id)["seq"] == 1


# -- subscriptions ---------------------------------------------------------------

def accepted_seqs(events):
    return [e.seq for e in events if e.type == "move_accepted"]


def test_subscribe_receives_moves_in_order(service):
    record = service.create_session("woz")
    sub = service.subscribe(record.session_id, creds(record)[Q], last_seq=0)
    sub.drain()  # initial legal_moves snapshot
    for actor, move in ARGUMENT_GAME[:3]:
        service.post_move(record.session_id, creds(record)[actor], move)
    assert accepted_seqs(sub.drain()) == [1, 2, 3]


def test_reconnect_resumes_without_gaps_or_duplicates(service):
    record = service.create_session("woz")
    record = play_table4(service, record)
    sub = service.subscribe(record.session_id, creds(record)[Q], last_seq=2)
    events = sub.drain()
    assert accepted_seqs(events) == [3, 4, 5, 6]
    assert events[-1].type == "legal_moves"


def test_two_subscribers_observe_identical_order(service):
    record = service.create_session("woz")
    sub1 = service.subscribe(record.session_id, creds(record)[Q])
    sub2 = service.subscribe(record.session_id, creds(record)[E])
    play_table4(service, record)
    seq1 = [(e.type, e.seq) for e in sub1.drain()]
    seq2 = [(e.type, e.seq) for e in sub2.drain()]
    assert seq1 == seq2


def test_subscribe_requires_valid_credential(service):
    record = service.create_session("woz")
    with pytest.raises(BadCredential):
        service.subscribe(record.session_id, "forged")


# -- export ------------------------------------------------------------------------

def test_export_table4_session_as_tags(service):
    record = service.create_session("woz")
    record = play_table4(service, record)
    assert service.export_trace(record.session_id, "tags") == "[BE][RQ][FE][BA][AA][EA]"


def test_export_empty_session(service):
    record = service.create_session("woz")
    assert service.export_trace(record.session_id, "tags") == ""
    assert service.export_trace(record.session_id, "jsonl") == ""


def test_export_multi_dialogue_and_validation(service):
    record = service.create_session("woz")
    game = [
        (Q, Move(Q, MoveKind.BEGIN_QUESTION, "p")),
        (E, Move(E, MoveKind.EXPLAIN, "p")),
        (Q, Move(Q, MoveKind.AFFIRM, "p")),
        (Q, Move(None, MoveKind.END_EXPLANATION, "p")),
        (Q, Move(Q, MoveKind.BEGIN_QUESTION, "q")),
        (E, Move(E, MoveKind.EXPLAIN, "q")),
    ]
    for actor, move in game:
        service.post_move(record.session_id, creds(record)[actor], move)
    text = service.export_trace(record.session_id, "tags")
    assert text == "[BQ][E][AF][EE]\n[BQ][E]"
    for line in text.splitlines():
        report = validate_text(line)
        assert report.valid and report.complete
    jsonl = service.export_trace(record.session_id, "jsonl")
    assert len(jsonl.splitlines()) == 6
    assert json.loads(jsonl.splitlines()[0])["kind"] == "begin_question"


def test_export_omits_unfinished_trailing_game(service):
    record = service.create_session("woz")
    service.post_move(record.session_id, creds(record)[Q], Move(Q, MoveKind.BEGIN_QUESTION, "p"))
    assert service.export_trace(record.session_id, "tags") == ""


# -- log replay ----------------------------------------------------------------------

def test_replay_restores_final_state(service):
    record = service.create_session("woz")
    record = play_table4(service, record)
    recovered = replay_log(record.log_path)
    assert recovered.to_summary() == record.state.to_summary()


def test_replay_of_truncated_log_stops_quietly(service, tmp_path):
    record = service.create_session("woz")
    record = play_table4(service, record)
    lines = record.log_path.read_bytes().splitlines(keepends=True)
    clipped = tmp_path / "clipped.jsonl"
    clipped.write_bytes(b"".join(lines[:3]))
    assert len(replay_log(clipped).history) == 3
    torn = tmp_path / "torn.jsonl"
    torn.write_bytes(b"".join(lines[:3]) + lines[3][: len(lines[3]) // 2])
    assert len(replay_log(torn).history) == 3


def test_replay_rejects_tampered_log(service, tmp_path):
    record = service.create_session("woz")
    record = play_table4(service, record)
    lines = record.log_path.read_text().splitlines()
    entry = json.loads(lines[1])
    entry["move"]["kind"] = "clarify"  # illegal in that position
    lines[1] = json.dumps(entry, sort_keys=True)
    bad = tmp_path / "tampered.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptLog) as err:
        replay_log(bad)
    assert err.value.offset == 2


def test_replay_rejects_undecodable_entry(service, tmp_path):
    record = service.create_session("woz")
    record = play_table4(service, record)
    lines = record.log_path.read_text().splitlines()
    lines[0] = "not json"
    bad = tmp_path / "garbled.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptLog) as err:
        replay_log(bad)
    assert err.value.offset == 1


# -- timeout and config -----------------------------------------------------------------

def test_timeout_closes_session_and_notifies(tmp_path):
    service = SessionService(tmp_path, session_timeout=0.05)
    record = service.create_session("woz")
    sub = service.subscribe(record.session_id, record.participants[Q])
    time.sleep(0.1)
    view = service.session_view(record.session_id)
    assert view["closed"] is True
    assert any(e.type == "session_closed" for e in sub.drain())
    with pytest.raises(UnknownSession):
        service.post_move(
            record.session_id, record.participants[Q], Move(Q, MoveKind.BEGIN_QUESTION, "p")
        )


def test_parse_config():
    config = parse_config(
        "# comment\ndata_dir = /tmp/x\nport= 9001\nsession_timeout_seconds = 12.5\n"
    )
    assert config.data_dir == "/tmp/x"
    assert config.port == 9001
    assert config.session_timeout_seconds == 12.5
    with pytest.raises(ValueError):
        parse_config("nonsense\n")
    with pytest.raises(ValueError):
        parse_config("mystery = 1\n")


# -- HTTP / WebSocket layer ---------------------------------------------------------------

@pytest.fixture()
def client(tmp_path):
    from fastapi.testclient import TestClient

    service = SessionService(tmp_path / "data", session_timeout=60.0)
    with TestClient(build_app(service)) as c:
        yield c


def test_wire_protocol_end_to_end(client):
    created = client.post("/sessions", json={"mode": "woz"}).json()
    sid = created["session_id"]
    q_cred = created["credentials"]["Q"]
    e_cred = created["credentials"]["E"]

    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        ws.send_json({"credential": q_cred, "last_seq": 0})
        snapshot = ws.receive_json()
        assert snapshot["type"] == "legal_moves"
        assert snapshot["payload"]["legal"]["Q"] == ["begin_question"]

        response = client.post(
            f"/sessions/{sid}/moves",
            json={
                "credential": e_cred,
                "move": {"actor": "E", "kind": "begin_explanation", "topic": "p"},
            },
        ).json()
        assert response["type"] == "move_accepted"
        assert response["seq"] == 1
        assert ws.receive_json()["type"] == "move_accepted"
        legal = ws.receive_json()
        assert legal["payload"]["terminal_eligible"] is True

        rejected = client.post(
            f"/sessions/{sid}/moves",
            json={
                "credential": q_cred,
                "move": {"actor": "Q", "kind": "clarify", "topic": "p"},
            },
        ).json()
        assert rejected["type"] == "move_rejected"

    view = client.get(f"/sessions/{sid}").json()
    assert view["seq"] == 1
    export = client.get(f"/sessions/{sid}/export", params={"format": "tags"})
    assert export.text == "[BE]"

    assert client.get("/sessions/missing").status_code == 404
    bad = client.post(
        f"/sessions/{sid}/moves",
        json={"credential": "forged", "move": {"actor": "Q", "kind": "affirm", "topic": "p"}},
    )
    assert bad.status_code == 403


def test_wire_websocket_resume(client):
    created = client.post("/sessions", json={"mode": "woz"}).json()
    sid = created["session_id"]
    q_cred = created["credentials"]["Q"]
    e_cred = created["credentials"]["E"]
    for actor, cred, kind, topic in [
        ("Q", q_cred, "begin_question", "p"),
        ("E", e_cred, "explain", "p"),
        ("Q", q_cred, "affirm", "p"),
    ]:
        client.post(
            f"/sessions/{sid}/moves",
            json={"credential": cred, "move": {"actor": actor, "kind": kind, "topic": topic}},
        )
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        ws.send_json({"credential": q_cred, "last_seq": 1})
        first = ws.receive_json()
        second = ws.receive_json()
        assert [first["payload"]["move"]["kind"], second["payload"]["move"]["kind"]] == [
            "explain",
            "affirm",
        ]
        assert ws.receive_json()["type"] == "legal_moves"


def test_wire_bad_credential_on_stream(client):
    created = client.post("/sessions", json={"mode": "woz"}).json()
    sid = created["session_id"]
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        ws.send_json({"credential": "forged", "last_seq": 0})
        assert ws.receive_json()["type"] == "error"


def test_wire_auto_mode(client):
    created = client.post(
        "/sessions",
        json={"mode": "auto", "kb": [r.to_dict() for r in KB]},
    ).json()
    sid = created["session_id"]
    q_cred = created["credentials"]["Q"]
    client.post(
        f"/sessions/{sid}/moves",
        json={
            "credential": q_cred,
            "move": {"actor": "Q", "kind": "begin_question", "topic": "cities"},
        },
    )
    view = client.get(f"/sessions/{sid}").json()
    assert [m["kind"] for m in view["history"]] == ["begin_question", "explain"]

    missing = client.post("/sessions", json={"mode": "auto"})
    assert missing.status_code == 400
