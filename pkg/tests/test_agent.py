"""Bounded retrieval loop: repair, fallbacks, stagnation, determinism."""

import json
import logging
from types import SimpleNamespace

import pytest

from conftest import flat_pixels
from vidmem.agent import (
    REPAIR_SUFFIX,
    GroundedAnswer,
    route_request,
    run_retrieval,
    summarize_window,
)
from vidmem.config import EngineConfig
from vidmem.embedding import StubEmbedder, embed_text
from vidmem.gateway import ModelGateway, StubBackend
from vidmem.store import MemoryStore

TOKENS = ("alpha", "bravo", "charlie")


def make_world(*, planner=(), budget=None, epoch=None, with_event=True,
               moments=True):
    emb = StubEmbedder()
    cfg = EngineConfig()
    if budget is not None:
        cfg.agent.turn_budget = budget
    store = MemoryStore(dim=emb.dim, config=cfg, epoch=epoch)
    if moments:
        px = flat_pixels((40, 80, 120), h=24, w=32)
        for i, token in enumerate(TOKENS):
            store.insert_moment(10.0 * i, embed_text(token, emb), pixels=px)
        if with_event:
            store.insert_event([0, 1], "alpha then bravo",
                               embed_text("alpha bravo", emb))
    backend = StubBackend()
    if planner:
        backend.script("planner", *planner)
    gw = ModelGateway(backend, config=cfg.gateway, sleeper=lambda s: None)
    return SimpleNamespace(emb=emb, cfg=cfg, store=store,
                           backend=backend, gw=gw)


def run(world, goal="alpha", **kw):
    return run_retrieval(goal, world.store, world.gw, world.emb,
                         config=world.cfg, clock=lambda: 0.0, **kw)


def search_json(q="alpha", **over):
    d = {
        "action": "search",
        "queries": [{"q": q, "top_k": 10, "inspect_k": 0, "threshold": 0.0}],
        "thought": f"search for {q}",
    }
    d.update(over)
    return json.dumps(d)


def answer_json(response="found it", best_ref={"turn_idx": 1, "result_idx": 0},
                **over):
    d = {
        "action": "answer",
        "response": response,
        "best_ref": best_ref,
        "thought": "evidence suffices",
    }
    d.update(over)
    return json.dumps(d)


def planner_calls(world):
    return [c for c in world.backend.calls if c["role"] == "planner"]


# ------------------------------------------------------------- happy path


def test_search_then_answer():
    w = make_world(planner=(search_json(), answer_json()))
    out = run(w)
    assert isinstance(out, GroundedAnswer)
    assert out.text == "found it"
    assert out.sufficiency is True
    assert [t.kind for t in out.turns] == ["search", "answer"]
    # frame 0 is an exact embedding match and outranks the event doc
    top = out.turns[0].results[0]
    assert (top.kind, top.ident) == ("frame", 0)
    assert top.score == pytest.approx(1.0)
    assert out.best_ref["turn_idx"] == 1 and out.best_ref["result_idx"] == 0
    assert out.best_ref["kind"] == "frame" and out.best_ref["id"] == 0


def test_trace_structure():
    w = make_world(planner=(search_json(), answer_json()))
    out = run(w, goal="alpha")
    trace = out.trace
    assert set(trace) == {"goal", "turn_budget", "turns", "answer"}
    assert trace["goal"] == "alpha"
    assert trace["turn_budget"] == 8
    assert trace["answer"]["text"] == "found it"
    assert trace["answer"]["best_ref"]["id"] == 0
    first = trace["turns"][0]
    assert first["kind"] == "search"
    assert first["results"][0]["score"] == 1.0
    json.loads(out.trace_json())  # serializable end to end


# ------------------------------------------------------------------ repair


def test_repair_prompt_demands_single_json_object():
    w = make_world(planner=("not json at all", search_json(), answer_json()))
    out = run(w)
    assert out.sufficiency is True
    calls = planner_calls(w)
    assert len(calls) == 3
    repair_text = calls[1]["payload"].text
    assert "Your previous reply was rejected:" in repair_text
    assert repair_text.endswith("Reply with ONLY one valid JSON object.")
    # the state prompt is kept so the model can still see its task
    assert calls[0]["payload"].text in repair_text


def test_repair_mentions_field_path():
    bad = json.dumps({
        "action": "search",
        "queries": [{"q": "x", "top_k": 0, "inspect_k": 0}],
        "thought": "t",
    })
    w = make_world(planner=(bad, search_json(), answer_json()))
    run(w)
    repair_text = planner_calls(w)[1]["payload"].text
    assert "queries.0.top_k" in repair_text


def test_first_turn_double_failure_runs_permissive_search():
    w = make_world(planner=("garbage", "more garbage"))
    out = run(w, goal="alpha")
    first = out.turns[0]
    assert first.kind == "search"
    assert "permissive" in first.thought
    assert len(first.results) > 0
    # permissive fallback inspects, so an inspection line is present
    assert first.inspection is not None
    # the default planner then answers from the gathered evidence
    assert out.turns[-1].kind == "answer"
    assert out.sufficiency is True


def test_later_double_failure_forces_low_confidence_answer():
    w = make_world(planner=(search_json(), "bad", "still bad"))
    out = run(w)
    assert [t.kind for t in out.turns] == ["search", "answer"]
    assert out.sufficiency is False
    assert out.text.startswith("Best available evidence:")
    assert out.best_ref is not None
    assert out.best_ref["turn_idx"] == 1


# ---------------------------------------------------------------- best_ref


def test_invalid_best_ref_falls_back_to_highest_scoring():
    w = make_world(planner=(
        search_json(),
        answer_json(best_ref={"turn_idx": 5, "result_idx": 9}),
    ))
    out = run(w)
    assert out.sufficiency is True
    assert out.best_ref["turn_idx"] == 1
    assert out.best_ref["result_idx"] == 0
    assert out.best_ref["score"] == pytest.approx(1.0)


def test_answer_without_ref_uses_global_best():
    w = make_world(planner=(search_json(), answer_json(best_ref=None)))
    out = run(w)
    assert out.best_ref["id"] == 0 and out.best_ref["kind"] == "frame"


def test_no_evidence_yields_no_ref():
    w = make_world(moments=False, budget=2,
                   planner=(search_json("alpha"), search_json("bravo")))
    out = run(w)
    assert out.best_ref is None
    assert out.text == "No supporting evidence was found in memory."
    assert out.sufficiency is False


# -------------------------------------------------------------- loop bounds


def narrow_search(q):
    # top_k 1 keeps each turn's candidate set distinct, so the stagnation
    # shortcut stays out of the way and the budget itself is what stops us
    return search_json(q, queries=[{"q": q, "top_k": 1, "inspect_k": 0,
                                    "threshold": 0.0}])


def test_budget_exhaustion_stops_at_exactly_k_turns():
    w = make_world(budget=3, planner=(
        narrow_search("alpha"), narrow_search("bravo"), narrow_search("alpha"),
        narrow_search("never used"),
    ))
    out = run(w)
    assert len(out.turns) == 3
    assert all(t.kind == "search" for t in out.turns)
    assert out.sufficiency is False
    assert out.text.startswith("Best available evidence:")
    assert len(planner_calls(w)) == 3


def test_stagnation_after_two_identical_searches():
    w = make_world(budget=8, planner=(search_json("alpha"),
                                      search_json("alpha")))
    out = run(w)
    assert [t.kind for t in out.turns] == ["search", "search", "answer"]
    assert out.sufficiency is False
    # the shortcut answer comes from the loop, not the planner
    assert len(planner_calls(w)) == 2


def test_inspection_resets_stagnation():
    insp = search_json("alpha")
    obj = json.loads(insp)
    obj["queries"][0]["inspect_k"] = 2
    insp = json.dumps(obj)
    w = make_world(budget=8, planner=(insp, insp))
    out = run(w)
    # same candidate sets but both turns inspected: the loop keeps going
    # and the default planner closes with a confident answer
    assert [t.kind for t in out.turns] == ["search", "search", "answer"]
    assert out.sufficiency is True
    assert len(planner_calls(w)) == 3


# ------------------------------------------------------------ determinism


def test_traces_are_byte_identical_across_runs():
    def one():
        w = make_world(planner=("junk", search_json(), answer_json()))
        return run(w).trace_json()

    assert one() == one()


# ----------------------------------------------------------------- inspect


def inspect_json(**over):
    d = {
        "action": "inspect",
        "prompt": "what is here",
        "ref": {"turn_idx": 1, "result_idx": 0},
        "max_frames": 2,
        "thought": "look closer",
    }
    d.update(over)
    return json.dumps(d)


def test_inspect_by_ref_keeps_candidate_score():
    w = make_world(planner=(search_json(), inspect_json(), answer_json()))
    out = run(w)
    rec = out.turns[1]
    assert rec.kind == "inspect"
    assert rec.inspection is not None
    assert [c.ident for c in rec.results] == [0]
    assert rec.results[0].score == pytest.approx(1.0)
    assert rec.results[0].pixels_available is True


def test_inspect_by_time_range_samples_uniformly():
    w = make_world(planner=(
        inspect_json(ref=None, time_range={"min_time": 0.0, "max_time": 20.0}),
        answer_json(best_ref=None),
    ))
    out = run(w)
    rec = out.turns[0]
    # three candidates, two slots: endpoints win
    assert [c.ident for c in rec.results] == [0, 2]
    assert rec.inspection == "Examined 2 frames at 0.0s, 20.0s."


def test_inspect_with_unresolvable_ref_is_noted():
    w = make_world(planner=(
        inspect_json(ref={"turn_idx": 1, "result_idx": 0}),
        answer_json(best_ref=None),
    ))
    out = run(w)
    rec = out.turns[0]
    assert rec.inspection is None
    assert rec.results == []
    assert any("ref unresolvable" in n for n in rec.notes)


# --------------------------------------------------------------- summarize


def summarize_action_json(**over):
    d = {
        "action": "summarize",
        "time_range": {"min_time": 0.0, "max_time": 20.0},
        "granularity_seconds": 10.0,
        "prompt": "desk recap",
        "thought": "condense",
    }
    d.update(over)
    return json.dumps(d)


def test_summarize_action_materializes_documents():
    w = make_world(planner=(summarize_action_json(), answer_json(best_ref=None)))
    out = run(w)
    rec = out.turns[0]
    assert rec.kind == "summarize"
    assert [c.kind for c in rec.results] == ["summary", "summary"]
    assert len(w.store.summaries) == 2
    assert w.store.summaries[0].text.startswith("Summary for window 0.0s")
    assert w.store.summaries[0].granularity_s == 10.0
    # the new documents are immediately searchable
    hits = w.store.search_documents(
        embed_text(w.store.summaries[0].text, w.emb), sources=("summary",))
    assert hits


def test_summarize_window_zero_span():
    w = make_world()
    docs = summarize_window(w.store, w.gw, w.emb, 5.0, 5.0,
                            granularity_s=10.0, focus="f")
    assert len(docs) == 1
    assert (docs[0].start_t, docs[0].end_t) == (5.0, 5.0)


# ------------------------------------------------------------------ anchors


def test_anchor_narrows_search_window():
    action = {
        "action": "search",
        "queries": [{"q": "charlie", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "time_range": {"anchor": {"target_event": "alpha bravo"}},
        "sources": ["frame"],
        "thought": "look only near the anchored event",
    }
    w = make_world(planner=(json.dumps(action), answer_json(best_ref=None)))
    out = run(w)
    # anchor resolves to the event span [0, 10]; the charlie frame at 20s
    # stays out of reach even though it matches the query best
    idents = [c.ident for c in out.turns[0].results]
    assert 2 not in idents
    assert set(idents) == {0, 1}


def test_anchor_failure_is_recoverable():
    action = {
        "action": "search",
        "queries": [{"q": "alpha", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "time_range": {"anchor": {"target_event": "alpha bravo",
                                  "occurrence_index": 50}},
        "thought": "anchor to the fiftieth occurrence",
    }
    w = make_world(planner=(json.dumps(action), answer_json(best_ref=None)))
    out = run(w)
    rec = out.turns[0]
    assert rec.results == []
    assert any("anchor attempt failed" in n for n in rec.notes)
    assert any("explicitly change the method" in n for n in rec.notes)


def test_anchor_adjudicator_rejection_blocks_anchor():
    action = {
        "action": "search",
        "queries": [{"q": "alpha", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "time_range": {"anchor": {"target_event": "alpha bravo",
                                  "inspect_k": 2}},
        "thought": "verify the anchor first",
    }
    w = make_world(planner=(json.dumps(action), answer_json(best_ref=None)))
    w.backend.script("anchor_adjudicator", json.dumps(
        {"match": False, "confidence": 0.9, "observed_event": "",
         "reason": "different scene"}))
    out = run(w)
    assert any("anchor attempt failed" in n for n in out.turns[0].notes)
    # the adjudicator really was consulted
    assert any(c["role"] == "anchor_adjudicator" for c in w.backend.calls)


# ------------------------------------------------------------- time ranges


def test_absolute_time_range_uses_epoch():
    action = {
        "action": "search",
        "queries": [{"q": "alpha", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "time_range": {"min_time": 1005.0, "max_time": 1015.0,
                       "time_mode": "absolute"},
        "sources": ["frame"],
        "thought": "absolute window",
    }
    w = make_world(epoch=1000.0,
                   planner=(json.dumps(action), answer_json(best_ref=None)))
    out = run(w)
    assert [c.ident for c in out.turns[0].results] == [1]


def test_absolute_time_range_without_epoch_warns(caplog):
    action = {
        "action": "search",
        "queries": [{"q": "alpha", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "time_range": {"min_time": 0.0, "max_time": 10.0,
                       "time_mode": "absolute"},
        "sources": ["frame"],
        "thought": "absolute window, no epoch",
    }
    w = make_world(planner=(json.dumps(action), answer_json(best_ref=None)))
    with caplog.at_level(logging.WARNING, logger="vidmem.agent"):
        out = run(w)
    assert any("no epoch" in r.message for r in caplog.records)
    assert {c.ident for c in out.turns[0].results} == {0, 1}


# ------------------------------------------------------------- refinements


def test_summary_filter_restricts_sources():
    w = make_world()
    w.store.insert_summary(0.0, 10.0, "short recap",
                           embed_text("alpha", w.emb), granularity_s=10.0)
    w.store.insert_summary(0.0, 20.0, "long recap",
                           embed_text("alpha", w.emb), granularity_s=60.0)
    action = {
        "action": "search",
        "queries": [{"q": "alpha", "top_k": 10, "inspect_k": 0,
                     "threshold": 0.0}],
        "summary_filter": {"granularity_seconds": 60.0},
        "thought": "only coarse summaries",
    }
    w.backend.script("planner", json.dumps(action), answer_json(best_ref=None))
    out = run(w)
    results = out.turns[0].results
    assert [c.kind for c in results] == ["summary"]
    assert results[0].text == "long recap"


def test_visual_ref_reuses_prior_embedding():
    follow_up = {
        "action": "search",
        "queries": [{"q": "unrelated words", "top_k": 5, "inspect_k": 0,
                     "threshold": 0.0}],
        "visual_ref": {"turn_idx": 1, "result_idx": 0},
        "sources": ["frame"],
        "thought": "find more like the first hit",
    }
    w = make_world(planner=(search_json("alpha"), json.dumps(follow_up),
                            answer_json(best_ref=None)))
    out = run(w)
    second = out.turns[1]
    assert second.results[0].ident == 0
    assert second.results[0].score == pytest.approx(1.0)


def test_session_recap_round_trip():
    w = make_world(planner=(search_json(), answer_json()))
    out = run(w, summarize_session=True)
    assert out.session_recap == "Session recap: Goal: alpha"
    assert any(c["role"] == "session_summariser" for c in w.backend.calls)


# ------------------------------------------------------------------ routing


def test_route_final_short_circuits():
    w = make_world()
    w.backend.script("router", json.dumps({"type": "final", "text": "hi"}))
    out = route_request("hello there", w.store, w.gw, w.emb, config=w.cfg)
    assert out == {"mode": "final", "text": "hi"}


def test_route_retrieve_runs_the_loop():
    w = make_world(planner=(search_json(), answer_json()))
    out = route_request("alpha", w.store, w.gw, w.emb, config=w.cfg,
                        clock=lambda: 0.0)
    assert out["mode"] == "retrieve"
    assert out["question"] == "alpha"  # default router echoes the request
    assert out["answer"].text == "found it"
    assert "routing_fallback" not in out


def test_route_summarize_materializes_documents():
    w = make_world()
    w.backend.script("router", json.dumps({
        "type": "tool", "name": "summarize",
        "args": {"min_time": 0.0, "max_time": 20.0, "time_mode": "relative",
                 "granularity_seconds": 10.0, "prompt": "recap"},
    }))
    out = route_request("recap please", w.store, w.gw, w.emb, config=w.cfg)
    assert out["mode"] == "summarize"
    assert len(out["documents"]) == 2
    assert out["max_time"] == 20.0


def test_route_summarize_defaults_to_span_end():
    w = make_world()
    w.backend.script("router", json.dumps({
        "type": "tool", "name": "summarize",
        "args": {"min_time": 0.0, "time_mode": "relative",
                 "granularity_seconds": 20.0, "prompt": "recap"},
    }))
    out = route_request("recap", w.store, w.gw, w.emb, config=w.cfg)
    assert out["max_time"] == 20.0  # last moment time


def test_route_repair_then_fallback_to_retrieval():
    w = make_world()
    w.backend.script("router", "garbled", "still garbled")
    out = route_request("alpha", w.store, w.gw, w.emb, config=w.cfg,
                        clock=lambda: 0.0)
    assert out["mode"] == "retrieve"
    assert out["routing_fallback"] is True
    assert out["question"] == "alpha"
    assert isinstance(out["answer"], GroundedAnswer)
    router_calls = [c for c in w.backend.calls if c["role"] == "router"]
    assert len(router_calls) == 2
    assert router_calls[1]["payload"].text.endswith(
        "Reply with ONLY one valid JSON object.")


def test_repair_suffix_constant_shape():
    rendered = REPAIR_SUFFIX.format(reason="r", where="")
    assert rendered.endswith("Reply with ONLY one valid JSON object.")
