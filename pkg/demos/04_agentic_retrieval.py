"""A bounded retrieval session over an indexed synthetic stream.

Indexes the smoke-scale mosaic stream (three planted colored markers,
six scene blocks), then asks for one of the markers and prints the
agent's turn-by-turn trace: what it searched, what came back, and the
evidence reference the final answer is pinned to.
"""

from vidmem.agent import run_retrieval
from vidmem.config import EngineConfig
from vidmem.frames import StreamSpec, open_source
from vidmem.gateway import ModelGateway, StubBackend
from vidmem.pipeline import MemoryPipeline
from vidmem.synth import SynthSpec


def main():
    cfg = EngineConfig()
    gw = ModelGateway(StubBackend(), cfg.gateway)
    pipeline = MemoryPipeline(config=cfg, gateway=gw)

    spec = SynthSpec(segments=6, seed=0)
    stats = pipeline.run(open_source(StreamSpec(source=spec, base_fps=0.5)))
    print(f"indexed {stats['frames_ingested']} frames down to "
          f"{stats['moments']} moments in {stats['events']} events")

    token, t_on, t_off = spec.query_targets()[1]
    print(f"\nquery: {token!r} (planted on screen from {t_on:.0f}s "
          f"to {t_off:.0f}s)\n")

    answer = run_retrieval(token, pipeline.store, gw, pipeline.embedder, cfg)
    for turn in answer.turns:
        print(f"turn {turn.turn_idx}: {turn.kind} - {turn.thought}")
        for cand in turn.results[:3]:
            print(f"    {cand.kind}#{cand.ident} score={cand.score:.3f} "
                  f"t={cand.t_start:.0f}s  {cand.text[:48]}")

    print(f"\nanswer: {answer.text}")
    ref = answer.best_ref
    print(f"evidence: {ref['kind']}#{ref['id']} at t={ref['t_start']:.0f}s "
          f"(score {ref['score']:.3f})")
    hit = t_on - 2.0 <= ref["t_start"] <= t_off + 2.0
    print(f"inside the planted window: {hit}")


if __name__ == "__main__":
    main()
