"""The adaptive dedup gate on a stream with planted hard cuts.

Renders a flat-color synthetic stream (three color blocks), embeds every
frame, and narrates what the gate does: buffer, commit, and where the
Otsu-derived threshold sits once the distance history is informative.
"""

from vidmem.config import EngineConfig
from vidmem.embedding import StubEmbedder, embed_frame
from vidmem.indexer import DedupIndexer
from vidmem.synth import SegmentSpec, SynthSpec, synth_stream


def main():
    spec = SynthSpec(
        segments=(
            SegmentSpec(40.0, (24, 28, 32), 0),
            SegmentSpec(36.0, (216, 220, 224), 0),
            SegmentSpec(30.0, (30, 24, 30), 0),
        ),
        height=48, width=64, noise_amplitude=0,
    )
    print(f"stream: 3 static color blocks, cuts at {spec.boundaries()}")
    print()

    emb = StubEmbedder()
    gate = DedupIndexer(EngineConfig().indexer)
    for f in synth_stream(spec, base_fps=0.5):
        ev = gate.update(f, embed_frame(f, emb))
        if ev.kind == "buffered":
            continue  # quasi-static frames just replace the buffered one
        if ev.kind == "first":
            print(f"t={f.t_rel:5.1f}s  first frame  -> moment committed")
        else:
            print(f"t={f.t_rel:5.1f}s  d={ev.distance:.3f} over "
                  f"threshold {ev.threshold:.3f} -> committed the buffered "
                  f"endpoint from t={ev.moment.t_rel:.1f}s")
    tail = gate.flush()
    if tail is not None:
        print(f"flush       pending buffer -> moment at t={tail.t_rel:.1f}s")

    print()
    print(f"{gate.frames_seen} frames in, {gate.moments_committed} moments "
          f"out: one per cut endpoint plus the stream's first and last look")


if __name__ == "__main__":
    main()
