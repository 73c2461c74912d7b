"""Watch the frame filter cascade decide, one gate at a time.

Feeds a handful of hand-built frames through filter_frame and prints the
verdict plus the measured values each gate saw.
"""

import numpy as np

from vidmem.config import FilterConfig
from vidmem.filters import filter_frame
from vidmem.frames import Frame


def checkerboard(color, phase, h=96, w=128, cell=16):
    px = np.zeros((h, w, 3), np.uint8)
    px[:] = (20, 24, 28)
    for r in range(0, h, cell):
        for c in range(0, w, cell):
            if ((r // cell + c // cell + phase) % 2) == 0:
                px[r:r + cell, c:c + cell] = color
    return px


def frame(pixels, idx):
    return Frame(pixels=pixels, frame_index=idx, t_rel=idx * 2.0)


def main():
    cfg = FilterConfig()
    print(f"gates: sharpness >= {cfg.tau_blur}, mean diff >= {cfg.tau_diff}, "
          f"ssim <= {cfg.tau_ssim}")
    print()

    board = checkerboard((230, 60, 60), 0)
    wiggle = np.clip(board.astype(int)
                     + np.random.default_rng(0).integers(-3, 4, board.shape),
                     0, 255).astype(np.uint8)
    stream = [
        ("sharp scene", frame(board, 0)),
        ("exact repeat", frame(board.copy(), 1)),
        ("tiny wiggle", frame(wiggle, 2)),
        ("flat gray wall", frame(np.full((96, 128, 3), 90, np.uint8), 3)),
        ("new layout", frame(checkerboard((60, 230, 60), 1), 4)),
    ]

    last_kept = None
    for label, f in stream:
        verdict = filter_frame(f, last_kept, cfg)
        shown = ", ".join(f"{k}={v:.2f}" for k, v in verdict.measures.items())
        mark = "KEEP" if verdict.keep else f"drop ({verdict.reason})"
        print(f"t={f.t_rel:5.1f}s  {label:<15} -> {mark:<22} [{shown}]")
        if verdict.keep:
            last_kept = f

    print()
    print("only frames that are sharp AND visibly different from the last")
    print("kept frame make it through to the embedding stage")


if __name__ == "__main__":
    main()
