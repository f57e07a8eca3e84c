"""Median wall time of one batch-1 training step on iris, per packing."""
import argparse

from hetrain import he_nn
from hetrain.data import load_iris
from hetrain.packed_linalg import Layout
from hetrain.slot_engine import EngineContext

LEVELS = {Layout.ROW: 12, Layout.DIAGONAL: 9, Layout.STEPPED: 9}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=51)
    args = ap.parse_args()
    ds = load_iris(seed=0)
    x, y = ds.features[ds.train_idx[0]], ds.labels[ds.train_idx[0]]
    times = {}
    for layout in Layout:
        ctx = EngineContext(level_budget=LEVELS[layout])
        net = he_nn.init_network([4, 10, 3], layout, 0.1, 0, ctx, he_nn.Hyper(batch_size=1))
        times[layout] = he_nn.timed_step(net, x, y, ctx, repeats=args.repeats)
        print(f"{layout.value:<14}{times[layout] * 1e3:8.2f} ms")
    print(f"row / diag = {times[Layout.ROW] / times[Layout.DIAGONAL]:.1f}x")


if __name__ == "__main__":
    main()
