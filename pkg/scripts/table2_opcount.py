"""Per-phase operation counts for the 6-3-1 network in every packing, and the
diag/row reduction ratio."""
import argparse

from hetrain import opcount
from hetrain.packed_linalg import Layout


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--net", default="6,3,1")
    args = ap.parse_args()
    dims = tuple(int(d) for d in args.net.split(","))
    row = opcount.run_opcount(dims, Layout.ROW)
    for layout in Layout:
        rep = row if layout is Layout.ROW else opcount.run_opcount(dims, layout)
        print(opcount.format_report(rep, None if layout is Layout.ROW else row))
        print()


if __name__ == "__main__":
    main()
