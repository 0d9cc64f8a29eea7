#!/usr/bin/env python3
"""Convert headerless `label,bag_id,f1,...,fm` MIL exports to the stemil CSV layout.

The input layout is the one used by the classic Musk/Elephant/Fox/Tiger
distributions as repackaged by several Python MIL libraries: one instance per
row, the instance label first, the bag identifier second, then the features.
The output layout is `bag_id,label,f1,...,fm` with a header row; a bag's label
is the maximum of its instance labels.

Usage: convert_mil_csv.py INPUT OUTPUT [--prefix musk1_]
"""
import argparse
import csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--prefix", default="b")
    args = ap.parse_args()

    with open(args.input, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]

    bag_label = {}
    for r in rows:
        bag_label[r[1]] = max(bag_label.get(r[1], 0), int(float(r[0])))

    m = len(rows[0]) - 2
    with open(args.output, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bag_id", "label"] + [f"f{j + 1}" for j in range(m)])
        for r in rows:
            out.writerow([args.prefix + r[1], bag_label[r[1]]] + r[2:])


if __name__ == "__main__":
    main()
