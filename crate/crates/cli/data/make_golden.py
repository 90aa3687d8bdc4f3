"""Regenerates the 100-tag golden stream and its brute-force pair counts."""
import random

BIN_PS, RANGE_PS = 2000, 40000

rng = random.Random(20240611)
tags = sorted((rng.randrange(0, 2_000_000), rng.randrange(2)) for _ in range(100))
with open("golden_tags.csv", "w") as f:
    f.write("channel,timestamp_ps\n")
    for t, ch in tags:
        f.write(f"{ch},{t}\n")

a = [t for t, ch in tags if ch == 0]
b = [t for t, ch in tags if ch == 1]
counts = [0] * (2 * RANGE_PS // BIN_PS)
for ta in a:
    for tb in b:
        tau = tb - ta
        if -RANGE_PS <= tau < RANGE_PS:
            counts[(tau + RANGE_PS) // BIN_PS] += 1
with open("golden_counts.csv", "w") as f:
    f.write("tau_ps,count\n")
    for k, c in enumerate(counts):
        f.write(f"{-RANGE_PS + k * BIN_PS + BIN_PS // 2},{c}\n")
