#!/usr/bin/env python3
"""Write data/acn-2020-replica.csv: synthetic sessions shaped like a year of
workplace EV charging at three sites. Deterministic; stdlib only."""

import csv
import datetime as dt
import random
import sys
from pathlib import Path

SITES = [("caltech", 130), ("jpl", 110), ("office001", 60)]
SEED = 2020


def session(rng, day):
    if rng.random() < 0.15:
        # evening arrival, leaves next morning
        arrive = rng.gauss(19.0, 1.0)
        stay = rng.gauss(11.0, 1.5)
    else:
        arrive = rng.gauss(8.5, 1.2)
        stay = rng.gauss(8.0, 2.0)
    arrive = min(max(arrive, 5.0), 22.0)
    stay = min(max(stay, 0.75), 14.0)
    start = dt.datetime.combine(day, dt.time()) + dt.timedelta(minutes=round(arrive * 60))
    end = start + dt.timedelta(minutes=round(stay * 60))
    kwh = min(max(rng.lognormvariate(2.3, 0.55), 1.0), 60.0)
    return start, end, round(kwh, 2)


def main(out):
    rng = random.Random(SEED)
    days = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(366)]
    weekdays = [d for d in days if d.weekday() < 5]
    rows = []
    for site, count in SITES:
        for _ in range(count):
            day = rng.choice(weekdays)
            start, end, kwh = session(rng, day)
            rows.append((start, end, kwh, site))
    rows.sort()
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["arrival", "departure", "kwh", "station"])
        for start, end, kwh, site in rows:
            w.writerow([start.isoformat(), end.isoformat(), f"{kwh:.2f}", site])


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "acn-2020-replica.csv"))
