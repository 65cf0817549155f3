"""Writes the synthetic calibration tables under data/sample."""

import csv
import math
import pathlib
import sys

OCCUPATIONS = [
    ("Management", 1468, 0.006),
    ("Business and Financial Operations", 1236, 0.007),
    ("Computer and Mathematical", 1528, 0.006),
    ("Architecture and Engineering", 1446, 0.006),
    ("Life Physical and Social Science", 1316, 0.007),
    ("Community and Social Service", 933, 0.007),
    ("Legal", 1442, 0.005),
    ("Education Training and Library", 1011, 0.008),
    ("Arts Design Entertainment Sports and Media", 1073, 0.011),
    ("Healthcare Practitioners and Technical", 1160, 0.005),
    ("Healthcare Support", 596, 0.010),
    ("Protective Service", 919, 0.008),
    ("Food Preparation and Serving Related", 525, 0.016),
    ("Building and Grounds Cleaning and Maintenance", 567, 0.015),
    ("Personal Care and Service", 592, 0.013),
    ("Sales and Related", 815, 0.011),
    ("Office and Administrative Support", 766, 0.009),
    ("Farming Fishing and Forestry", 568, 0.022),
    ("Construction and Extraction", 899, 0.018),
    ("Installation Maintenance and Repair", 943, 0.010),
    ("Production", 735, 0.013),
    ("Transportation and Material Moving", 707, 0.014),
]

BANDS = [(16, 25), (26, 35), (36, 45), (46, 55), (56, 65)]
AGE_INCOME = [0.62, 0.92, 1.08, 1.12, 1.05]
AGE_LAYOFF = [1.6, 1.1, 0.9, 0.85, 0.95]
AGE_DURATION = [0.8, 0.9, 1.0, 1.15, 1.3]
INCOME_QUANTILES = [(0.10, 0.45), (0.25, 0.65), (0.50, 1.00), (0.75, 1.45), (0.90, 2.00), (1.00, 2.80)]
DURATION_QUANTILES = [(0.30, 1), (0.55, 2), (0.75, 4), (0.90, 7), (1.00, 14)]


def main(out: pathlib.Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "occupations.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["occ_id", "occ_title"])
        for k, (title, _, _) in enumerate(OCCUPATIONS):
            w.writerow([k, title])

    with open(out / "income.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["occ_id", "age_lo", "age_hi", "quantile", "weekly_income"])
        for k, (_, median, _) in enumerate(OCCUPATIONS):
            for (lo, hi), age in zip(BANDS, AGE_INCOME):
                for q, mult in INCOME_QUANTILES:
                    w.writerow([k, lo, hi, q, round(median * age * mult, 2)])

    with open(out / "unemployment.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["occ_id", "age_lo", "age_hi", "monthly_layoff_prob", "duration_quantile", "duration_months"])
        for k, (_, _, layoff) in enumerate(OCCUPATIONS):
            for (lo, hi), lf, df in zip(BANDS, AGE_LAYOFF, AGE_DURATION):
                p = round(layoff * lf, 5)
                prev = 0
                for q, months in DURATION_QUANTILES:
                    m = max(prev, max(1, round(months * df)))
                    prev = m
                    w.writerow([k, lo, hi, p, q, m])

    with open(out / "mortality.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["age", "annual_death_prob"])
        for age in range(120):
            p = 1.0 if age == 119 else min(1.0, 0.0005 + 0.00003 * math.exp(0.09 * age))
            w.writerow([age, round(p, 6)])


if __name__ == "__main__":
    main(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/sample"))
