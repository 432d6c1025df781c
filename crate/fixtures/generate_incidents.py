"""Writes the synthetic incident fixture used by tests and the example run.

Deterministic: rerunning produces a byte-identical incidents_10k.csv.
"""

import csv
import datetime as dt
import random

ROWS = 10_000
SEED = 20200101
CITIES = {"nyc": 1.5, "boston": 1.0, "chicago": 1.2, "seattle": 1.0, "austin": 1.0}
FIRST = dt.date(2018, 5, 1)
LAST = dt.date(2020, 3, 31)

# (offense description, law category, agency description, weight)
DESCRIPTORS = [
    ("ROBBERY", "FELONY", "ROBBERY,OPEN AREA UNCLASSIFIED", 6),
    ("ROBBERY", "FELONY", "ROBBERY,PERSONAL ELECTRONIC DEVICE", 3),
    ("FELONY ASSAULT", "FELONY", "ASSAULT 2,1,UNCLASSIFIED", 12),
    ("ASSAULT 3 & RELATED OFFENSES", "MISDEMEANOR", "ASSAULT 3", 24),
    ("HARRASSMENT 2", "VIOLATION", "HARASSMENT,SUBD 3,4,5", 10),
    ("BURGLARY", "FELONY", "BURGLARY,TRUCK DAY", 2),
    ("BURGLARY", "FELONY", "BURGLARY,RESIDENCE,NIGHT", 4),
    ("PETIT LARCENY", "MISDEMEANOR", "LARCENY,PETIT BY CHECK USE", 3),
    ("PETIT LARCENY", "MISDEMEANOR", "LARCENY,PETIT FROM STORE-SHOPL", 30),
    ("GRAND LARCENY", "FELONY", "LARCENY,GRAND FROM PERSON,UNCL", 16),
    ("GRAND LARCENY OF MOTOR VEHICLE", "FELONY", "LARCENY,GRAND OF AUTO", 3),
    ("DANGEROUS DRUGS", "FELONY", "CONTROLLED SUBSTANCE, SALE 4", 3),
    ("DANGEROUS DRUGS", "MISDEMEANOR", "CONTROLLED SUBSTANCE, POSSESSI", 5),
    ("CRIMINAL MISCHIEF & RELATED OF", "MISDEMEANOR", "CRIMINAL MISCHIEF 4TH, GRAFFIT", 6),
    ("OFFENSES INVOLVING FRAUD", "MISDEMEANOR", "FRAUD,UNCLASSIFIED-MISDEMEANOR", 2),
    ("FORGERY", "FELONY", "FORGERY,ETC.,UNCLASSIFIED-FELO", 2),
    ("ARSON", "FELONY", "ARSON 2,3,4", 1),
    ("GAMBLING", "MISDEMEANOR", "GAMBLING 2,PROMOTING,UNCLASSIF", 1),
    ("RAPE", "FELONY", "RAPE 1", 1),
    ("MURDER & NON-NEGL. MANSLAUGHTER", "FELONY", "", 1),
    ("VEHICLE AND TRAFFIC LAWS", "MISDEMEANOR", "TRAFFIC,UNCLASSIFIED MISDEMEAN", 3),
    ("INTOXICATED & IMPAIRED DRIVING", "MISDEMEANOR", "INTOXICATED DRIVING,ALCOHOL", 2),
    ("ADMINISTRATIVE CODE", "VIOLATION", "ADM.CODE,UNCLASSIFIED VIOLATIO", 1),
]

BAD_DATES = ["13/45/2019", "2019-02-30", "not a date", ""]


def main() -> None:
    rng = random.Random(SEED)
    cities = list(CITIES)
    city_w = list(CITIES.values())
    desc_w = [d[3] for d in DESCRIPTORS]
    span = (LAST - FIRST).days
    with open("incidents_10k.csv", "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(["complaint_id", "city", "report_date", "ofns_desc", "law_cat_cd", "pd_desc"])
        for i in range(ROWS):
            city = rng.choices(cities, city_w)[0]
            ofns, law, pd, _ = rng.choices(DESCRIPTORS, desc_w)[0]
            day = FIRST + dt.timedelta(days=rng.randrange(span + 1))
            date = f"{day.isoformat()}T{rng.randrange(24):02d}:{rng.randrange(60):02d}:00"
            roll = rng.random()
            if roll < 0.004:
                date = rng.choice(BAD_DATES)
            elif roll < 0.006:
                city = ""
            out.writerow([f"C{i + 1:06d}", city, date, ofns, law, pd])


if __name__ == "__main__":
    main()
