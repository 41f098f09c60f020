#!/usr/bin/env python3
"""Regenerates the offline fixture corpus under fixtures/.

Writes three weekly report CSVs (with the usual conversion debris, rejects and
one revised row), the geocode/timezone/weather responses the offline provider
serves for them, and golden files computed here rather than by the crate:
the expected clean records and the rows whose weather is missing.

Usage: python3 scripts/gen_fixtures.py [fixtures_dir]
"""

import csv
import io
import json
import random
import sys
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

COUNTRIES = [
    # name, raw spelling in the reports, lat, lon, zone, population (thousands)
    ("Brazil", "Brazil (2)", -15.7801, -47.9292, "America/Sao_Paulo", 204451),
    ("Colombia", "Colombia(1)", 4.5709, -74.2973, "America/Bogota", 48229),
    ("Cuba", "Cuba^", 21.5218, -77.7812, "America/Havana", 11239),
    ("Dominican Republic", "Dominican Republic #", 18.7357, -70.1627, "America/Santo_Domingo", 10528),
    ("Honduras", "Hondurasg", 15.2, -86.2419, "America/Tegucigalpa", 8075),
    ("Jamaica", "Jamaica*", 18.1096, -77.2975, "America/Jamaica", 2793),
    ("Mexico", "Mexico (^)", 23.6345, -102.5528, "America/Mexico_City", 127017),
    ("Peru", "Peru?", -9.19, -75.0152, "America/Lima", 31377),
    ("Puerto Rico", "Puerto Rico $", 18.2208, -66.5901, "America/Puerto_Rico", 3548),
    ("Venezuela", "Venezuela&", 6.4238, -66.5897, "America/Caracas", 31108),
]

# (year, week) per country, five each; every file name sorts in this order
WEEKS = {
    "Brazil": [(2014, 43), (2015, 9), (2015, 44), (2016, 12), (2017, 3)],
    "Colombia": [(2014, 50), (2015, 17), (2015, 30), (2016, 6), (2017, 11)],
    "Cuba": [(2014, 36), (2015, 20), (2015, 45), (2016, 22), (2017, 8)],
    "Dominican Republic": [(2014, 27), (2014, 40), (2015, 2), (2016, 33), (2017, 14)],
    "Honduras": [(2014, 52), (2015, 26), (2016, 1), (2016, 40), (2017, 20)],
    "Jamaica": [(2014, 38), (2015, 6), (2015, 53), (2016, 18), (2017, 25)],
    "Mexico": [(2014, 46), (2015, 14), (2015, 36), (2016, 44), (2017, 30)],
    "Peru": [(2014, 33), (2015, 10), (2015, 41), (2016, 27), (2017, 5)],
    "Puerto Rico": [(2014, 29), (2015, 4), (2016, 9), (2016, 51), (2017, 16)],
    "Venezuela": [(2014, 44), (2015, 23), (2016, 5), (2016, 37), (2017, 2)],
}

# rows served a weather response without observations
WEATHER_GAPS = {("Peru", 2015, 10), ("Venezuela", 2016, 5)}

SUMMARIES = ["Clear", "Partly Cloudy", "Mostly Cloudy", "Humid and Mostly Cloudy", "Light Rain", "Overcast"]

HEADER = [
    "Country",
    "Epidemiological Weeks",
    "Suspected Cases",
    "Confirmed Cases",
    "Imported Cases",
    "Deaths",
    "Incidence Rate",
    "Population X 1000",
    "Year",
]

FILES = {
    "2014": "chik_a_2014.csv",
    "2015": "chik_b_2015.csv",
    "2016": "chik_c_2016_2017.csv",
    "2017": "chik_c_2016_2017.csv",
}


def coord(v):
    return f"{v:.4f}"


def utc_monday(year, week):
    d = date.fromisocalendar(year, week, 1)
    return d, int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def local_midnight(d, zone):
    """First existing local minute of day d (earliest instant if ambiguous)."""
    tz = ZoneInfo(zone)
    naive = datetime(d.year, d.month, d.day)
    for m in range(24 * 60):
        cand = naive + timedelta(minutes=m)
        aware = cand.replace(tzinfo=tz, fold=0)
        back = aware.astimezone(timezone.utc).astimezone(tz).replace(tzinfo=None)
        if back == cand:
            return int(aware.timestamp())
    raise ValueError(f"no valid minute on {d} in {zone}")


def weather(rng):
    temp = round(rng.uniform(62.0, 92.0), 2)
    return {
        "time": None,
        "summary": rng.choice(SUMMARIES),
        "temperature": temp,
        "dewPoint": round(temp - rng.uniform(2.0, 18.0), 2),
        "humidity": round(rng.uniform(0.45, 0.95), 2),
        "pressure": round(rng.uniform(1002.0, 1022.0), 2),
        "windSpeed": round(rng.uniform(0.5, 14.0), 2),
    }


def dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures"
    rng = random.Random(20161)
    rows_by_file = {}
    records = {}

    for name, raw, lat, lon, zone, pop in COUNTRIES:
        dump(
            root / "geocode" / f"{name.lower().replace(' ', '-')}.json",
            {
                "results": [{"formatted_address": name, "geometry": {"location": {"lat": lat, "lng": lon}}}],
                "status": "OK",
            },
        )
        for i, (year, week) in enumerate(WEEKS[name]):
            d, utc_ts = utc_monday(year, week)
            stem = f"{coord(lat)}_{coord(lon)}"
            dump(
                root / "timezone" / f"{stem}_{utc_ts}.json",
                {"status": "OK", "timeZoneId": zone},
            )
            local_ts = local_midnight(d, zone)
            obs = weather(rng)
            obs["time"] = local_ts
            if (name, year, week) in WEATHER_GAPS:
                body = {"latitude": lat, "longitude": lon, "timezone": zone, "offset": 0}
            else:
                body = {"latitude": lat, "longitude": lon, "timezone": zone, "currently": obs}
            dump(root / "weather" / f"{stem}_{local_ts}.json", body)

            suspected = rng.randint(5, 4000)
            confirmed = rng.randint(0, suspected // 3)
            imported = rng.randint(0, 5) if i % 4 != 3 else None
            deaths = rng.randint(0, 3) if i % 3 != 2 else None
            # loosely tied to the weather so the model has something to find
            incidence = round(
                max(0.01, 0.05 * (obs["temperature"] - 60) + 4 * (obs["humidity"] - 0.4) + rng.uniform(0, 1.5)), 2
            )
            week_raw = [f"Week {week}", f"WEEK{week}", f"{week}", f"Week{week}", f" {week} "][i]
            pop_raw = f"{pop:,}" if i % 2 == 0 else str(pop)
            row = [
                raw if i % 2 == 0 else name,
                week_raw,
                f"{suspected:,}",
                str(confirmed),
                "" if imported is None else str(imported),
                "" if deaths is None else str(deaths),
                f"{incidence:.2f}",
                pop_raw,
                str(year),
            ]
            rows_by_file.setdefault(FILES[str(year)], []).append(row)
            records[(name, year, week)] = {
                "country": name,
                "year": year,
                "week": week,
                "suspected": suspected,
                "confirmed": confirmed,
                "imported": imported,
                "deaths": deaths,
                "incidence_rate": float(f"{incidence:.2f}"),
                "population_k": pop,
            }

    # an early figure for Cuba 2015 W20 in the 2014 file, revised in a later file
    stale = ["Cuba", "Week 20", "1", "0", "", "", "0.01", "11,239", "2015"]
    rows_by_file["chik_a_2014.csv"].append(stale)
    noise = {
        "chik_a_2014.csv": [
            ["Aruba", "Week 30", "12", "", "0", "0", "0.11", "103", "2014"],  # no confirmed count
            ["()", "Week 31", "3", "1", "0", "0", "0.02", "50", "2014"],  # nothing left of the name
        ],
        "chik_b_2015.csv": [
            ["Guyana", "Week 60", "40", "4", "0", "0", "0.50", "767", "2015"],  # week 60
            ["Belize", "Week 12", "n/a", "2", "0", "0", "0.30", "359", "2015"],  # unparseable count
        ],
        "chik_c_2016_2017.csv": [
            ["Bolivia", "", "80", "9", "1", "0", "0.74", "10725", "2016"],  # no week
            ["Panama", "Week 19", "31", "4", "0", "0", "0.77", "3929", "2012"],  # year out of range
        ],
    }

    for file_name in sorted(rows_by_file):
        rows = sorted(rows_by_file[file_name], key=lambda r: (int(r[8]), r[0]))
        for k, bad in enumerate(noise[file_name]):
            rows.insert(3 + 4 * k, bad)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        lines = [
            ["Number of reported cases of chikungunya fever in the Americas, by country or territory"],
            [],
            HEADER,
        ]
        for k, r in enumerate(rows):
            if k == 12:
                lines.append(["Caribbean"])
            lines.append(r)
        lines.append([])
        lines.append(["Source: country reports to the regional surveillance office"])
        for r in lines:
            w.writerow(r)
        out = root / "reports" / file_name
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(buf.getvalue())
        # one physical line per row, so positions are list indices
        for line_no, r in enumerate(lines, start=1):
            if len(r) == len(HEADER) and r is not HEADER:
                key = golden_key(r, records)
                if key is None:
                    continue
                prev = records[key].get("source_file"), records[key].get("source_line")
                pos = (file_name, line_no)
                if prev == (None, None) or pos > prev:
                    records[key]["source_file"], records[key]["source_line"] = pos
                    if r is stale:
                        records[key]["_stale"] = True
                    else:
                        records[key].pop("_stale", None)

    golden = root / "golden"
    golden.mkdir(parents=True, exist_ok=True)
    with open(golden / "clean.jsonl", "w") as f:
        for key in sorted(records):
            rec = dict(records[key])
            assert not rec.pop("_stale", False), key
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(golden / "weather_gaps.csv", "w") as f:
        f.write("country,year,week\n")
        for c, y, wk in sorted(WEATHER_GAPS):
            f.write(f"{c},{y},{wk}\n")


def golden_key(row, records):
    """Key of a data row as the design intends it (None for reject rows)."""
    names = {raw: name for name, raw, *_ in COUNTRIES}
    names.update({name: name for name, *_ in COUNTRIES})
    name = names.get(row[0])
    if name is None:
        return None
    digits = "".join(ch for ch in row[1] if ch.isdigit())
    key = (name, int(row[8]), int(digits))
    return key if key in records else None


if __name__ == "__main__":
    main()
