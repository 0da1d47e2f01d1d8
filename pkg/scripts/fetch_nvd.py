#!/usr/bin/env python3
"""Download NVD CVE data for `banditmtd ingest`.

Uses the NVD 2.0 REST API and writes one JSON page per file, e.g.

    python scripts/fetch_nvd.py --out feeds/ --start 2019-01-01 --end 2019-03-31
    banditmtd ingest --feeds feeds/ --out pool.csv

The API caps a publication-date window at 120 days and rate-limits clients
without a key (set NVD_API_KEY to raise the limit).
"""

import argparse
import datetime as dt
import json
import os
import sys
import time
import urllib.parse
import urllib.request
from pathlib import Path

API = "https://services.nvd.nist.gov/rest/json/cves/2.0"
PAGE = 2000


def fetch_page(start: str, end: str, index: int, key: str | None) -> dict:
    q = urllib.parse.urlencode({
        "pubStartDate": f"{start}T00:00:00.000", "pubEndDate": f"{end}T23:59:59.999",
        "startIndex": index, "resultsPerPage": PAGE,
    })
    req = urllib.request.Request(f"{API}?{q}", headers={"apiKey": key} if key else {})
    with urllib.request.urlopen(req, timeout=60) as resp:
        return json.load(resp)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--start", required=True, help="first publication date, YYYY-MM-DD")
    p.add_argument("--end", required=True, help="last publication date, YYYY-MM-DD (window <= 120 days)")
    args = p.parse_args(argv)
    if (dt.date.fromisoformat(args.end) - dt.date.fromisoformat(args.start)).days > 120:
        p.error("the NVD API accepts at most 120 days per query")
    key = os.environ.get("NVD_API_KEY")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index, total = 0, None
    while total is None or index < total:
        doc = fetch_page(args.start, args.end, index, key)
        total = doc["totalResults"]
        path = out / f"nvd-{args.start}-{args.end}-{index:06d}.json"
        path.write_text(json.dumps(doc))
        print(f"{path}: {len(doc['vulnerabilities'])} entries ({index + len(doc['vulnerabilities'])}/{total})")
        index += PAGE
        time.sleep(1 if key else 6)
    return 0


if __name__ == "__main__":
    sys.exit(main())
