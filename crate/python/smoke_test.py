"""Smoke test for the betaforge extension module.

    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import betaforge as bf

SCHEMA = Path(__file__).resolve().parent.parent / "crates/core/schema/catalog.schema.json"


def main():
    s = bf.Seed.encode([0, 57])
    assert s.bit_string() == "000000 111001", s.bit_string()
    assert s.decode(58) == [0, 57]
    assert bf.Seed([63]).decode(58) == [5]
    assert bf.Seed.parse(str(s)) == s
    for k in (1, 2, 3):
        n = s.neighbors(k)
        assert len(n) == math.comb(12, k) == bf.binomial(12, k)
        assert all(s.hamming(x) == k for x in n)

    raw = bf.Catalog.standard()
    backend = bf.SimBackend(raw, bf.standard_manifest())
    cat = raw.cleaned(backend)
    cfg = json.loads(bf.standard_config())
    print(f"{len(cat)} specs in {cat.class_count()} classes")
    try:
        import jsonschema
    except ImportError:
        print("jsonschema missing; schema check skipped")
    else:
        jsonschema.validate(json.loads(raw.to_json()), json.loads(SCHEMA.read_text()))

    a = bf.run_campaign(cat, backend, json.dumps(cfg))
    b = bf.run_campaign(cat, backend, json.dumps(cfg))
    assert a.findings_json() == b.findings_json()
    print(f"{len(a)} findings, {a.backend_invocations} invocations, stop: {a.stop_reason}")
    assert len(a) == 12, a.finding_classes()
    assert ["RDRAND", "I286PROTECTED", "I286PROTECTED"] in a.finding_classes()

    v = json.loads(a.verify(cat, backend, json.dumps(cfg)))
    assert v and all(x["covert"]["accuracy"] >= 0.99 for x in v)
    with tempfile.TemporaryDirectory() as d:
        files = a.render(d, json.dumps(v))
        names = sorted(Path(f).name for f in files)
        assert names == ["channels.csv", "findings.json", "report.json", "summary.txt", "verification.json"], names

    try:
        bf.run_campaign(cat, backend, json.dumps({"max_slotz": 1}))
    except ValueError as e:
        print(f"rejected bad config: {e}")
    else:
        raise AssertionError("bad config accepted")
    print("ok")


if __name__ == "__main__":
    sys.exit(main())
