import json

import pytest

from scimetrics.corpus import (
    CorpusError,
    Role,
    build_citation_index,
    load_corpus,
    validate,
    write_corpus,
)

from conftest import make_corpus, paper, team, write_jsonl


def _paper_json(pid, year=2000, refs=(), kws=("k1",), **kw):
    return {"paper_id": pid, "year": year, "field_id": "F0", "keywords": list(kws), "references": list(refs), **kw}


def _auth_json(pid, aid, pos, role="lead", corr=False):
    return {"paper_id": pid, "author_id": aid, "position": pos, "is_corresponding": corr, "role": role}


@pytest.fixture
def files(tmp_path):
    def _files(papers, auths):
        return write_jsonl(tmp_path / "papers.jsonl", papers), write_jsonl(tmp_path / "authorships.jsonl", auths)

    return _files


def test_load_counts(files):
    p, a = files(
        [_paper_json("P1"), _paper_json("P2", refs=["P1"]), _paper_json("P3", refs=["P1", "P2"], is_funded=True, grant_count=2, grant_amount=5e5)],
        [
            _auth_json("P1", "A", 1),
            _auth_json("P2", "A", 1),
            _auth_json("P2", "B", 2, "support", True),
            _auth_json("P3", "B", 1),
            _auth_json("P3", "C", 2, "support"),
        ],
    )
    c = load_corpus(p, a)
    assert len(c) == 3 and len(c.authorships) == 5
    assert c.papers["P3"].grant_count == 2
    assert [x.author_id for x in c.team("P2")] == ["A", "B"]
    assert c.team("P2")[1].role is Role.SUPPORT and c.team("P2")[1].is_corresponding


def test_empty_files(files):
    c = load_corpus(*files([], []))
    assert len(c) == 0 and validate(c).n_anomalies == 0


def test_unknown_paper_in_authorship(files):
    p, a = files([_paper_json("P1")], [_auth_json("P1", "A", 1), _auth_json("P9", "A", 1)])
    with pytest.raises(CorpusError, match="P9"):
        load_corpus(p, a)


def test_malformed_line_reports_line_number(files):
    p, a = files([_paper_json("P1"), "{not json"], [])
    with pytest.raises(CorpusError, match=r":2:"):
        load_corpus(p, a)


def test_duplicate_paper_id(files):
    p, a = files([_paper_json("P1"), _paper_json("P1")], [])
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(p, a)


@pytest.mark.parametrize(
    "auths, msg",
    [
        ([_auth_json("P1", "A", 1), _auth_json("P1", "B", 3, "support")], "contiguous"),
        ([_auth_json("P1", "A", 1, "support")], "no lead"),
        ([_auth_json("P1", "A", 1), _auth_json("P1", "A", 2)], "duplicate authorship"),
        ([_auth_json("P1", "A", 1, "boss")], "role"),
    ],
)
def test_team_invariants(files, auths, msg):
    with pytest.raises(CorpusError, match=msg):
        load_corpus(*files([_paper_json("P1")], auths))


def test_unfunded_with_grants_rejected(files):
    with pytest.raises(CorpusError, match="grant"):
        load_corpus(*files([_paper_json("P1", grant_count=1)], []))


def test_year_bounds(files):
    with pytest.raises(CorpusError, match="outside"):
        load_corpus(*files([_paper_json("P1", year=1500)], []))


def test_unknown_keys_ignored_and_funding_defaults(files):
    row = {"paper_id": "P1", "year": 2001, "field_id": "F", "keywords": [], "references": [], "title": "x"}
    c = load_corpus(*files([row], []))
    p = c.papers["P1"]
    assert (p.is_funded, p.grant_count, p.grant_amount) == (False, 0, 0.0)


def test_round_trip(tmp_path):
    c = make_corpus(
        [paper("P1", 1990), paper("P2", 1995, refs=["P1", "ZZ"], is_funded=True, grant_count=1, grant_amount=12.5)],
        team("P1", "LS") + team("P2", "L"),
    )
    write_corpus(c, tmp_path / "p.jsonl", tmp_path / "a.jsonl")
    assert load_corpus(tmp_path / "p.jsonl", tmp_path / "a.jsonl") == c


def test_citation_index_single_edge():
    c = make_corpus([paper("A", 2001, refs=["B"]), paper("B", 2000)])
    idx = build_citation_index(c)
    assert idx.citers("B") == {"A"}
    assert idx.cites["A"] == {"B"}
    assert idx.cited_by["B"] == {("A", 2001)}


def test_citation_index_empty():
    idx = build_citation_index(make_corpus([paper("A"), paper("B")]))
    assert dict(idx.cites) == {} and dict(idx.cited_by) == {}


def test_missing_reference_dropped():
    idx = build_citation_index(make_corpus([paper("A", refs=["Z"])]))
    assert idx.dropped_references == 1 and "A" not in idx.cites


def test_transpose_and_edge_count():
    c = make_corpus(
        [
            paper("A", 1990),
            paper("B", 1991, refs=["A"]),
            paper("C", 1992, refs=["A", "B", "X"]),
            paper("D", 1993, refs=["C", "B"]),
        ]
    )
    idx = build_citation_index(c)
    for p, refs in idx.cites.items():
        for q in refs:
            assert p in idx.citers(q)
    for q, citers in idx.cited_by.items():
        for p, year in citers:
            assert q in idx.cites[p] and year == c.papers[p].year
    kept = sum(len(p.references & set(c.papers)) for p in c.papers.values())
    assert idx.n_edges == kept == 5


def test_validate_clean():
    c = make_corpus([paper("A", 1990), paper("B", 1991, refs=["A"])], team("A", "L") + team("B", "L"))
    assert validate(c).n_anomalies == 0


def test_validate_self_citation(files):
    c = load_corpus(*files([_paper_json("P1", refs=["P1"])], [_auth_json("P1", "A", 1)]))
    report = validate(c)
    assert report.self_citations_removed == 1
    assert "P1" not in c.papers["P1"].references


def test_validate_anomalies():
    c = make_corpus([paper("A", 2000, refs=["B"], kws=()), paper("B", 2005)], team("B", "L"))
    r = validate(c)
    assert r.zero_keyword_papers == 1
    assert r.zero_author_papers == 1
    assert r.year_order_anomalies == 1


def test_corrupt_types(files):
    bad = _paper_json("P1")
    bad["year"] = "2000"
    with pytest.raises(CorpusError, match="year"):
        load_corpus(*files([bad], []))
    bad = _paper_json("P1")
    bad["year"] = True
    with pytest.raises(CorpusError):
        load_corpus(*files([bad], []))
    with pytest.raises(CorpusError, match="object"):
        load_corpus(*files([json.dumps([1, 2])], []))
