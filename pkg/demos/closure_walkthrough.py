"""
Selecting evidence relations by closure
=======================================

Relations are parsed from raw model output, then only the evidence
relations reachable from the claim's entities are kept.
"""

from zefav import Origin, closure_stats, find_evidence_relations, parse_triples

claim_output = "### Response: (Marie Curie, place of birth, Poland)"
evidence_output = """
(Marie Curie, place of birth, Warsaw)
(Warsaw, capital of, Poland)
(Berlin, capital of, Germany)
("Washington, D.C.", capital of, United States)
(garbage with one comma, only)
"""

claim_rels, _ = parse_triples(claim_output, Origin.CLAIM)
evidence_rels, warnings = parse_triples(evidence_output, Origin.EVIDENCE)
for w in warnings:
    print("parser warning:", w.reason, repr(w.fragment))

result = find_evidence_relations(claim_rels, evidence_rels)
print("entities reached:", sorted(result.hypos))
for rel in result.evidence_rels_new:
    print("kept   ", rel.render())

stats = closure_stats(result, evidence_rels)
print(f"kept {stats.kept}, dropped {stats.dropped}, passes {stats.rounds}")

# expanding through tails as well reaches more of the graph
wide = find_evidence_relations(claim_rels, evidence_rels, symmetric=True)
print("symmetric keeps", len(wide.evidence_rels_new))
