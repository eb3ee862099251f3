"""Binary feature extraction: the prompt protocol, the fallback rules,
and the resumable cache.

The completion-endpoint route is shown with a canned client so the demo
runs offline; swap in HttpCompletionClient (IDLX_API_URL / IDLX_API_KEY)
for a real endpoint. The rulebook route is a deterministic offline
extractor: exact for synthetic marker tokens, best-effort surface-cue
regexes for the bundled Spanish inventory.
"""

import json

from idlx.corpus import SentenceRecord
from idlx.features import (
    FeatureCache,
    build_prompt,
    extract_llm,
    extract_llm_many,
    extract_rules,
    jaccard,
    load_inventory,
    spanish_rulebook,
)

inventory = load_inventory("spanish")
print(f"bundled Spanish inventory: {len(inventory)} features, tag {inventory.language_tag!r}, "
      f"fingerprint {inventory.fingerprint()}")
print("first five names:", list(inventory.names[:5]))


def sent(sid, text):
    return SentenceRecord(id=sid, text=text, author_id="a0", comment_id="m0", community_id="ar")


examples = [
    sent("s0", "¿Vos sabés que el partido arranca AHORA?"),
    sent("s1", "¿vos querés tomar unos matecitos después?"),
    sent("s2", "nothing dialectal about this sentence at all"),
]

# the prompt an endpoint would receive
prompt = build_prompt(examples[0].text, inventory)
print("\nprompt head:")
print("\n".join(prompt.splitlines()[:4]))

# a canned client standing in for the endpoint: one well-formed response,
# then a refusal (which falls back to the all-zero vector)
class CannedClient:
    def __init__(self, responses):
        self.responses = list(responses)

    def complete(self, prompt):
        return self.responses.pop(0)


marked = {"contains inverted question mark", "contains explicit subject vos",
          "contains all caps word"}
good = json.dumps({"features": {name: int(name in marked) for name in inventory.names}})
client = CannedClient([good, "I cannot help with that."])

vec = extract_llm(examples[0], inventory, client)
active = [inventory.names[i] for i in vec.bits.nonzero()[0]]
print(f"\nendpoint route, parsed response -> source={vec.source}, active={active}")

vec = extract_llm(examples[1], inventory, client)
print(f"endpoint route, refusal       -> source={vec.source}, bits sum={int(vec.bits.sum())}")

# the offline rulebook route
rules = spanish_rulebook()
print("\nrulebook route:")
for record in examples:
    vec = extract_rules(record, inventory, rules)
    active = [inventory.names[i] for i in vec.bits.nonzero()[0]]
    print(f"  {record.text!r}\n    -> {active if active else '(no surface cues)'}")

# Jaccard similarity between extracted vectors drives the contrastive weights
v0 = extract_rules(examples[0], inventory, rules)
v1 = extract_rules(examples[1], inventory, rules)
v2 = extract_rules(examples[2], inventory, rules)
print(f"\njaccard(voseo question, voseo answer) = {jaccard(v0, v1):.3f}")
print(f"jaccard(voseo question, plain text)   = {jaccard(v0, v2):.3f}")

# extraction is resumable through the cache: ids already present are skipped
cache = FeatureCache(inventory.fingerprint(), len(inventory))
cache.put("s0", v0)
client = CannedClient([good, good])  # only two completions available
cache = extract_llm_many(examples, inventory, client, cache=cache, max_in_flight=2)
print(f"\ncache after resumable batch extraction: {len(cache)} entries "
      f"(1 preexisting + 2 fetched)")
