"""Binary linguistic feature inventories, extraction, caching, Jaccard.

Extraction has two routes: an external completion client prompted to emit
a JSON feature dict, and a deterministic rulebook of per-feature
predicates (the offline oracle used for synthetic corpora and for
surface-cue features). Extracted vectors are cached to JSON-lines keyed
by sentence id and fingerprinted against the inventory.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import re
import time
import urllib.request
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Protocol

import numpy as np

from .corpus import SentenceRecord
from .errors import ConfigError, DataError, UsageError

log = logging.getLogger(__name__)

SOURCES = ("llm", "rules", "ground_truth", "zero_fallback")

PROMPT_TEMPLATE = """You are a deterministic feature extractor.

Task: For each feature key, output 1 if the sentence contains an explicit surface cue described by that feature; otherwise, output 0.

Use a recall-oriented policy: if the cue is reasonably present, set 1.
Return VALID JSON ONLY with exactly one top-level key: 'features'.

'features' maps each feature string EXACTLY (copy verbatim) to 0 or 1.

Feature keys: {features}
Sentence: {sentence}"""


@dataclass(frozen=True)
class FeatureInventory:
    """Ordered, unique feature names; order defines vector indexing."""

    names: tuple[str, ...]
    language_tag: str = ""

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def fingerprint(self) -> str:
        payload = "\n".join(self.names) + "\x00" + self.language_tag
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureVector:
    """Bit vector aligned to a FeatureInventory, plus where it came from."""

    bits: np.ndarray
    source: str = "rules"

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise UsageError("feature bits must be one-dimensional")
        if not np.isin(self.bits, (0, 1)).all():
            raise UsageError("feature bits must be 0/1")
        if self.source not in SOURCES:
            raise UsageError(f"unknown feature source {self.source!r}")


def load_inventory(name_or_path: str) -> FeatureInventory:
    """Load an inventory from a bundled name (spanish/arabic) or a file.

    Files hold one feature name per line; a leading ``#lang: tag`` line
    sets the language tag.
    """
    bundled = {"spanish": "features_spanish.txt", "arabic": "features_arabic.txt"}
    if name_or_path in bundled:
        text = resources.files("idlx.data").joinpath(bundled[name_or_path]).read_text("utf-8")
        tag = {"spanish": "es", "arabic": "ar"}[name_or_path]
    else:
        try:
            with open(name_or_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read inventory {name_or_path}: {e}") from e
        tag = ""
    names = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#lang:"):
            tag = line.split(":", 1)[1].strip()
            continue
        if line.startswith("#"):
            continue
        names.append(line)
    if not names:
        raise ConfigError(f"inventory {name_or_path!r} is empty")
    return FeatureInventory(names=tuple(names), language_tag=tag)


def save_inventory(path, inventory: FeatureInventory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if inventory.language_tag:
            fh.write(f"#lang: {inventory.language_tag}\n")
        for name in inventory.names:
            fh.write(name + "\n")


# -- Jaccard ------------------------------------------------------------------


def jaccard(u: FeatureVector, v: FeatureVector) -> float:
    """Intersection over union of the active bits; 0 when both are empty."""
    if u.bits.shape != v.bits.shape:
        raise UsageError(
            f"feature vectors disagree on inventory size: {u.bits.shape} vs {v.bits.shape}"
        )
    union = int(np.logical_or(u.bits, v.bits).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(u.bits, v.bits).sum())
    return inter / union


def jaccard_matrix(bits: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard over the rows of a (B, F) 0/1 matrix."""
    b = np.asarray(bits, dtype=np.float64)
    inter = b @ b.T
    row = b.sum(axis=1)
    union = row[:, None] + row[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)
    return out


# -- LLM extraction -----------------------------------------------------------


class CompletionClient(Protocol):
    """Anything that maps a prompt to a completion string."""

    def complete(self, prompt: str) -> str: ...


def build_prompt(sentence_text: str, inventory: FeatureInventory) -> str:
    return PROMPT_TEMPLATE.format(
        features=json.dumps(list(inventory.names), ensure_ascii=False),
        sentence=sentence_text,
    )


def parse_feature_response(text: str, inventory: FeatureInventory) -> FeatureVector:
    """Parse a completion into a FeatureVector.

    Any response that is not a JSON object with a 'features' mapping falls
    back to the all-zero vector (source=zero_fallback). Individual missing
    or non-binary keys default to 0 with a warning.
    """
    try:
        payload = json.loads(_strip_code_fence(text))
    except (json.JSONDecodeError, TypeError):
        log.warning("unparseable feature response; defaulting every feature to 0")
        return FeatureVector(bits=np.zeros(len(inventory), dtype=np.uint8), source="zero_fallback")
    feats = payload.get("features") if isinstance(payload, dict) else None
    if not isinstance(feats, dict):
        log.warning("feature response lacks a 'features' object; defaulting every feature to 0")
        return FeatureVector(bits=np.zeros(len(inventory), dtype=np.uint8), source="zero_fallback")
    bits = np.zeros(len(inventory), dtype=np.uint8)
    defaulted = []
    for i, name in enumerate(inventory.names):
        value = feats.get(name)
        if value in (0, 1, True, False):
            bits[i] = int(value)
        else:
            defaulted.append(name)
    if defaulted:
        log.warning(
            "%d feature keys missing or non-binary in response, set to 0 (e.g. %r)",
            len(defaulted), defaulted[0],
        )
    return FeatureVector(bits=bits, source="llm")


def _strip_code_fence(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text)
    return text


def extract_llm(
    sentence: SentenceRecord,
    inventory: FeatureInventory,
    client: CompletionClient,
    retries: int = 3,
    backoff: float = 0.5,
) -> FeatureVector:
    """Extract features for one sentence through the completion client.

    Transport failures are retried with exponential backoff; content-level
    failures (refusals, malformed JSON) are not retried and fall back to
    the all-zero vector.
    """
    prompt = build_prompt(sentence.text, inventory)
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            response = client.complete(prompt)
        except Exception as e:  # transport-level failure
            last_error = e
            if attempt < retries:
                time.sleep(backoff * (2**attempt))
            continue
        return parse_feature_response(response, inventory)
    raise DataError(
        f"feature extraction failed for {sentence.id!r} after {retries} retries: {last_error}"
    )


def extract_llm_many(
    sentences,
    inventory: FeatureInventory,
    client: CompletionClient,
    cache: "FeatureCache | None" = None,
    max_in_flight: int = 4,
    retries: int = 3,
    backoff: float = 0.5,
) -> "FeatureCache":
    """Extract features for many sentences with bounded concurrency.

    Sentences already present in ``cache`` are skipped, making long
    extraction runs resumable. Only the caller's thread writes the cache.
    """
    if cache is None:
        cache = FeatureCache(inventory_fingerprint=inventory.fingerprint(), size=len(inventory))
    todo = [s for s in sentences if s.id not in cache]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = {
            pool.submit(extract_llm, s, inventory, client, retries, backoff): s.id for s in todo
        }
        for fut in concurrent.futures.as_completed(futures):
            cache.put(futures[fut], fut.result())
    return cache


class HttpCompletionClient:
    """Minimal JSON-over-HTTP client for a chat-completions style endpoint."""

    def __init__(self, url: str, api_key: str, model: str, timeout: float = 60.0):
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        body = json.dumps(
            {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        ).encode("utf-8")
        req = urllib.request.Request(
            self.url,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self.api_key}",
            },
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        return payload["choices"][0]["message"]["content"]


# -- rule-based extraction ----------------------------------------------------

Rulebook = dict[str, Callable[[str], bool]]


def extract_rules(
    sentence: SentenceRecord, inventory: FeatureInventory, rulebook: Rulebook
) -> FeatureVector:
    """Apply one predicate per feature name; pure and deterministic."""
    missing = [n for n in inventory.names if n not in rulebook]
    if missing:
        raise ConfigError(f"rulebook lacks predicates for: {missing[:5]}")
    bits = np.fromiter(
        (1 if rulebook[name](sentence.text) else 0 for name in inventory.names),
        dtype=np.uint8,
        count=len(inventory),
    )
    return FeatureVector(bits=bits, source="rules")


def extract_rules_many(sentences, inventory: FeatureInventory, rulebook: Rulebook) -> "FeatureCache":
    cache = FeatureCache(inventory_fingerprint=inventory.fingerprint(), size=len(inventory))
    for s in sentences:
        cache.put(s.id, extract_rules(s, inventory, rulebook))
    return cache


def marker_rulebook(inventory: FeatureInventory) -> Rulebook:
    """Exact-match rulebook for synthetic marker tokens (feature name = token)."""
    def has_token(token):
        return lambda text: token in text.split()

    return {name: has_token(name) for name in inventory.names}


def _re_rule(pattern: str) -> Callable[[str], bool]:
    rx = re.compile(pattern, re.IGNORECASE | re.UNICODE)
    return lambda text: rx.search(text) is not None


def _re_rule_cased(pattern: str) -> Callable[[str], bool]:
    rx = re.compile(pattern, re.UNICODE)
    return lambda text: rx.search(text) is not None


def spanish_rulebook() -> Rulebook:
    """Heuristic surface-cue predicates for the bundled Spanish inventory.

    These are best-effort regex approximations of each feature name, meant
    as an offline extractor for experiments without a completion endpoint;
    the syntax-sensitive features (clitic doubling, differential object
    marking) are necessarily rough.
    """
    clitic = r"(me|te|se|le|les|lo|los|la|las|nos|os)"
    rules: Rulebook = {
        "contains explicit subject yo": _re_rule(r"\byo\b"),
        "contains explicit subject tu": _re_rule(r"\bt[uú]\b"),
        "contains explicit subject usted": _re_rule(r"\busted\b"),
        "contains explicit subject vos": _re_rule(r"\bvos\b"),
        "contains explicit subject vosotros or vosotras": _re_rule(r"\bvosotr[oa]s\b"),
        "contains explicit subject ustedes": _re_rule(r"\bustedes\b"),
        "contains explicit subject nosotros or nosotras": _re_rule(r"\bnosotr[oa]s\b"),
        "contains explicit subject ellos or ellas": _re_rule(r"\bell[oa]s\b"),
        "contains 2pl present suffix ais": _re_rule(r"\w{2,}[aá]is\b"),
        "contains 2pl present suffix eis": _re_rule(r"\w{2,}[eé]is\b"),
        "contains 2pl present suffix is": _re_rule(r"\w{2,}ís\b"),
        "contains voseo present suffix as stressed": _re_rule(r"\w{2,}ás\b"),
        "contains voseo present suffix es stressed": _re_rule(r"\w{2,}és\b"),
        "contains voseo imperative form": _re_rule(r"\w{2,}[aáeé](me|te|lo|la|le)?\b(?=\s*!|\s*$)"),
        "contains diminutive suffix ito or ita": _re_rule(r"\w{2,}it[oa]s?\b"),
        "contains diminutive suffix ico or ica": _re_rule(r"\w{2,}ic[oa]s?\b"),
        "contains diminutive suffix in regional": _re_rule(r"\w{2,}ín\b"),
        "contains diminutive suffix ingo or inga": _re_rule(r"\w{2,}ing[oa]s?\b"),
        "contains diminutive suffix icho or icha": _re_rule(r"\w{2,}ich[oa]s?\b"),
        "contains diminutive suffix illo or illa": _re_rule(r"\w{2,}ill[oa]s?\b"),
        "contains diminutive suffix ino or ina": _re_rule(r"\w{2,}in[oa]s?\b"),
        "contains diminutive suffix ete": _re_rule(r"\w{2,}etes?\b"),
        "contains diminutive suffix iquio or iquia": _re_rule(r"\w{2,}iqui[oa]s?\b"),
        "contains differential object marking a before animate direct object": _re_rule(
            r"\ba\s+(mi|tu|su|la|el|los|las|un|una)?\s*\w+"
        ),
        "contains accusative clitic doubling lo a NP": _re_rule(r"\blo\b.*\ba\b"),
        "contains accusative clitic doubling la a NP": _re_rule(r"\bla\b.*\ba\b"),
        "contains accusative clitic doubling los a NP": _re_rule(r"\blos\b.*\ba\b"),
        "contains accusative clitic doubling las a NP": _re_rule(r"\blas\b.*\ba\b"),
        "contains dative clitic doubling le a NP": _re_rule(r"\ble\b.*\ba\b"),
        "contains dative clitic doubling les a NP": _re_rule(r"\bles\b.*\ba\b"),
        "contains preverbal object clitic": _re_rule(clitic + r"\s+\w+(o|as|a|amos|an|es|e|emos|en|imos)\b"),
        "contains enclitic on infinitive": _re_rule(r"\w[aei]r" + clitic + r"\b"),
        "contains enclitic on gerund": _re_rule(r"\w[aáeéií]ndo" + clitic + r"\b"),
        "contains multiple clitics in sequence": _re_rule(r"\b(me|te|se|nos|os)\s*" + clitic + r"\s+\w+"),
        "contains se plus object clitic": _re_rule(r"\bse\s+(me|te|le|les|lo|los|la|las)\b"),
        "contains strong pronoun object doubling": _re_rule(r"\ba\s+(m[ií]|ti|[eé]l|ella|usted|nosotros|ustedes|ellos|ellas)\b"),
        "contains indirect object strong pronoun doubling": _re_rule(r"\b(me|te|le|nos|les)\b.*\ba\s+(m[ií]|ti|[eé]l|ella|usted|nosotros|ustedes|ellos|ellas)\b"),
        "contains inverted question mark": _re_rule_cased(r"¿"),
        "contains inverted exclamation mark": _re_rule_cased(r"¡"),
        "contains all caps word": _re_rule_cased(r"\b[A-ZÁÉÍÓÚÑÜ]{2,}\b"),
        "contains repeated punctuation": _re_rule_cased(r"([!?.,])\1+"),
    }
    return rules


# -- cache --------------------------------------------------------------------


class FeatureCache:
    """Sentence id -> FeatureVector store with an inventory fingerprint."""

    def __init__(self, inventory_fingerprint: str, size: int):
        self.inventory_fingerprint = inventory_fingerprint
        self.size = int(size)
        self._vectors: dict[str, FeatureVector] = {}

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def ids(self) -> list[str]:
        return list(self._vectors)

    def put(self, sentence_id: str, vector: FeatureVector) -> None:
        if vector.bits.shape[0] != self.size:
            raise UsageError(
                f"vector length {vector.bits.shape[0]} does not match cache size {self.size}"
            )
        self._vectors[sentence_id] = vector

    def get(self, sentence_id: str) -> FeatureVector:
        try:
            return self._vectors[sentence_id]
        except KeyError:
            raise DataError(f"no cached features for sentence {sentence_id!r}") from None

    def bits_for(self, sentence_ids) -> np.ndarray:
        """(B, F) matrix for the given ids; missing ids raise DataError."""
        return np.stack([self.get(sid).bits for sid in sentence_ids]).astype(np.uint8)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"inventory_fingerprint": self.inventory_fingerprint, "size": self.size})
                + "\n"
            )
            for sid, vec in self._vectors.items():
                row = {"id": sid, "bits": [int(b) for b in vec.bits], "source": vec.source}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, expected_inventory: FeatureInventory | None = None) -> "FeatureCache":
        try:
            fh = open(path, "r", encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot read feature cache {path}: {e}") from e
        with fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line)
                fingerprint = header["inventory_fingerprint"]
                size = int(header["size"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"feature cache {path} has an invalid header") from e
            if expected_inventory is not None and fingerprint != expected_inventory.fingerprint():
                raise DataError(
                    f"feature cache {path} fingerprint {fingerprint} does not match "
                    f"inventory fingerprint {expected_inventory.fingerprint()}"
                )
            cache = cls(inventory_fingerprint=fingerprint, size=size)
            for lineno, line in enumerate(fh, 2):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    cache.put(row["id"], FeatureVector(bits=row["bits"], source=row["source"]))
                except (json.JSONDecodeError, KeyError, UsageError) as e:
                    raise DataError(f"{path}:{lineno}: bad cache row ({e})") from e
        return cache
