import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethovlm.core import BehaviorLabel
from ethovlm.labelparser import SYNONYMS, Repair, canonical_format, normalize_label, parse_label_vector

F, FL, EG, U = (BehaviorLabel.FREEZING, BehaviorLabel.FLEEING, BehaviorLabel.EXPLORING_GROOMING,
                BehaviorLabel.UNKNOWN)


def brute_force_scan(text):
    """Reference scanner: walk every offset, try each surface form longest-first."""
    forms = sorted((k for k in SYNONYMS if k != "unknown"), key=len, reverse=True)

    def is_letter(c):
        return c.isascii() and c.isalpha()

    found, i = [], 0
    while i < len(text):
        if i == 0 or not is_letter(text[i - 1]):
            for form in forms:
                chunk = text[i:i + len(form)]
                after = text[i + len(form)] if i + len(form) < len(text) else ""
                if (len(chunk) == len(form) and all(a.isascii() and a.lower() == b for a, b in zip(chunk, form))
                        and not is_letter(after)):
                    found.append(SYNONYMS[form])
                    i += len(form)
                    break
            else:
                i += 1
        else:
            i += 1
    return found


@pytest.mark.parametrize("token,label", [
    ("Exploring/Grooming", EG),
    ("  FREEZING ", F),
    ("sleeping", U),
    ("exploring", EG),
    ("grooming", EG),
    ("exploring/grooming", EG),
    ("Grooming/Exploring", EG),
    ("'Fleeing'", FL),
    ("Unknown", U),
    ("", U),
])
def test_normalize_label(token, label):
    assert normalize_label(token) is label


def test_parse_clean_single():
    out = parse_label_vector("[Freezing]", 1)
    assert out.labels == (F,)
    assert out.clean


def test_parse_truncates():
    out = parse_label_vector("[freezing, fleeing]", 1)
    assert out.labels == (F,)
    assert out.repairs == (Repair("Truncated", 1),)


def test_parse_prose_synonym():
    out = parse_label_vector("The mouse is exploring the arena.", 1)
    assert out.labels == (EG,)
    assert [r.kind for r in out.repairs] == ["SynonymMapped"]


def test_parse_prose_matches_brute_force_scanner():
    texts = [
        "The mouse is exploring the arena.",
        "It starts freezing, then FLEEING; later grooming/exploring and Exploring/Grooming.",
        "defreezing unfleeing exploringly",  # embedded words are not labels
        "freeze-frame: frozen! flee?",
        "",
    ]
    for text in texts:
        assert list(parse_label_vector(text, 50).labels[: len(brute_force_scan(text))]) == brute_force_scan(text)


@settings(max_examples=300)
@given(st.text(alphabet=st.sampled_from(list("freezingFLEEINGexplorgm/ ,.-xK\u212a\u0130\u017f")), max_size=80))
def test_prose_scan_property(text):
    expected = brute_force_scan(text)
    out = parse_label_vector(text.replace("[", "").replace("]", ""), max(1, len(expected)))
    if expected:
        assert list(out.labels) == expected


def test_parse_last_bracket_wins():
    text = "Examples: [Exploring/Grooming] [Freezing] [Fleeing]. Answer: [Freezing]"
    assert parse_label_vector(text, 1).labels == (F,)


def test_parse_ignores_empty_answer_cue():
    assert parse_label_vector("[Fleeing] -> [ ]", 1).labels == (FL,)


def test_parse_pads_shortfall():
    out = parse_label_vector("[Freezing, Fleeing]", 4)
    assert out.labels == (F, FL, U, U)
    assert out.repairs == (Repair("PaddedUnknown", 2),)


def test_parse_garbage_worst_case():
    out = parse_label_vector("sure! the mouse seems calm", 3)
    assert out.labels == (U, U, U)
    assert out.repairs == (Repair("PaddedUnknown", 3),)


def test_parse_unmapped_token_is_logged():
    out = parse_label_vector("[sleeping]", 1)
    assert out.labels == (U,)
    assert out.repairs == (Repair("Unmapped", "sleeping"),)


def test_parse_quoted_python_list():
    assert parse_label_vector("```python\n['Freezing', \"Fleeing\"]\n```", 2).labels == (F, FL)


def test_parse_bytes_input():
    assert parse_label_vector(b"[Fleeing]\xff", 1).labels == (FL,)


def test_parse_rejects_zero():
    with pytest.raises(ValueError):
        parse_label_vector("[Freezing]", 0)


label_vectors = st.lists(st.sampled_from(list(BehaviorLabel)), min_size=1, max_size=64)
prose = st.text(alphabet=st.characters(blacklist_characters="[]"), max_size=60)


@given(label_vectors)
def test_round_trip(v):
    out = parse_label_vector(canonical_format(v), len(v))
    assert list(out.labels) == v
    assert out.clean


@given(label_vectors, prose, prose)
def test_surrounding_prose_does_not_change_labels(v, before, after):
    out = parse_label_vector(before + canonical_format(v) + after, len(v))
    assert list(out.labels) == v


@given(st.one_of(st.text(max_size=200), st.binary(max_size=200)), st.integers(min_value=1, max_value=80))
def test_totality(raw, n):
    out = parse_label_vector(raw, n)
    assert len(out.labels) == n
    assert out.clean == (not out.repairs)
