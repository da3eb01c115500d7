"""
Unit tests for the chat gateway: prompts, parsers, transports and retries
"""
from pathlib import Path
from unittest.mock import Mock

import numpy as np
import pytest
from PIL import Image

from egoqa.errors import (
    Exhausted,
    FixtureMissing,
    MalformedResponse,
    MissingInput,
    TransientTransportError,
)
from egoqa.tools.llm_gateway import (
    ImagePart,
    MockTransport,
    PromptKind,
    RecordingTransport,
    RetryPolicy,
    TextPart,
    build_prompt,
    chat,
    chat_many,
    make_transport,
    merge_group_lists,
    parse_comprehension_qa,
    parse_object_list,
    parse_referring_expressions,
    split_frame_groups,
)
from egoqa.tools.prompt_loader import PromptLoader
from egoqa.tools.scoring import LLMJudge


@pytest.fixture
def images(tmp_path):
    """Eight small distinct PNG files"""
    paths = []
    for i in range(8):
        path = tmp_path / f"img_{i}.png"
        Image.fromarray(np.full((4, 4, 3), i * 20, dtype=np.uint8)).save(path)
        paths.append(path)
    return paths


def judge_request(**overrides):
    inputs = dict(question="Which is closer?", ground_truth="the mug", prediction="the lamp")
    inputs.update(overrides)
    return build_prompt(PromptKind.JUDGE_BINARY, **inputs)


def fixed_retry(request):
    return request.model_copy(update={"retry": RetryPolicy(max_attempts=5, base_delay_s=1.0, factor=2.0)})


class TestBuildPrompt:
    """Tests for per-kind prompt construction"""

    def test_object_list(self, images):
        """System instruction then eight frames"""
        request = build_prompt(PromptKind.OBJECT_LIST, frames=images)

        assert [m.role for m in request.messages] == ["system", "user"]
        assert "maximum of 20 objects" in request.messages[0].parts[0].text
        assert all(isinstance(p, ImagePart) for p in request.messages[1].parts)
        assert request.part_count == 9

    def test_object_list_needs_eight_frames(self, images):
        """Any other frame count is rejected"""
        with pytest.raises(MissingInput):
            build_prompt(PromptKind.OBJECT_LIST, frames=images[:7])

    def test_caption_layout(self, images):
        """Crop text, four crops, bbox text, four highlights, task text"""
        request = build_prompt(PromptKind.CAPTION, images=images)
        parts = request.messages[0].parts

        kinds = ["text" if isinstance(p, TextPart) else "image" for p in parts]
        assert kinds == ["text"] + ["image"] * 4 + ["text"] + ["image"] * 4 + ["text"]
        assert "crop" in parts[0].text
        assert "bounding box" in parts[5].text
        assert [p.path for p in parts if isinstance(p, ImagePart)] == images
        assert "detailed description" in parts[-1].text

    def test_comprehension_uses_object_placeholder(self, images):
        """Comprehension QA asks for <object> questions"""
        request = build_prompt(PromptKind.COMPREHENSION_QA, images=images)
        assert "<object>" in request.messages[0].parts[-1].text

    def test_missing_image_file(self, images, tmp_path):
        """A cue image that does not exist is a missing input"""
        with pytest.raises(MissingInput):
            build_prompt(PromptKind.CAPTION, images=images[:7] + [tmp_path / "gone.png"])

    def test_referring_expr(self):
        """QA pairs are listed in the prompt"""
        request = build_prompt(PromptKind.REFERRING_EXPR, qa_pairs=[("What color is <object>?", "Red.")])
        text = request.messages[0].parts[0].text
        assert "Question: What color is <object>?" in text
        assert "Answer: Red." in text

    def test_referring_expr_needs_pairs(self):
        """An empty QA list is rejected"""
        with pytest.raises(MissingInput):
            build_prompt(PromptKind.REFERRING_EXPR, qa_pairs=[])

    def test_judge(self):
        """Judge prompts are deterministic and short"""
        request = judge_request()
        text = request.messages[0].parts[0].text
        assert request.temperature == 0.0
        assert request.max_tokens == 8
        assert "Reference answer: the mug" in text
        assert "previous reply" not in text

    def test_judge_missing_prediction(self):
        """Judges need all three inputs"""
        with pytest.raises(MissingInput):
            build_prompt(PromptKind.JUDGE_OPEN, question="q", ground_truth="gt")

    def test_refine_keeps_references(self):
        """Refinement lists the references to keep verbatim"""
        request = build_prompt(PromptKind.REFINE_QUESTION, question="How far is the mug?", keep=["the mug"])
        text = request.messages[0].parts[0].text
        assert '"the mug"' in text
        assert text.rstrip().endswith("Respond with only the rewritten question.")

    def test_digest_stable(self, images):
        """Equal requests share a digest; different image bytes change it"""
        a = build_prompt(PromptKind.CAPTION, images=images)
        b = build_prompt(PromptKind.CAPTION, images=images)
        assert a.digest() == b.digest()

        Image.fromarray(np.full((4, 4, 3), 255, dtype=np.uint8)).save(images[0])
        assert build_prompt(PromptKind.CAPTION, images=images).digest() != a.digest()


class TestParsers:
    """Tests for response post-processing"""

    def test_object_list(self):
        """Lowercase, no wall/floor, no duplicates, no part-of phrases"""
        raw = "Chair; chair cushion; Wall; table; table; floor; lamp."
        assert parse_object_list(raw) == ["chair", "table", "lamp"]

    def test_object_list_cap(self):
        """At most twenty names are kept"""
        raw = "; ".join(f"object{i}" for i in range(30))
        assert len(parse_object_list(raw)) == 20

    def test_object_list_idempotent(self):
        """Parsing an already parsed list changes nothing"""
        vocabulary = ["chair", "chair cushion", "Table", "table lamp", "wall", "floor", "mug", "Mug.",
                      "sofa", "sofa bed", "  lamp ", "book", "bookshelf", "tv", "tv stand", ""]
        rng = np.random.default_rng(7)
        for _ in range(200):
            raw = "; ".join(rng.choice(vocabulary, size=int(rng.integers(0, 40))))
            once = parse_object_list(raw)
            assert parse_object_list("; ".join(once)) == once

    def test_merge_groups(self):
        """Odd group first, then new names from the even group"""
        assert merge_group_lists(["chair", "lamp"], ["lamp", "sofa"]) == ["chair", "lamp", "sofa"]

    def test_split_frame_groups(self):
        """Sixteen frames split alternately into two groups of eight"""
        odd, even = split_frame_groups(160)
        assert len(odd) == len(even) == 8
        assert odd[0] == 0 and even[-1] == 159
        assert not set(odd) & set(even)
        assert split_frame_groups(0) == ([], [])

    def test_comprehension_qa(self):
        """Question/Answer blocks become pairs; unanswered questions are dropped"""
        raw = (
            "1. Question: What color is the <object>?\n"
            "Answer: Mainly red.\n"
            "Question: Is it broken?\n"
            "Question: What shape is the <object>?\n"
            "Answer: Round.\n"
        )
        assert parse_comprehension_qa(raw) == [
            ("What color is the <object>?", "Mainly red."),
            ("What shape is the <object>?", "Round."),
        ]

    def test_referring_expressions(self):
        """Both blocks are returned, simple first"""
        raw = "[simple expression]\nthe red mug on the desk\n\n[complex expression]\nthe cup you would fill with coffee\n"
        assert parse_referring_expressions(raw) == (
            "the red mug on the desk",
            "the cup you would fill with coffee",
        )

    def test_referring_missing_block(self):
        """A response without both blocks is malformed"""
        with pytest.raises(MalformedResponse):
            parse_referring_expressions("[simple expression]\nthe red mug\n")


class TestChat:
    """Tests for the retrying chat call"""

    def test_exhausted_after_backoff(self):
        """Five transient failures sleep 1, 2, 4, 8 then give up"""
        transport = Mock()
        transport.send.side_effect = TransientTransportError("503")
        sleep = Mock()

        with pytest.raises(Exhausted):
            chat(fixed_retry(judge_request()), transport, sleep=sleep)

        assert transport.send.call_count == 5
        assert [c.args[0] for c in sleep.call_args_list] == [1.0, 2.0, 4.0, 8.0]

    def test_recovers(self):
        """One transient failure then success"""
        transport = Mock()
        transport.send.side_effect = [TransientTransportError("timeout"), "1"]
        sleep = Mock()

        assert chat(fixed_retry(judge_request()), transport, sleep=sleep) == "1"
        sleep.assert_called_once_with(1.0)

    def test_empty_response(self):
        """Blank responses are malformed and not retried"""
        transport = Mock()
        transport.send.return_value = "   "
        with pytest.raises(MalformedResponse):
            chat(judge_request(), transport, sleep=Mock())
        assert transport.send.call_count == 1

    def test_retry_delay(self):
        """Delays grow geometrically"""
        policy = RetryPolicy(max_attempts=5, base_delay_s=0.5, factor=3.0)
        assert [policy.delay(i) for i in range(3)] == [0.5, 1.5, 4.5]

    def test_chat_many_order_and_errors(self):
        """Results follow request order; failures are returned in place"""
        requests = [judge_request(prediction=p) for p in ("a", "b", "c")]
        transport = MockTransport()
        transport.add(requests[0], "1")
        transport.add(requests[2], "0")

        results = chat_many(requests, transport, max_in_flight=2, sleep=Mock())

        assert results[0] == "1"
        assert isinstance(results[1], FixtureMissing)
        assert results[2] == "0"


class TestTransports:
    """Tests for mock, recording and factory transports"""

    def test_mock_missing_fixture(self):
        """Unrecorded requests fail and are logged in calls"""
        transport = MockTransport()
        request = judge_request()
        with pytest.raises(FixtureMissing):
            transport.send(request)
        assert transport.calls == [request.digest()]

    def test_record_then_replay(self, tmp_path):
        """Recorded exchanges replay offline"""
        inner = MockTransport()
        request = judge_request()
        inner.add(request, "1")
        fixtures = tmp_path / "fixtures" / "judge.jsonl"

        assert RecordingTransport(inner, fixtures).send(request) == "1"

        replay = MockTransport.from_jsonl(fixtures)
        assert replay.send(request) == "1"

    def test_offline_factory(self, tmp_path):
        """Offline runs always get a mock transport"""
        assert isinstance(make_transport(False), MockTransport)
        transport = make_transport(False, fixtures=tmp_path / "none.jsonl")
        assert isinstance(transport, MockTransport)
        assert transport.fixtures == {}


class TestPromptLoader:
    """Tests for template loading"""

    def test_unknown_template(self):
        """Unknown names are a missing input"""
        with pytest.raises(MissingInput, match="no_such_prompt"):
            PromptLoader.load("no_such_prompt")

    def test_strict_variables(self):
        """Rendering without a required value fails instead of printing blanks"""
        with pytest.raises(MissingInput, match="judge_binary"):
            PromptLoader.render("judge_binary", question="q", ground_truth="gt")

    def test_render(self):
        """A fully supplied template renders its values"""
        text = PromptLoader.render("object_list", max_objects=5)
        assert "maximum of 5 objects" in text


GOLDEN_PROMPTS = Path(__file__).parent / "golden_tests" / "prompts"


def render_request(request) -> str:
    """One line per role header or image, text parts verbatim"""
    lines = []
    for message in request.messages:
        lines.append(f"[{message.role}]")
        for part in message.parts:
            lines.append(part.text if isinstance(part, TextPart) else f"<image {Path(part.path).name}>")
    return "\n".join(lines) + "\n"


def assert_matches_golden(request, name: str):
    golden = (GOLDEN_PROMPTS / f"{name}.txt").read_bytes()
    assert render_request(request).encode("utf-8") == golden


OPEN_JUDGE_INPUTS = dict(
    question="What is the mug made of?",
    ground_truth="White ceramic with a glossy glaze.",
    prediction="It is a ceramic mug.",
)
BINARY_JUDGE_INPUTS = dict(
    question="Which is closer to you, the mug or the lamp?",
    ground_truth="the mug",
    prediction="The mug is closer.",
)


class TestPromptGoldens:
    """Every prompt kind renders byte-for-byte as its golden file"""

    def test_object_list(self, images):
        assert_matches_golden(build_prompt(PromptKind.OBJECT_LIST, frames=images), "object_list")

    def test_caption(self, images):
        assert_matches_golden(build_prompt(PromptKind.CAPTION, images=images), "caption")

    def test_comprehension(self, images):
        assert_matches_golden(build_prompt(PromptKind.COMPREHENSION_QA, images=images), "comprehension_qa")

    def test_referring_expr(self):
        pairs = [
            ("What color is the <object>?", "Mainly white."),
            ("Where is the <object>?", "On the desk next to the lamp."),
        ]
        assert_matches_golden(build_prompt(PromptKind.REFERRING_EXPR, qa_pairs=pairs), "referring_expr")

    def test_judge_open(self):
        assert_matches_golden(build_prompt(PromptKind.JUDGE_OPEN, **OPEN_JUDGE_INPUTS), "judge_open")

    def test_judge_binary(self):
        assert_matches_golden(build_prompt(PromptKind.JUDGE_BINARY, **BINARY_JUDGE_INPUTS), "judge_binary")

    def test_judge_binary_reask(self):
        request = build_prompt(PromptKind.JUDGE_BINARY, previous="maybe", **BINARY_JUDGE_INPUTS)
        assert_matches_golden(request, "judge_binary_reask")

    def test_refine_question(self):
        request = build_prompt(
            PromptKind.REFINE_QUESTION,
            question="Is the mug closer to you than the lamp?",
            keep=["the mug", "the lamp"],
        )
        assert_matches_golden(request, "refine_question")

    def test_every_kind_has_a_golden(self):
        """No prompt kind ships without a golden file"""
        names = {p.stem for p in GOLDEN_PROMPTS.glob("*.txt")}
        assert {kind.value for kind in PromptKind} <= names

    def test_rendering_is_repeatable(self, images):
        """Two renders of the same inputs are identical"""
        first = render_request(build_prompt(PromptKind.CAPTION, images=images))
        assert render_request(build_prompt(PromptKind.CAPTION, images=images)) == first

    def test_open_judge_replays_golden_score(self):
        """The recorded open-text judge reply grades the golden answer 0.6"""
        transport = MockTransport()
        transport.add(build_prompt(PromptKind.JUDGE_OPEN, **OPEN_JUDGE_INPUTS), "0.6")

        judge = LLMJudge(transport, sleep=Mock())

        assert judge.open(**OPEN_JUDGE_INPUTS) == 0.6
        assert len(transport.calls) == 1
