import pytest
from hypothesis import given, strategies as st

from tableprompt import tasks as T
from tableprompt.serialize import (
    ALPACA,
    INPUT_FIRST,
    INSTRUCTION_FIRST,
    MARKERS,
    VICUNA,
    TemplateError,
    TemplateRegistry,
    assemble_prompt,
    render_instruction,
    render_prompt,
    render_template,
    resolve_prologue,
    serialize_metadata,
    serialize_rows,
)
from tableprompt.table import Table, TableMetadata, TaskInstance
from tableprompt.tokens import count_tokens

from golden import golden_response, goldens

GOLDEN = goldens()


def test_metadata_full():
    meta = TableMetadata("1958 Nippon Professional Baseball season", "Central League", "Pitching leaders")
    assert serialize_metadata(meta) == (
        "[TLE] The Wikipedia page is about 1958 Nippon Professional Baseball season. "
        "The Wikipedia section is about Central League. The table caption is Pitching leaders."
    )


def test_metadata_empty_and_caption_only():
    assert serialize_metadata(TableMetadata()) == ""
    assert serialize_metadata(TableMetadata(caption="tony lema")) == "[TLE] The table caption is about tony lema."
    assert serialize_metadata(TableMetadata(page_title="p")) == "[TLE] The Wikipedia page is about p."


def test_metadata_unknown_style():
    with pytest.raises(TemplateError):
        serialize_metadata(TableMetadata(caption="x"), style="fancy")


def test_rows_examples():
    assert serialize_rows(["stat", "player"], [["Wins", "Masaichi Kaneda"]]) == (
        "[TAB] col: | stat | player | [SEP] row 1: | Wins | Masaichi Kaneda |"
    )
    assert serialize_rows(["a", "b"], []) == "[TAB] col: | a | b |"
    assert serialize_rows(["a"], [["x"]], start_index=4) == "[TAB] col: | a | [SEP] row 5: | x |"


def test_rows_escape_pipes_and_whitespace():
    assert serialize_rows(["a|b"], [["x | y\nz"]]) == "[TAB] col: | a/b | [SEP] row 1: | x / y z |"


def _cta():
    table = Table("t", ("name", "team"), (("Ann", "Reds"), ("Bo", "Blues"), ("Cy", "Reds"), ("Di", "Jays")))
    return table, TaskInstance(T.COLUMN_TYPE, "t", {"column": 0}, ("people.person",), id="c")


def test_missing_candidates_is_an_error():
    table, inst = _cta()
    with pytest.raises(TemplateError):
        render_instruction(inst, [], table=table)
    with pytest.raises(TemplateError):
        render_instruction(inst, None, table=table)


def test_cta_entities_start_at_anchor():
    table, inst = _cta()
    _, question = render_instruction(inst, ["a", "b"], table=table)
    assert "entities: <Ann>, <Bo>, <Cy>, etc" in question
    _, question = render_instruction(inst, ["a", "b"], table=table, rows=range(0, 4), anchor=2)
    assert "entities: <Cy>, <Di>, etc" in question


def test_unfilled_placeholder_is_an_error():
    with pytest.raises(TemplateError, match="unfilled"):
        render_template("table-dialogue")
    instruction, question = render_template("table-dialogue", history="hi")
    assert question.startswith("The dialogue history is: <hi>.")


def test_registry_covers_every_task_and_extras():
    registry = TemplateRegistry()
    for task in T.TASKS:
        assert registry[task].instruction
    for extra in ("hybrid-qa", "table-dialogue", "cell-description", "feverous", "wikisql", "wikitq"):
        assert registry[extra].question
    with pytest.raises(TemplateError):
        registry["poetry"]
    with pytest.raises(TemplateError):
        TemplateRegistry({T.COLUMN_TYPE: registry[T.COLUMN_TYPE]})


def test_registry_from_directory(tmp_path):
    (tmp_path / "fact-verification.question.txt").write_text("Claim: <{statement}>. True?\n")
    registry = TemplateRegistry.from_directory(tmp_path)
    inst = TaskInstance(T.FACT_VERIFICATION, "t", {"statement": "s"}, ("entailed",))
    _, question = render_instruction(inst, None, registry)
    assert question == "Claim: <s>. True?"
    assert registry[T.COLUMN_TYPE] == TemplateRegistry()[T.COLUMN_TYPE]
    (tmp_path / "fact-verification.question.txt").write_text("Claim: {statement")
    with pytest.raises(TemplateError):
        TemplateRegistry.from_directory(tmp_path)


def test_prologues():
    assert assemble_prompt(ALPACA, "i", "x", "q").startswith("Below is an instruction that describes a task")
    assert assemble_prompt(resolve_prologue("vicuna"), "i", "x", "q").startswith("A chat between a curious user")
    assert resolve_prologue("vicuna") == VICUNA
    assert resolve_prologue("Custom lead.") == "Custom lead."


def test_empty_input_block_keeps_marker():
    text = assemble_prompt(ALPACA, "i", "", "q")
    assert "### Input:\n\n\n### Question:" in text
    assert text.endswith("### Response:")


def test_unknown_layout():
    with pytest.raises(ValueError):
        assemble_prompt("", "i", "x", "q", layout="sideways")


blocks = st.text(alphabet=st.sampled_from(list("ab #|:[]\n")), max_size=30)


def _order(text):
    return [text.index(m) for m in MARKERS]


@given(blocks, blocks, blocks)
def test_markers_once_in_layout_order(instruction, input_text, question):
    for layout in (INSTRUCTION_FIRST, INPUT_FIRST):
        text = assemble_prompt(ALPACA, instruction.replace("###", ""), input_text.replace("###", ""),
                               question.replace("###", ""), layout)
        for marker in MARKERS:
            assert text.count(marker) == 1
        pos = _order(text)
        expected = [pos[0], pos[1]] if layout == INSTRUCTION_FIRST else [pos[1], pos[0]]
        assert expected[0] < expected[1] < pos[2] < pos[3]


@given(blocks, blocks, blocks)
def test_layout_only_permutes_blocks(instruction, input_text, question):
    a = assemble_prompt(ALPACA, instruction, input_text, question, INSTRUCTION_FIRST)
    b = assemble_prompt(ALPACA, instruction, input_text, question, INPUT_FIRST)
    ins, inp = f"### Instruction:\n{instruction}", f"### Input:\n{input_text}"
    assert a == "\n\n".join([ALPACA, ins, inp, f"### Question:\n{question}", "### Response:"])
    assert b == "\n\n".join([ALPACA, inp, ins, f"### Question:\n{question}", "### Response:"])
    assert sorted(a) == sorted(b)


@pytest.mark.parametrize("task", T.TASKS)
def test_token_count_is_sum_of_blocks(task):
    case = GOLDEN[task]
    rec = render_prompt(case.instance, case.table, None, case.subset)
    parts = [ALPACA, "### Instruction:", rec.instruction, "### Input:", rec.input, "### Question:", rec.question, "### Response:"]
    total = count_tokens(rec.assembled)
    assert abs(total - sum(count_tokens(p) for p in parts)) <= len(parts) - 1


@pytest.mark.parametrize("task", T.TASKS)
def test_golden_prompts(task):
    case = GOLDEN[task]
    rec = render_prompt(case.instance, case.table, None, case.subset)
    assert rec.instruction == case.instruction
    assert rec.input.startswith(case.input_prefix)
    assert rec.question.startswith(case.question_prefix)
    assert rec.question.endswith(case.question_suffix)
    assert golden_response(case) == case.response


def test_population_inputs_verbatim():
    case = GOLDEN[T.ROW_POPULATION]
    rec = render_prompt(case.instance, case.table, None, case.subset)
    assert rec.input == case.input_prefix
    assert "[TAB]" not in rec.input
    case = GOLDEN[T.SCHEMA_AUGMENTATION]
    assert render_prompt(case.instance, case.table, None, case.subset).input == case.input_prefix


def test_fact_verification_question():
    case = GOLDEN[T.FACT_VERIFICATION]
    _, question = render_instruction(case.instance, None, table=case.table)
    assert question.endswith("Is it entailed or refuted by the table above?")


def test_prompt_record_json_omits_assembled():
    case = GOLDEN[T.HIERARCHICAL_QA]
    rec = render_prompt(case.instance, case.table, None, response="142.3.")
    assert set(rec.to_json()) == {"instruction", "input", "question", "response"}
