#!/usr/bin/env python3
"""Regenerates crates/core/fixtures from the task table below."""

import json
import pathlib
import re

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"

FORMAT_TAIL = (
    "Please output the organized data as a single Markdown table, do not split into multiple "
    "markdown tables, each cell must be filled according to the column requirements, no omissions "
    "allowed, output in English.\n\nThe column names are as follows:\n{cols}\n\n"
    "Do not ask me any questions, just output the result in the format:\n"
    "```markdown\n{{data_content}}\n```\n"
    "Output only the table header and rows; do not add analysis, commentary, or any additional text."
)

# id, intro, columns, key, rows, per-entity doc title, sentence template
TASKS = [
    (
        "nz_north_parks",
        "I need the national parks of New Zealand that lie on the North Island, as designated at the end of 2017.",
        ["National Park", "Establish Year", "Total Area (km2)"],
        ["National Park"],
        [
            ["Tongariro National Park", "1887", "786"],
            ["Egmont National Park", "1900", "342"],
            ["Whanganui National Park", "1986", "742"],
        ],
        "{0} is a national park on the North Island of New Zealand. It was established in {1} and covers {2} square kilometres.",
    ),
    (
        "ivy_colonial",
        "List the Ivy League universities founded before 1750.",
        ["University", "Founded", "City"],
        ["University"],
        [
            ["Harvard University", "1636", "Cambridge"],
            ["Yale University", "1701", "New Haven"],
            ["University of Pennsylvania", "1740", "Philadelphia"],
            ["Princeton University", "1746", "Princeton"],
        ],
        "{0} is a private Ivy League research university. It was founded in {1} and is located in {2}.",
    ),
    (
        "inner_planets",
        "List the four inner planets of the Solar System with their number of known moons and orbital period.",
        ["Planet", "Moons", "Orbital Period (days)"],
        ["Planet"],
        [
            ["Mercury", "0", "88"],
            ["Venus", "0", "225"],
            ["Earth", "1", "365"],
            ["Mars", "2", "687"],
        ],
        "{0} is one of the inner planets of the Solar System. It has {1} known moons and an orbital period of {2} days.",
    ),
    (
        "noble_gases",
        "List the stable noble gases with their chemical symbol and atomic number.",
        ["Element", "Symbol", "Atomic Number"],
        ["Element"],
        [
            ["Helium", "He", "2"],
            ["Neon", "Ne", "10"],
            ["Argon", "Ar", "18"],
            ["Krypton", "Kr", "36"],
            ["Xenon", "Xe", "54"],
        ],
        "{0} is a noble gas. Its chemical symbol is {1} and its atomic number is {2}.",
    ),
    (
        "great_lakes",
        "List the five Great Lakes of North America with their surface area.",
        ["Lake", "Surface Area (km2)"],
        ["Lake"],
        [
            ["Lake Superior", "82,100"],
            ["Lake Michigan", "58,000"],
            ["Lake Huron", "59,600"],
            ["Lake Erie", "25,700"],
            ["Lake Ontario", "18,960"],
        ],
        "{0} is one of the Great Lakes of North America. Its surface area is {1} square kilometres.",
    ),
    (
        "beatles",
        "List the four members of the Beatles in their best-known line-up with their birth year.",
        ["Member", "Birth Year"],
        ["Member"],
        [
            ["John Lennon", "1940"],
            ["Paul McCartney", "1942"],
            ["George Harrison", "1943"],
            ["Ringo Starr", "1940"],
        ],
        "{0} was a member of the Beatles. He was born in {1}.",
    ),
    (
        "apollo_landings",
        "List the crewed Apollo missions that landed on the Moon, with the landing year and landing site.",
        ["Mission", "Year", "Landing Site"],
        ["Mission"],
        [
            ["Apollo 11", "1969", "Sea of Tranquility"],
            ["Apollo 12", "1969", "Ocean of Storms"],
            ["Apollo 14", "1971", "Fra Mauro"],
            ["Apollo 15", "1971", "Hadley Rille"],
            ["Apollo 16", "1972", "Descartes Highlands"],
            ["Apollo 17", "1972", "Taurus Littrow"],
        ],
        "{0} was a crewed Apollo mission that landed on the Moon in {1}. Its landing site was {2}.",
    ),
    (
        "scandinavian_capitals",
        "List the Scandinavian countries with their capital city.",
        ["Country", "Capital"],
        ["Country"],
        [
            ["Denmark", "Copenhagen"],
            ["Norway", "Oslo"],
            ["Sweden", "Stockholm"],
        ],
        "{0} is a Scandinavian country. Its capital city is {1}.",
    ),
]

DISTRACTORS = [
    ("wiki/Kiwi", "Kiwi (bird)", "The kiwi is a flightless bird endemic to New Zealand. Kiwi lay very large eggs relative to their body size."),
    ("wiki/Ivy", "Ivy", "Ivy is a genus of evergreen climbing plants native to Europe and Asia. It is often grown on old university buildings."),
    ("wiki/Pluto", "Pluto", "Pluto is a dwarf planet in the Kuiper belt. It was reclassified from planet to dwarf planet in 2006."),
    ("wiki/Oxygen", "Oxygen", "Oxygen is a chemical element with symbol O and atomic number 8. It is not a noble gas."),
    ("wiki/Abbey_Road", "Abbey Road", "Abbey Road is an album by the Beatles, released in 1969 and recorded at Abbey Road Studios in London."),
]


def doc_id(name):
    return "wiki/" + re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


def md_table(cols, rows):
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join(["---"] * len(cols)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def tool_call(name, args):
    return "<tool_call>\n" + json.dumps({"name": name, "arguments": args}) + "\n</tool_call>"


def build():
    corpus = []
    tasks = []
    entries = []
    for tid, intro, cols, key, rows, sentence in TASKS:
        for r in rows:
            corpus.append({"id": doc_id(r[0]), "title": r[0], "text": sentence.format(*r)})
        question = intro + " " + FORMAT_TAIL.format(cols=", ".join(cols))
        answer = md_table(cols, rows)
        tasks.append({"id": tid, "question": question, "answer": answer, "unique_columns": key})

        half = (len(rows) + 1) // 2
        groups = [rows[:half], rows[half:]]
        prompts = [
            f"Find the {', '.join(c.lower() for c in cols[1:])} of: {'; '.join(r[0] for r in g)}."
            for g in groups
        ]
        entries.append({
            "role": "lead", "turn": 1, "task": question,
            "text": "<think>The entities split naturally into two groups; each subagent covers one.</think>\n"
                    "I will delegate the lookups.\n"
                    + tool_call("create_sub_agents", {"sub_agents": [{"prompt": p} for p in prompts]}),
        })
        for g, p in zip(groups, prompts):
            entries.append({
                "role": "subagent", "turn": 1, "task": p,
                "text": "<think>Search for the entities first.</think>\n"
                        + tool_call("search", {"query": " ".join(r[0] for r in g)}),
            })
            entries.append({
                "role": "subagent", "turn": 2, "task": p,
                "text": "<think>Open each page.</think>\n"
                        + "\n".join(tool_call("access", {"url": doc_id(r[0]), "query": cols[1]}) for r in g),
            })
            facts = "\n".join(
                "- " + r[0] + ": " + "; ".join(f"{c} {v}" for c, v in zip(cols[1:], r[1:])) for r in g
            )
            entries.append({
                "role": "subagent", "turn": 3, "task": p,
                "text": "<think>The pages confirm every value.</think>\nFindings:\n" + facts,
            })

        wrong = [list(r) for r in rows]
        wrong[-1][-1] = "unknown"
        fenced = lambda t: "<think>Compiling the subagent findings.</think>\n```markdown\n" + t + "\n```"
        entries.append({
            "role": "lead", "turn": 2, "task": question,
            "alternatives": [
                {"text": fenced(answer)},
                {"text": fenced(md_table(cols, wrong))},
                {"text": fenced(md_table(cols, rows[:-1]))},
                {"text": "<think>Compiling.</think>\nHere are the results: " + "; ".join(r[0] for r in rows)},
            ],
        })

    corpus += [{"id": i, "title": t, "text": x} for i, t, x in DISTRACTORS]
    return corpus, tasks, {"entries": entries}


FIG7_QUESTION = (
    "I am conducting research on the conservation geography of New Zealand and need a structured "
    "overview of its National Parks system. I need you to identify all National Parks in New Zealand "
    "that were active and designated as of December 31, 2017, excluding any parks disestablished "
    "before that date, and compile their details. "
    + FORMAT_TAIL.format(cols="National Park, Establish Year, Total Area (km2), Primary Island, Administering Regional Councils")
)
FIG7_COLS = ["National Park", "Establish Year", "Total Area (km2)", "Primary Island", "Administering Regional Councils"]
FIG7_ROWS = [
    ["Tongariro National Park", "1887", "786", "North Island", "Manawatū-Whanganui"],
    ["Egmont National Park", "1900", "342", "North Island", "Taranaki"],
    ["Arthur's Pass National Park", "1929", "1,185", "South Island", "Canterbury, West Coast"],
    ["Abel Tasman National Park", "1942", "237", "South Island", "Tasman"],
    ["Fiordland National Park", "1952", "12,607", "South Island", "Southland"],
    ["Aoraki/Mount Cook National Park", "1953", "707", "South Island", "Canterbury"],
    ["Nelson Lakes National Park", "1956", "1,019", "South Island", "Tasman"],
    ["Westland Tai Poutini National Park", "1960", "1,320", "South Island", "West Coast"],
    ["Mount Aspiring National Park", "1964", "3,562", "South Island", "Otago, West Coast"],
    ["Whanganui National Park", "1986", "742", "North Island", "Manawatū-Whanganui"],
    ["Paparoa National Park", "1987", "430", "South Island", "West Coast"],
    ["Kahurangi National Park", "1996", "4,520", "South Island", "Tasman, West Coast"],
    ["Rakiura National Park", "2002", "1,400", "Stewart Island", "Southland"],
]


def gen_log():
    fig7 = md_table(FIG7_COLS, FIG7_ROWS)
    key = '<unique_columns>["National Park"]</unique_columns>'
    fence = lambda t: "```markdown\n" + t + "\n```\n"
    two = md_table(["City", "Country"], [["Oslo", "Norway"], ["Bergen", "Norway"]])
    a = md_table(["Name", "Score"], [["a", "1"], ["b", "2"], ["c", "3"]])
    b = md_table(["Name", "Score"], [["a", "1"], ["b", "9"], ["d", "3"]])
    ck = '<unique_columns>["City"]</unique_columns>'
    nk = '<unique_columns>["Name"]</unique_columns>'
    return [
        {"id": "fig7", "question": FIG7_QUESTION, "response_a": fence(fig7) + key, "response_b": fence(fig7) + key},
        {"id": "two_rows", "question": "q", "response_a": fence(two) + ck, "response_b": fence(two) + ck},
        {"id": "disagree", "question": "q", "response_a": fence(a) + nk, "response_b": fence(b) + nk},
        {"id": "no_table", "question": "q", "response_a": fence(a) + nk, "response_b": "Sorry, no data."},
    ]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    corpus, tasks, script = build()
    with open(OUT / "corpus.jsonl", "w") as f:
        for d in corpus:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")
    (OUT / "tasks.json").write_text(json.dumps(tasks, indent=2, ensure_ascii=False) + "\n")
    (OUT / "script.json").write_text(json.dumps(script, indent=2, ensure_ascii=False) + "\n")
    fig7 = [{"question": FIG7_QUESTION, "answer": md_table(FIG7_COLS, FIG7_ROWS), "unique_columns": ["National Park"]}]
    (OUT / "fig7.json").write_text(json.dumps(fig7, indent=2, ensure_ascii=False) + "\n")
    with open(OUT / "gen_log.jsonl", "w") as f:
        for r in gen_log():
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
